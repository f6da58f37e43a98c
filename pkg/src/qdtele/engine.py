"""Numerical teleportation channel and its closed-form process matrix."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import quantum as q
from .bsm import BELL_ORDER, BsmSpec, Setup, bell_conditionals, contrast_coefficients
from .quantum import BellLabel, PauliLabel
from .source import SourceParams, cascade_density_matrix, damping_factors, g_factors

CLASSICAL_LIMIT = 2.0 / 3.0
BRANCH_EPS = 1e-14
STANDARD_INPUTS = ("H", "D", "R")
SIX_INPUTS = ("H", "V", "D", "A", "R", "L")

_BRANCH_PROJECTORS = {b: np.kron(q.bell_projector(b), np.eye(2)) for b in BELL_ORDER}


class TeleportError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    source: SourceParams = field(default_factory=SourceParams)
    bsm: BsmSpec = field(default_factory=BsmSpec)
    pair_override: np.ndarray | None = None

    def __post_init__(self):
        if self.pair_override is not None:
            rho = np.asarray(self.pair_override, dtype=complex)
            if rho.shape != (4, 4):
                raise TeleportError("pair_override must be a 4x4 density matrix")
            try:
                q.check_density_matrix(rho, name="pair_override")
            except ValueError as exc:
                raise TeleportError(str(exc)) from exc
            object.__setattr__(self, "pair_override", rho)

    def pair_matrix(self) -> np.ndarray:
        if self.pair_override is not None:
            return self.pair_override
        return cascade_density_matrix(self.source)

    def with_visibility(self, v: float) -> "Scenario":
        return replace(self, source=replace(self.source, v=v))

    def with_setup(self, setup: Setup | str, tagged: BellLabel | str = BellLabel.PSI_MINUS) -> "Scenario":
        return replace(self, bsm=BsmSpec(Setup(setup), BellLabel(tagged)))

    @property
    def ideal(self) -> PauliLabel:
        return self.bsm.tagged.pauli


@dataclass(frozen=True)
class TeleportResult:
    rho_out: np.ndarray
    fidelity: float
    expected: np.ndarray


def _as_ket(state: str | np.ndarray) -> np.ndarray:
    if isinstance(state, str):
        return q.polarization_state(state)
    psi = np.asarray(state, dtype=complex)
    if psi.shape != (2,) or abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise ValueError("input must be a normalized single-qubit ket")
    return psi


def branch_states(psi: np.ndarray, pair: np.ndarray) -> dict[BellLabel, tuple[float, np.ndarray]]:
    """Probability ``N^i`` and normalized XX_L state for each Bell projection."""
    rho = q.tensor(q.ket_to_dm(psi), pair)
    out = {}
    for b in BELL_ORDER:
        proj = _BRANCH_PROJECTORS[b]
        branch = proj @ rho @ proj
        n = float(np.real(np.trace(branch)))
        if n < BRANCH_EPS:
            out[b] = (0.0, np.zeros((2, 2), dtype=complex))
        else:
            out[b] = (n, q.partial_trace(branch / n, [2, 2, 2], keep=[2]))
    return out


def teleport(state: str | np.ndarray, scenario: Scenario) -> TeleportResult:
    """Teleport one pure polarization qubit through ``scenario``.

    Each Bell-projected branch is normalized on its own and the branches are
    mixed with the setup's conditional probabilities; branches the pair
    cannot produce are dropped and the remaining weights renormalized.
    """
    psi = _as_ket(state)
    cond = bell_conditionals(scenario.bsm, scenario.source)
    branches = branch_states(psi, scenario.pair_matrix())
    total = sum(cond[b] for b, (n, _) in branches.items() if n > 0)
    if total <= 0:
        raise TeleportError("no Bell branch with nonzero probability")
    rho_out = sum(cond[b] / total * r for b, (n, r) in branches.items() if n > 0)
    expected = q.pauli(scenario.ideal) @ psi
    return TeleportResult(rho_out, q.fidelity_to_pure(rho_out, expected), expected)


def average_fidelity(scenario: Scenario, inputs: Sequence[str] = STANDARD_INPUTS) -> float:
    return float(np.mean([teleport(s, scenario).fidelity for s in inputs]))


def chi_analytic(scenario: Scenario) -> np.ndarray:
    if scenario.pair_override is not None:
        raise TeleportError("the closed-form process matrix needs the parametric source")
    p = scenario.source
    g = g_factors(p)
    d = damping_factors(p, g)
    c, c_prime = contrast_coefficients(scenario.bsm, p.v)
    corr = c_prime * p.k * g.g_ss
    interf = 2.0 * c * p.k * g.g_hv * d.d_pair * d.d_bsm
    ideal = scenario.ideal.index
    other = PauliLabel.X.index if ideal == PauliLabel.Y.index else PauliLabel.Y.index
    chi = np.zeros((4, 4), dtype=complex)
    chi[0, 0] = chi[3, 3] = (1.0 - corr) / 4.0
    chi[ideal, ideal] = (1.0 + corr + interf) / 4.0
    chi[other, other] = (1.0 + corr - interf) / 4.0
    return chi


def chi_numeric(scenario: Scenario) -> np.ndarray:
    outputs = {s: teleport(s, scenario).rho_out for s in q.PROCESS_INPUTS}
    return q.process_tomography(outputs)


def gate_fidelity(scenario: Scenario, chi: np.ndarray | None = None) -> float:
    chi = chi_numeric(scenario) if chi is None else chi
    return q.average_gate_fidelity(chi, scenario.ideal)


def analytic_average_fidelity(scenario: Scenario) -> float:
    return q.average_gate_fidelity(chi_analytic(scenario), scenario.ideal)


@dataclass(frozen=True)
class SweepRow:
    v: float
    f_bs: float
    f_pbs: float
    f_bs_s0: float
    f_pbs_s0: float
    f_bs_analytic: float
    f_pbs_analytic: float
    f_bs_s0_analytic: float
    f_pbs_s0_analytic: float


@dataclass(frozen=True)
class SweepResult:
    rows: list[SweepRow]
    crossings: dict[str, float | None]


def _sweep_point(template: Scenario, v: float) -> SweepRow:
    base = template.with_visibility(v)
    s0 = replace(base, source=replace(base.source, s_ueV=0.0))
    bs = base.with_setup(Setup.BS)
    pbs = base.with_setup(Setup.PBS)
    bs0 = s0.with_setup(Setup.BS)
    pbs0 = s0.with_setup(Setup.PBS)
    return SweepRow(
        v=v,
        f_bs=average_fidelity(bs),
        f_pbs=average_fidelity(pbs),
        f_bs_s0=average_fidelity(bs0),
        f_pbs_s0=average_fidelity(pbs0),
        f_bs_analytic=analytic_average_fidelity(bs),
        f_pbs_analytic=analytic_average_fidelity(pbs),
        f_bs_s0_analytic=analytic_average_fidelity(bs0),
        f_pbs_s0_analytic=analytic_average_fidelity(pbs0),
    )


def classical_crossing(scenario: Scenario, threshold: float = CLASSICAL_LIMIT) -> float | None:
    """Visibility at which the average fidelity reaches ``threshold``.

    ``None`` if the threshold is not crossed inside [0, 1].
    """

    def f(v: float) -> float:
        return analytic_average_fidelity(scenario.with_visibility(v)) - threshold

    lo, hi = f(0.0), f(1.0)
    if lo >= 0:
        return 0.0
    if hi < 0:
        return None
    return float(brentq(f, 0.0, 1.0, xtol=1e-12))


def sweep_visibility(
    template: Scenario,
    v_min: float = 0.0,
    v_max: float = 1.0,
    steps: int = 101,
    workers: int = 1,
) -> SweepResult:
    """Average fidelity versus HOM visibility for both setups, at S and at S=0.

    Grid points are independent; with ``workers > 1`` they are evaluated in
    a thread pool and collected in grid order.
    """
    if steps < 2:
        raise ValueError("sweep needs at least two grid points")
    grid = np.linspace(v_min, v_max, steps)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda v: _sweep_point(template, float(v)), grid))
    else:
        rows = [_sweep_point(template, float(v)) for v in grid]
    s0 = replace(template, source=replace(template.source, s_ueV=0.0))
    crossings = {
        "bs": classical_crossing(template.with_setup(Setup.BS)),
        "pbs": classical_crossing(template.with_setup(Setup.PBS)),
        "bs_s0": classical_crossing(s0.with_setup(Setup.BS)),
        "pbs_s0": classical_crossing(s0.with_setup(Setup.PBS)),
    }
    return SweepResult(rows, crossings)


def conditional_sweep(template: Scenario, setups: Iterable[Setup] = (Setup.BS, Setup.PBS), steps: int = 101):
    """Rows of ``(setup, V, p_phi+, p_phi-, p_psi+, p_psi-)`` over a V grid."""
    rows = []
    for setup in setups:
        for v in np.linspace(0.0, 1.0, steps):
            sc = template.with_visibility(float(v)).with_setup(setup)
            p = bell_conditionals(sc.bsm, sc.source)
            rows.append((Setup(setup).value, float(v), *(p[b] for b in BELL_ORDER)))
    return rows


def verdict(f_avg: float) -> str:
    if math.isclose(f_avg, CLASSICAL_LIMIT, abs_tol=1e-12) or f_avg < CLASSICAL_LIMIT:
        return "below classical limit 2/3"
    return "above classical limit 2/3"
