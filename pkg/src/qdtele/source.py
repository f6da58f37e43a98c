"""Two-photon polarization state of an imperfect XX-X cascade.

Times are in ns, energies in µeV. ``math.inf`` marks an absent decoherence
process.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .quantum import BellLabel, bell_state, check_density_matrix, fidelity_to_pure

HBAR_UEV_NS = 0.6582119569

DEFAULT_TAU_X_NS = 0.23
DEFAULT_T2_STAR_NS = 1.4


@dataclass(frozen=True)
class SourceParams:
    v: float = 1.0
    s_ueV: float = 0.0
    tau_x_ns: float = DEFAULT_TAU_X_NS
    tau_ss_ns: float = math.inf
    tau_hv_ns: float = math.inf
    t2star_ns: float = math.inf
    k: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.v <= 1.0:
            raise ValueError(f"visibility must be in [0, 1], got {self.v}")
        if not 0.0 <= self.k <= 1.0:
            raise ValueError(f"k must be in [0, 1], got {self.k}")
        if self.s_ueV < 0:
            raise ValueError(f"fine-structure splitting must be >= 0, got {self.s_ueV}")
        for name in ("tau_x_ns", "tau_ss_ns", "tau_hv_ns", "t2star_ns"):
            t = getattr(self, name)
            if not t > 0:
                raise ValueError(f"{name} must be strictly positive, got {t}")
        if math.isinf(self.tau_x_ns):
            raise ValueError("tau_x_ns must be finite")

    def with_visibility(self, v: float) -> "SourceParams":
        return replace(self, v=v)


@dataclass(frozen=True)
class GFactors:
    g_ss: float
    g_hv: float
    g_deph: float


@dataclass(frozen=True)
class DampingFactors:
    d_pair: float
    d_bsm: float


def _ratio(tau_x: float, t: float) -> float:
    return 0.0 if math.isinf(t) else tau_x / t


def g_factors(p: SourceParams) -> GFactors:
    r_ss = _ratio(p.tau_x_ns, p.tau_ss_ns)
    r_hv = _ratio(p.tau_x_ns, p.tau_hv_ns)
    return GFactors(
        g_ss=1.0 / (1.0 + r_ss),
        g_hv=1.0 / (1.0 + r_ss + r_hv),
        g_deph=1.0 / (1.0 + 2.0 * _ratio(p.tau_x_ns, p.t2star_ns)),
    )


def fss_phase(p: SourceParams) -> float:
    """Dimensionless precession angle ``S·τ_X/ħ`` of the exciton superposition."""
    return p.s_ueV * p.tau_x_ns / HBAR_UEV_NS


def damping_factors(p: SourceParams, g: GFactors | None = None) -> DampingFactors:
    """FSS damping of the pair coherence and of cross-polarized overlap."""
    g = g_factors(p) if g is None else g
    x = fss_phase(p)
    return DampingFactors(
        d_pair=1.0 / math.sqrt(1.0 + (x * g.g_hv) ** 2),
        d_bsm=1.0 / math.sqrt(1.0 + (x * g.g_deph) ** 2),
    )


def pair_coherence(p: SourceParams) -> float:
    """``k·g_hv·d_pair``: twice the rephased HH-VV coherence of the pair."""
    g = g_factors(p)
    return p.k * g.g_hv * damping_factors(p, g).d_pair


def cascade_density_matrix(p: SourceParams) -> np.ndarray:
    """Bell-diagonal pair matrix in the basis (HH, HV, VH, VV).

    The HH-VV coherence is taken real and positive: the compensating
    retarder removes the FSS precession phase and leaves only its
    magnitude damping.
    """
    g = g_factors(p)
    a = p.k * g.g_ss
    b = pair_coherence(p)
    rho = np.diag([(1 + a) / 4, (1 - a) / 4, (1 - a) / 4, (1 + a) / 4]).astype(complex)
    rho[0, 3] = rho[3, 0] = b / 2
    return check_density_matrix(rho, name="cascade density matrix")


_WEIGHT_ORDER = (BellLabel.PHI_PLUS, BellLabel.PHI_MINUS, BellLabel.PSI_PLUS, BellLabel.PSI_MINUS)


def bell_weights(rho: np.ndarray) -> dict[BellLabel, float]:
    """Populations of the four Bell states.

    Emits a warning when ``rho`` has coherences between Bell states, since
    the weights then do not describe it completely.
    """
    rho = np.asarray(rho, dtype=complex)
    u = np.array([bell_state(b) for b in _WEIGHT_ORDER])
    in_bell = u.conj() @ rho @ u.T
    off = in_bell - np.diag(np.diag(in_bell))
    if np.max(np.abs(off)) > 1e-9:
        warnings.warn("density matrix is not Bell-diagonal", RuntimeWarning, stacklevel=2)
    return {b: float(np.real(in_bell[i, i])) for i, b in enumerate(_WEIGHT_ORDER)}


class CalibrationError(ValueError):
    """Requested figures of merit cannot be produced by the model."""


@dataclass(frozen=True)
class CalibrationTargets:
    fidelity_phi_plus: float
    concurrence: float | None = None
    g2_x: float = 0.0
    g2_xx: float = 0.0


def pair_purity(g2_x: float, g2_xx: float) -> float:
    """Fraction of pairs free of multiphoton contamination in either arm."""
    for name, g in (("g2_x", g2_x), ("g2_xx", g2_xx)):
        if not 0.0 <= g <= 1.0:
            raise CalibrationError(f"{name} must be in [0, 1], got {g}")
    return (1.0 - g2_x) * (1.0 - g2_xx)


def _solve_g_hv(target: float, x: float) -> float:
    # g / sqrt(1 + x^2 g^2) = target, for g in (0, 1]
    if x == 0.0:
        return target
    denom = 1.0 - (x * target) ** 2
    return target / math.sqrt(denom)


def calibrate(
    targets: CalibrationTargets,
    *,
    v: float = 1.0,
    s_ueV: float = 0.0,
    tau_x_ns: float = DEFAULT_TAU_X_NS,
    t2star_ns: float = DEFAULT_T2_STAR_NS,
) -> SourceParams:
    """Back-solve ``k`` and ``τ_HV`` from measured g² values and Bell fidelity.

    Spin scattering is assumed absent (``τ_SS = ∞``). The concurrence target
    is not used for solving: within this matrix family ``C = 2F - 1`` and it
    is only checked for consistency by callers.
    """
    k = pair_purity(targets.g2_x, targets.g2_xx)
    f = targets.fidelity_phi_plus
    base = dict(v=v, s_ueV=s_ueV, tau_x_ns=tau_x_ns, t2star_ns=t2star_ns, k=k)
    x = s_ueV * tau_x_ns / HBAR_UEV_NS
    # max of g/sqrt(1+x²g²) over g <= 1 is reached at g = 1
    f_max = (1.0 + k) / 4.0 + k / (2.0 * math.sqrt(1.0 + x * x))
    if f > f_max + 1e-12:
        raise CalibrationError(
            f"fidelity target {f} exceeds the feasible maximum {f_max:.6f} for k={k:.6f}"
        )
    b = (4.0 * f - 1.0 - k) / 2.0
    if b < 0:
        raise CalibrationError(f"fidelity target {f} is below the uncorrelated floor {(1 + k) / 4:.6f}")
    if k == 0.0:
        return SourceParams(**base)
    g_hv = min(1.0, _solve_g_hv(b / k, x))
    if g_hv >= 1.0 - 1e-15:
        tau_hv = math.inf
    elif g_hv <= 0.0:
        raise CalibrationError("fidelity target implies a vanishing pair coherence")
    else:
        tau_hv = tau_x_ns / (1.0 / g_hv - 1.0)
    return SourceParams(tau_hv_ns=tau_hv, **base)


def reference_source(v: float = 0.55) -> SourceParams:
    """Source calibrated to F=0.89, g²=0.011/0.020, S=1.8 µeV."""
    return calibrate(
        CalibrationTargets(fidelity_phi_plus=0.89, concurrence=0.79, g2_x=0.011, g2_xx=0.020),
        v=v,
        s_ueV=1.8,
    )


def phi_plus_fidelity(p: SourceParams) -> float:
    return fidelity_to_pure(cascade_density_matrix(p), bell_state(BellLabel.PHI_PLUS))
