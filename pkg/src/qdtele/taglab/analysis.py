"""Turn threefold counts from tomography settings into teleportation fidelities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .. import quantum as q
from ..quantum import PauliLabel
from .coincidences import ChannelMap, CoincidenceConfig, ThreefoldCounts, threefold_coincidences
from .io import TagStream

# BSM signature -> Pauli correction expected for it
SIGNATURE_PAULI = {"bs": PauliLabel.Y, "psi_minus": PauliLabel.Y, "psi_plus": PauliLabel.X}
FIDELITY_INPUTS = ("H", "D", "R")
BASES = ("HV", "DA", "RL")


class NoCoincidencesError(ValueError):
    pass


@dataclass
class InputEstimate:
    counts: list[int]  # H, V, D, A, R, L
    fidelity: float | None
    error: float | None
    rho: np.ndarray | None
    physical: bool | None = None


@dataclass
class SignatureReport:
    signature: str
    per_input: dict[str, InputEstimate] = field(default_factory=dict)
    average: float | None = None
    average_error: float | None = None
    chi: np.ndarray | None = None
    gate_fidelity: float | None = None
    reason: str | None = None


def tomography_counts(counts: Mapping[str, ThreefoldCounts], signature: str) -> list[int]:
    """Six counts (H, V, D, A, R, L) from the T/R outputs of the three bases."""
    out = []
    for b in BASES:
        c = counts[b].signature(signature) if b in counts else {"T": 0, "R": 0}
        out += [c["T"], c["R"]]
    return out


def estimate_input(counts6: list[int], input_label: str, ideal: PauliLabel) -> InputEstimate:
    expected = q.pauli(ideal) @ q.polarization_state(input_label)
    try:
        tomo = q.state_tomography(counts6)
    except ValueError:
        return InputEstimate(counts6, None, None, None)
    f = q.fidelity_to_pure(tomo.rho, expected)
    return InputEstimate(counts6, f, q.fidelity_error(tomo.stokes, expected), tomo.rho, tomo.physical)


def analyze_counts(
    counts: Mapping[str, Mapping[str, ThreefoldCounts]],
    signature: str,
) -> SignatureReport:
    """``counts[input][basis]`` -> fidelities, average and χ for one signature."""
    ideal = SIGNATURE_PAULI[signature]
    rep = SignatureReport(signature)
    for inp, per_basis in counts.items():
        rep.per_input[inp] = estimate_input(tomography_counts(per_basis, signature), inp, ideal)
    fids = [rep.per_input[i] for i in FIDELITY_INPUTS if i in rep.per_input]
    if not fids or any(e.fidelity is None for e in fids):
        rep.reason = "no threefold coincidences in at least one tomography basis"
        return rep
    rep.average = float(np.mean([e.fidelity for e in fids]))
    rep.average_error = math.sqrt(sum(e.error**2 for e in fids)) / len(fids)
    if all(s in rep.per_input and rep.per_input[s].rho is not None for s in q.PROCESS_INPUTS):
        rep.chi = q.process_tomography({s: rep.per_input[s].rho for s in q.PROCESS_INPUTS})
        rep.gate_fidelity = q.average_gate_fidelity(rep.chi, ideal)
    return rep


def count_streams(
    streams: Mapping[tuple[str, str], TagStream],
    cmap: ChannelMap,
    cfg: CoincidenceConfig,
) -> dict[str, dict[str, ThreefoldCounts]]:
    out: dict[str, dict[str, ThreefoldCounts]] = {}
    for (inp, basis), s in streams.items():
        out.setdefault(inp.upper(), {})[basis.upper()] = threefold_coincidences(s, cmap, cfg)
    return out


def analyze_streams(
    streams: Mapping[tuple[str, str], TagStream],
    cmap: ChannelMap | None = None,
    cfg: CoincidenceConfig | None = None,
    signatures=("bs", "psi_minus", "psi_plus"),
) -> dict[str, SignatureReport]:
    counts = count_streams(streams, cmap or ChannelMap(), cfg or CoincidenceConfig())
    return {s: analyze_counts(counts, s) for s in signatures}
