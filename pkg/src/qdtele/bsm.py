"""Conditional Bell-state probabilities for the two linear-optics BSM setups.

A 50:50 beam splitter sends the antisymmetric two-photon state to opposite
ports and symmetric states to the same port, in proportion to the mode
overlap of the two photons. Co-polarized photons overlap with the measured
HOM visibility; cross-polarized ones are further degraded by the
fine-structure detuning.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .quantum import BellLabel
from .source import SourceParams, damping_factors

BELL_ORDER = (BellLabel.PHI_PLUS, BellLabel.PHI_MINUS, BellLabel.PSI_PLUS, BellLabel.PSI_MINUS)


class Setup(str, enum.Enum):
    BS = "bs"
    PBS = "pbs"


class UnsupportedBsmError(ValueError):
    pass


@dataclass(frozen=True)
class BsmSpec:
    setup: Setup = Setup.BS
    tagged: BellLabel = BellLabel.PSI_MINUS

    def __post_init__(self):
        object.__setattr__(self, "setup", Setup(self.setup))
        object.__setattr__(self, "tagged", BellLabel(self.tagged))
        if self.tagged not in (BellLabel.PSI_MINUS, BellLabel.PSI_PLUS):
            raise UnsupportedBsmError(f"only psi states can be tagged, got {self.tagged.value}")
        if self.setup is Setup.BS and self.tagged is BellLabel.PSI_PLUS:
            raise UnsupportedBsmError("the beam-splitter-only setup detects psi_minus only")


@dataclass(frozen=True)
class OverlapFactors:
    m_par: float
    m_perp: float


def overlap_factors(p: SourceParams) -> OverlapFactors:
    return OverlapFactors(m_par=p.v, m_perp=p.v * damping_factors(p).d_bsm)


def detection_weights(true_state: BellLabel, spec: BsmSpec, m: OverlapFactors) -> float:
    """Unnormalized probability that ``true_state`` produces the tagged clicks."""
    true_state = BellLabel(true_state)
    antibunch = {
        BellLabel.PSI_MINUS: (1.0 + m.m_perp) / 2.0,
        BellLabel.PSI_PLUS: (1.0 - m.m_perp) / 2.0,
    }
    if spec.setup is Setup.BS:
        if true_state in antibunch:
            return antibunch[true_state]
        return (1.0 - m.m_par) / 2.0

    if true_state not in antibunch:
        return 0.0  # co-polarized pairs never give an orthogonal-polarization signature
    if spec.tagged is BellLabel.PSI_PLUS:
        # same port, orthogonal polarizations: complement of antibunching
        other = BellLabel.PSI_PLUS if true_state is BellLabel.PSI_MINUS else BellLabel.PSI_MINUS
        return antibunch[other]
    return antibunch[true_state]


def bell_conditionals(spec: BsmSpec, p: SourceParams) -> dict[BellLabel, float]:
    """``p(i | tagged click pattern)`` under a uniform prior over Bell states."""
    m = overlap_factors(p)
    w = {b: detection_weights(b, spec, m) for b in BELL_ORDER}
    total = sum(w.values())
    assert total > 0, "all detection weights vanished"
    return {b: x / total for b, x in w.items()}


def contrast_coefficients(spec: BsmSpec, v: float) -> tuple[float, float]:
    """Interference coefficient ``c`` and correlation coefficient ``c'``."""
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"visibility must be in [0, 1], got {v}")
    if spec.setup is Setup.BS:
        c = v / (2.0 - v)
        return c, c
    return v, 1.0
