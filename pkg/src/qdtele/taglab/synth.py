"""Seeded Monte Carlo generators for detector time-tag streams.

Every generator draws from ``SeedSequence([seed, stream_id, block])`` with a
fixed block size, so results do not depend on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import quantum as q
from ..bsm import BELL_ORDER, overlap_factors
from ..engine import Scenario, branch_states
from ..quantum import BellLabel
from .coincidences import ChannelMap, Histogram, delay_histogram
from .io import TagStream
from .peaks import FWHM_PER_SIGMA

BLOCK_PAIRS = 1 << 16
MAX_PULSE_PAIRS = 2_000_000_000
MAX_TIME_PS = 1 << 62
T_START_PS = 10_000

TOMO_BASES = {"HV": "H", "DA": "D", "RL": "R"}
INPUT_ORDER = ("H", "V", "D", "A", "R", "L")
BASIS_ORDER = ("HV", "DA", "RL")

BSM_ROLES = ("bsm1_h", "bsm1_v", "bsm2_h", "bsm2_v")
ROLES = BSM_ROLES + ("tomo_t", "tomo_r")

# click-pattern codes recorded in the ledger
PATTERN_PSI_MINUS = 0  # opposite ports, orthogonal polarizations
PATTERN_PSI_PLUS = 1  # same port, orthogonal polarizations
PATTERN_COPOL = 2  # opposite ports, same polarization
PATTERN_SINGLE = 3  # both photons on one detector


def _rng(seed: int, stream_id: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream_id), int(block)]))


def _blocks(n: int) -> list[tuple[int, int]]:
    return [(b, min(BLOCK_PAIRS, n - b * BLOCK_PAIRS)) for b in range((n + BLOCK_PAIRS - 1) // BLOCK_PAIRS)]


def _run_blocks(fn, n: int, workers: int):
    blocks = _blocks(n)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(lambda a: fn(*a), blocks))
    return [fn(*a) for a in blocks]


def _quantize(t: np.ndarray, resolution_ps: int) -> np.ndarray:
    r = max(int(resolution_ps), 1)
    return (np.round(t / r) * r).astype(np.int64)


def _pulse_count(duration_s: float, rate_hz: float) -> int:
    n = duration_s * rate_hz
    if not math.isfinite(n) or n > MAX_PULSE_PAIRS:
        raise OverflowError(f"rate x duration = {n:g} pulse pairs exceeds the limit {MAX_PULSE_PAIRS}")
    if n < 0:
        raise ValueError("rate and duration must be nonnegative")
    end_ps = T_START_PS + duration_s * 1e12 + 1e6
    if end_ps > MAX_TIME_PS:
        raise OverflowError("run duration overflows the picosecond time base")
    return int(round(n))


@dataclass(frozen=True)
class SynthRun:
    seed: int
    duration_s: float = 1e-3
    pair_rate_hz: float = 160e6
    efficiencies: dict[str, float] = field(default_factory=lambda: {r: 0.65 for r in ROLES})
    jitter_ps: float = 400.0
    dark_rate_hz: float = 0.0
    resolution_ps: int = 10
    delay_ps: float = 1800.0

    def __post_init__(self):
        eff = {r: 0.65 for r in ROLES}
        eff.update(self.efficiencies)
        unknown = set(eff) - set(ROLES)
        if unknown:
            raise ValueError(f"unknown detector roles {sorted(unknown)}")
        for r, e in eff.items():
            if not 0.0 <= e <= 1.0:
                raise ValueError(f"efficiency for {r} must be in [0, 1], got {e}")
        object.__setattr__(self, "efficiencies", eff)
        if self.jitter_ps < 0 or self.dark_rate_hz < 0:
            raise ValueError("jitter and dark rate must be nonnegative")

    @property
    def n_pairs(self) -> int:
        return _pulse_count(self.duration_s, self.pair_rate_hz)

    @property
    def period_ps(self) -> float:
        return 1e12 / self.pair_rate_hz


@dataclass
class SynthLedger:
    """Ground truth for one synthesized stream."""

    n_pairs: int
    branch: np.ndarray
    pattern: np.ndarray
    tomo_outcome: np.ndarray
    detected: np.ndarray  # (n_pairs, 3) bool: first BSM photon, second BSM photon, XX photon
    n_signal_tags: int
    n_dark_tags: int

    @property
    def n_records(self) -> int:
        return self.n_signal_tags + self.n_dark_tags

    def branch_counts(self) -> dict[BellLabel, int]:
        c = np.bincount(self.branch, minlength=4)
        return {b: int(c[i]) for i, b in enumerate(BELL_ORDER)}

    def heralded(self, pattern: int) -> dict[str, int]:
        """Fully detected pulse pairs with the given BSM pattern, split by tomography output."""
        m = (self.pattern == pattern) & self.detected.all(axis=1)
        return {"T": int(np.count_nonzero(m & (self.tomo_outcome == 0))),
                "R": int(np.count_nonzero(m & (self.tomo_outcome == 1)))}


def stream_id(input_label: str, basis: str) -> int:
    return 3 * INPUT_ORDER.index(input_label.upper()) + BASIS_ORDER.index(basis.upper())


def synthesize_tags(
    scenario: Scenario,
    run: SynthRun,
    input_state: str = "H",
    basis: str = "HV",
    cmap: ChannelMap | None = None,
    workers: int = 1,
) -> tuple[TagStream, SynthLedger]:
    """Simulate one (input, tomography basis) setting of the teleportation run.

    Per pulse pair: the (X_E, X_L) pair is projected on a Bell state with
    probability ``N^i``; the beam splitter turns it into a click pattern
    using the HOM overlap factors; the XX_L photon is measured in ``basis``
    with the Born probability of the projected branch. Clicks then pass
    detector efficiency and Gaussian jitter, and dark counts are added.
    """
    cmap = cmap or ChannelMap()
    chan = cmap.channels()
    role_chan = np.array([chan[r] for r in ROLES])
    eff = np.array([run.efficiencies[r] for r in ROLES])
    n_pairs = run.n_pairs
    period = run.period_ps
    sid = stream_id(input_state, basis)

    psi = q.polarization_state(input_state)
    branches = branch_states(psi, scenario.pair_matrix())
    probs = np.array([branches[b][0] for b in BELL_ORDER])
    probs = probs / probs.sum()
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    proj = q.polarization_state(TOMO_BASES[basis.upper()])
    p_t = np.array([q.fidelity_to_pure(branches[b][1], proj) if branches[b][0] > 0 else 0.0 for b in BELL_ORDER])
    m = overlap_factors(scenario.source)
    # P(opposite BS ports) per true Bell state, in BELL_ORDER
    p_opp = np.array([(1 - m.m_par) / 2, (1 - m.m_par) / 2, (1 - m.m_perp) / 2, (1 + m.m_perp) / 2])
    is_psi = np.array([False, False, True, True])

    tau_x = scenario.source.tau_x_ns * 1000.0
    sigma_j = run.jitter_ps / FWHM_PER_SIGMA
    d = run.delay_ps
    dark_per_block_ps = run.dark_rate_hz * 1e-12

    def block(b: int, n: int):
        rng = _rng(run.seed, sid, b)
        j = b * BLOCK_PAIRS + np.arange(n)
        t0 = T_START_PS + j * period
        branch = np.searchsorted(cum, rng.random(n), side="right").astype(np.int8)
        opposite = rng.random(n) < p_opp[branch]
        sub = rng.random(n) < 0.5
        psi_mask = is_psi[branch]

        # role indices into BSM_ROLES: 0=1H 1=1V 2=2H 3=2V, -1 = no second click
        r1 = np.empty(n, np.int8)
        r2 = np.empty(n, np.int8)
        pattern = np.empty(n, np.int8)
        sel = psi_mask & opposite
        r1[sel], r2[sel] = np.where(sub[sel], 0, 1), np.where(sub[sel], 3, 2)
        pattern[sel] = PATTERN_PSI_MINUS
        sel = psi_mask & ~opposite
        r1[sel], r2[sel] = np.where(sub[sel], 0, 2), np.where(sub[sel], 1, 3)
        pattern[sel] = PATTERN_PSI_PLUS
        sel = ~psi_mask & opposite
        r1[sel], r2[sel] = np.where(sub[sel], 0, 1), np.where(sub[sel], 2, 3)
        pattern[sel] = PATTERN_COPOL
        sel = ~psi_mask & ~opposite
        r1[sel] = rng.integers(0, 4, size=int(sel.sum()))
        r2[sel] = -1
        pattern[sel] = PATTERN_SINGLE

        tomo = (rng.random(n) >= p_t[branch]).astype(np.int8)  # 0 -> T, 1 -> R
        r3 = 4 + tomo

        xx_e = rng.exponential(tau_x / 2, n)
        xx_l = rng.exponential(tau_x / 2, n)
        t_xe = t0 + d + xx_e + rng.exponential(tau_x, n)
        t_xl = t0 + d + xx_l + rng.exponential(tau_x, n)
        t_xx = t0 + d + xx_l

        u = rng.random((n, 3))
        det1 = u[:, 0] < eff[r1]
        det2 = (r2 >= 0) & (u[:, 1] < eff[np.maximum(r2, 0)])
        det3 = u[:, 2] < eff[r3]
        jit = rng.normal(0.0, sigma_j, (n, 3)) if sigma_j > 0 else np.zeros((n, 3))

        roles = np.concatenate([r1[det1], r2[det2], r3[det3]]).astype(np.int64)
        times = np.concatenate([
            (t_xe + jit[:, 0])[det1], (t_xl + jit[:, 1])[det2], (t_xx + jit[:, 2])[det3],
        ])
        sig_ch = role_chan[roles]

        dark_ch, dark_t = [], []
        if run.dark_rate_hz > 0:
            lo, hi = T_START_PS + j[0] * period, T_START_PS + (j[-1] + 1) * period
            for ch in role_chan:
                k = rng.poisson(dark_per_block_ps * (hi - lo))
                dark_ch.append(np.full(k, ch))
                dark_t.append(rng.uniform(lo, hi, k))
        dch = np.concatenate(dark_ch) if dark_ch else np.zeros(0, np.int64)
        dt = np.concatenate(dark_t) if dark_t else np.zeros(0)
        detected = np.column_stack([det1, det2, det3])
        return (np.concatenate([sig_ch, dch]), np.concatenate([times, dt]),
                branch, pattern, tomo, detected, sig_ch.size, dch.size)

    parts = _run_blocks(block, n_pairs, workers)
    if parts:
        ch = np.concatenate([p[0] for p in parts])
        t = _quantize(np.maximum(np.concatenate([p[1] for p in parts]), 0.0), run.resolution_ps)
        order = np.lexsort((ch, t))
        stream = TagStream(ch[order], t[order])
        ledger = SynthLedger(
            n_pairs=n_pairs,
            branch=np.concatenate([p[2] for p in parts]),
            pattern=np.concatenate([p[3] for p in parts]),
            tomo_outcome=np.concatenate([p[4] for p in parts]),
            detected=np.concatenate([p[5] for p in parts]),
            n_signal_tags=int(sum(p[6] for p in parts)),
            n_dark_tags=int(sum(p[7] for p in parts)),
        )
    else:
        stream = TagStream.empty()
        z = np.zeros(0, np.int8)
        ledger = SynthLedger(0, z, z, z, np.zeros((0, 3), bool), 0, 0)
    return stream, ledger


def synthesize_experiment(
    scenario: Scenario,
    run: SynthRun,
    inputs=("H", "V", "D", "R"),
    bases=BASIS_ORDER,
    cmap: ChannelMap | None = None,
    workers: int = 1,
) -> dict[tuple[str, str], tuple[TagStream, SynthLedger]]:
    """One stream per (input, basis); ``run.duration_s`` is split evenly among them."""
    settings = [(i, b) for i in inputs for b in bases]
    per = SynthRun(**{**run.__dict__, "duration_s": run.duration_s / len(settings)})
    return {s: synthesize_tags(scenario, per, s[0], s[1], cmap, workers) for s in settings}


# HOM ------------------------------------------------------------------------

def hom_cluster_weights(visibility: float) -> np.ndarray:
    """Relative peak areas at (-2, -1, 0, 1, 2) interferometer delays."""
    return np.array([1.0, 2.0, 2.0 * (1.0 - visibility), 2.0, 1.0])


def hom_path_enumeration(visibility: float) -> np.ndarray:
    """Cluster areas from explicit enumeration of short/long paths.

    Photon 1 is emitted one delay ahead of photon 2 and each takes the short
    or long interferometer arm. When photon 1 is long and photon 2 short
    they meet at the final beam splitter and leave through opposite ports
    with probability ``(1 - V)/2``; otherwise the ports are independent.
    Returns probabilities per pulse pair for delays (-2..2) x delay.
    """
    out = np.zeros(5)
    for arm1 in (0, 1):
        for arm2 in (0, 1):
            t1, t2 = arm1, 1 + arm2
            p_path = 0.25
            if t1 == t2:
                # opposite ports at zero delay, split over both detector orders
                out[2] += p_path * (1 - visibility) / 2
                continue
            # photon 1 on detector A, photon 2 on B -> delay t2 - t1, and the reverse
            out[2 + (t2 - t1)] += p_path * 0.25
            out[2 - (t2 - t1)] += p_path * 0.25
    return out


def hom_cluster_histogram(
    visibility: float,
    n_counts: int,
    seed: int,
    delay_ps: float = 1800.0,
    irf_fwhm_ps: float = 560.0,
    tau_ps: float = 230.0,
    bin_ps: int = 100,
    span_ps: int = 6000,
    background_per_bin: float = 0.0,
) -> Histogram:
    """Draw ``n_counts`` cluster coincidences with 1:2:2(1-V):2:1 peak areas."""
    rng = _rng(seed, 1000, 0)
    w = hom_cluster_weights(visibility)
    peak = rng.choice(5, size=n_counts, p=w / w.sum()) - 2
    t = peak * delay_ps + rng.laplace(0.0, tau_ps, n_counts) + rng.normal(0.0, irf_fwhm_ps / FWHM_PER_SIGMA, n_counts)
    h = delay_histogram(np.round(t).astype(np.int64), span_ps, bin_ps)
    if background_per_bin > 0:
        h = Histogram(h.centers_ps, h.counts + rng.poisson(background_per_bin, h.counts.size), h.bin_ps)
    return h


@dataclass
class HomLedger:
    n_pulse_pairs: int
    planted: np.ndarray  # coincidences per cluster offset -2..2


def synthesize_hom_tags(
    visibility: float,
    n_pulse_pairs: int,
    seed: int,
    delay_ps: float = 1800.0,
    rep_period_ps: float = 12500.0,
    tau_ps: float = 230.0,
    jitter_ps: float = 400.0,
    efficiency: float = 1.0,
    resolution_ps: int = 10,
    channels: tuple[int, int] = (0, 1),
    workers: int = 1,
) -> tuple[TagStream, HomLedger]:
    """Two-photon interference through an unbalanced interferometer."""
    sigma_j = jitter_ps / FWHM_PER_SIGMA

    def block(b: int, n: int):
        rng = _rng(seed, 2000, b)
        t0 = T_START_PS + (b * BLOCK_PAIRS + np.arange(n)) * rep_period_ps
        arm = rng.random((n, 2)) < 0.5
        slot1 = arm[:, 0].astype(int)
        slot2 = 1 + arm[:, 1].astype(int)
        t1 = t0 + rng.exponential(tau_ps, n) + slot1 * delay_ps
        t2 = t0 + delay_ps + rng.exponential(tau_ps, n) + arm[:, 1] * delay_ps
        port1 = rng.random(n) < 0.5
        port2 = rng.random(n) < 0.5
        meet = slot1 == slot2
        split = rng.random(n) < (1 - visibility) / 2
        # meeting photons: opposite ports with prob (1-V)/2, else bunched
        port2 = np.where(meet, np.where(split, ~port1, port1), port2)
        det = rng.random((n, 2)) < efficiency
        both_same = meet & (port1 == port2)
        det[:, 1] &= ~(both_same & det[:, 0])  # bunched photons give one click
        jit = rng.normal(0.0, sigma_j, (n, 2))
        ch = np.concatenate([np.where(port1, channels[1], channels[0])[det[:, 0]],
                             np.where(port2, channels[1], channels[0])[det[:, 1]]])
        t = np.concatenate([(t1 + jit[:, 0])[det[:, 0]], (t2 + jit[:, 1])[det[:, 1]]])
        coinc = det[:, 0] & det[:, 1] & (port1 != port2)
        # offset of B minus A in delay units
        sign = np.where(port1, -1, 1)
        off = sign * (slot2 - slot1)
        planted = np.bincount(off[coinc] + 2, minlength=5)
        return ch, t, planted

    parts = _run_blocks(block, n_pulse_pairs, workers)
    ch = np.concatenate([p[0] for p in parts])
    t = _quantize(np.concatenate([p[1] for p in parts]), resolution_ps)
    order = np.lexsort((ch, t))
    planted = np.sum([p[2] for p in parts], axis=0)
    return TagStream(ch[order], t[order]), HomLedger(n_pulse_pairs, planted)


# g2 / HBT -------------------------------------------------------------------


@dataclass
class HbtLedger:
    n_pulses: int
    n_double: int
    expected_g2: float


def synthesize_hbt_tags(
    n_pulses: int,
    p_single: float,
    p_double: float,
    seed: int,
    efficiency: float = 0.1,
    rep_period_ps: float = 12500.0,
    tau_ps: float = 230.0,
    jitter_ps: float = 400.0,
    resolution_ps: int = 10,
    channels: tuple[int, int] = (0, 1),
    workers: int = 1,
) -> tuple[TagStream, HbtLedger]:
    """Pulsed emitter on a 50:50 splitter with a planted two-photon probability."""
    if p_single < 0 or p_double < 0 or p_single + p_double > 1:
        raise ValueError("emission probabilities must be nonnegative and sum to <= 1")
    sigma_j = jitter_ps / FWHM_PER_SIGMA
    half_eta = efficiency / 2
    p_click = p_single * half_eta + p_double * (1 - (1 - half_eta) ** 2)
    expected = p_double * efficiency**2 / 2 / p_click**2 if p_click > 0 else math.nan

    def block(b: int, n: int):
        rng = _rng(seed, 3000, b)
        t0 = T_START_PS + (b * BLOCK_PAIRS + np.arange(n)) * rep_period_ps
        u = rng.random(n)
        n_ph = np.where(u < p_double, 2, np.where(u < p_double + p_single, 1, 0))
        chans, times = [], []
        for k in (0, 1):
            has = n_ph > k
            port = rng.random(n) < 0.5
            det = has & (rng.random(n) < efficiency)
            t = t0 + rng.exponential(tau_ps, n) + rng.normal(0.0, sigma_j, n)
            chans.append(np.where(port, channels[1], channels[0])[det])
            times.append(t[det])
            if k == 0:
                first = (det, port)
            else:
                # two photons on the same detector register once
                dup = det & first[0] & (port == first[1])
                keep = ~dup[det]
                chans[-1] = chans[-1][keep]
                times[-1] = times[-1][keep]
        return np.concatenate(chans), np.concatenate(times), int(np.count_nonzero(n_ph == 2))

    parts = _run_blocks(block, n_pulses, workers)
    ch = np.concatenate([p[0] for p in parts])
    t = _quantize(np.concatenate([p[1] for p in parts]), resolution_ps)
    order = np.lexsort((ch, t))
    return TagStream(ch[order], t[order]), HbtLedger(n_pulses, sum(p[2] for p in parts), expected)


# lifetime -------------------------------------------------------------------


def synthesize_decay_tags(
    tau_ps: float,
    irf_fwhm_ps: float,
    n_pulses: int,
    seed: int,
    detection_prob: float = 0.05,
    rep_period_ps: float = 12500.0,
    resolution_ps: int = 1,
    sync_channel: int = 0,
    det_channel: int = 1,
    workers: int = 1,
) -> TagStream:
    """Laser sync tags plus detector clicks delayed by exponential emission and IRF."""
    sigma = irf_fwhm_ps / FWHM_PER_SIGMA

    def block(b: int, n: int):
        rng = _rng(seed, 4000, b)
        t0 = T_START_PS + (b * BLOCK_PAIRS + np.arange(n)) * rep_period_ps
        det = rng.random(n) < detection_prob
        t = t0 + rng.exponential(tau_ps, n) + rng.normal(0.0, sigma, n)
        ch = np.concatenate([np.full(n, sync_channel), np.full(int(det.sum()), det_channel)])
        return ch, np.concatenate([t0, t[det]])

    parts = _run_blocks(block, n_pulses, workers)
    ch = np.concatenate([p[0] for p in parts])
    t = _quantize(np.concatenate([p[1] for p in parts]), resolution_ps)
    order = np.lexsort((ch, t))
    return TagStream(ch[order], t[order])


def decay_histogram(
    tau_ps: float,
    irf_fwhm_ps: float,
    n_counts: int,
    seed: int,
    bin_ps: int = 16,
    span_ps: int = 4000,
    t0_ps: float = 0.0,
) -> Histogram:
    rng = _rng(seed, 5000, 0)
    t = t0_ps + rng.exponential(tau_ps, n_counts)
    if irf_fwhm_ps > 0:
        t = t + rng.normal(0.0, irf_fwhm_ps / FWHM_PER_SIGMA, n_counts)
    return delay_histogram(np.round(t).astype(np.int64), span_ps, bin_ps)
