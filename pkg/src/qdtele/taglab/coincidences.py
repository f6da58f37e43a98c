"""Threefold coincidence counting and two-channel correlation histograms."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .io import TagStream

TOMO_OUTPUTS = ("T", "R")

# BSM channel pairs. Cross-side pairs are coincidences across the
# non-polarizing beam splitter, same-side pairs leave through one port.
PAIR_KINDS = {
    "psi_minus_a": ("bsm1_h", "bsm2_v"),
    "psi_minus_b": ("bsm1_v", "bsm2_h"),
    "psi_plus_a": ("bsm1_h", "bsm1_v"),
    "psi_plus_b": ("bsm2_h", "bsm2_v"),
    "copol_h": ("bsm1_h", "bsm2_h"),
    "copol_v": ("bsm1_v", "bsm2_v"),
}

SIGNATURES = {
    "psi_minus": ("psi_minus_a", "psi_minus_b"),
    "psi_plus": ("psi_plus_a", "psi_plus_b"),
    # detectors grouped per beam-splitter output
    "bs": ("psi_minus_a", "psi_minus_b", "copol_h", "copol_v"),
}


@dataclass(frozen=True)
class ChannelMap:
    bsm1_h: int = 0
    bsm1_v: int = 1
    bsm2_h: int = 2
    bsm2_v: int = 3
    tomo_t: int = 4
    tomo_r: int = 5

    def __post_init__(self):
        chans = self.channels()
        if len(set(chans.values())) != len(chans):
            raise ValueError(f"channel roles must be distinct, got {chans}")

    def channels(self) -> dict[str, int]:
        return {
            "bsm1_h": self.bsm1_h,
            "bsm1_v": self.bsm1_v,
            "bsm2_h": self.bsm2_h,
            "bsm2_v": self.bsm2_v,
            "tomo_t": self.tomo_t,
            "tomo_r": self.tomo_r,
        }


@dataclass(frozen=True)
class CoincidenceConfig:
    bsm_window_ps: int = 600
    histogram_span_ps: int = 100_000
    bin_ps: int = 100

    def __post_init__(self):
        if self.bsm_window_ps < 0 or self.bin_ps <= 0:
            raise ValueError("window must be >= 0 and bin width > 0")
        if not self.bsm_window_ps < self.histogram_span_ps:
            raise ValueError("coincidence window must be shorter than the histogram span")
        if self.histogram_span_ps % self.bin_ps:
            raise ValueError("bin width must divide the histogram span")


@dataclass
class ThreefoldCounts:
    counts: dict[tuple[str, str], int] = field(default_factory=dict)
    unmapped: int = 0

    def get(self, kind: str, tomo: str) -> int:
        return self.counts.get((kind, tomo), 0)

    def signature(self, name: str) -> dict[str, int]:
        """T/R counts summed over the pair kinds of a BSM signature."""
        kinds = SIGNATURES[name]
        return {t: sum(self.get(k, t) for k in kinds) for t in TOMO_OUTPUTS}

    def total(self) -> int:
        return int(sum(self.counts.values()))


def window_pairs(ta: np.ndarray, tb: np.ndarray, lo_ps: int, hi_ps: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j) with ``lo_ps <= tb[j] - ta[i] <= hi_ps``; inputs sorted."""
    lo = np.searchsorted(tb, ta + lo_ps, side="left")
    hi = np.searchsorted(tb, ta + hi_ps, side="right")
    n = hi - lo
    total = int(n.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    ia = np.repeat(np.arange(ta.size), n)
    start = np.cumsum(n) - n
    ib = lo[ia] + (np.arange(total) - start[ia])
    return ia, ib


def threefold_coincidences(stream: TagStream, cmap: ChannelMap, cfg: CoincidenceConfig) -> ThreefoldCounts:
    """Count BSM pairs with a tomography click near the pair midpoint.

    A triple (a, b, t) counts when ``|t_a - t_b| <= W`` and
    ``|t_t - (t_a + t_b)/2| <= W``. Every such triple is counted, so
    results agree with exhaustive enumeration.
    """
    chans = cmap.channels()
    mapped = np.isin(stream.channel, list(chans.values()))
    unmapped = int(np.count_nonzero(~mapped))
    if unmapped:
        warnings.warn(f"{unmapped} tags on unmapped channels ignored", RuntimeWarning, stacklevel=2)
    times = {role: stream.times(ch) for role, ch in chans.items()}
    w = int(cfg.bsm_window_ps)
    tomo2 = {"T": 2 * times["tomo_t"], "R": 2 * times["tomo_r"]}
    out = ThreefoldCounts(unmapped=unmapped)
    for kind, (ra, rb) in PAIR_KINDS.items():
        ta, tb = times[ra], times[rb]
        ia, ib = window_pairs(ta, tb, -w, w)
        s = ta[ia] + tb[ib]
        for tomo, t2 in tomo2.items():
            n = np.searchsorted(t2, s + 2 * w, side="right") - np.searchsorted(t2, s - 2 * w, side="left")
            out.counts[(kind, tomo)] = int(n.sum())
    return out


@dataclass(frozen=True, eq=False)
class Histogram:
    """Counts on bins of width ``bin_ps`` centred at ``centers_ps``."""

    centers_ps: np.ndarray
    counts: np.ndarray
    bin_ps: float

    def __post_init__(self):
        object.__setattr__(self, "centers_ps", np.asarray(self.centers_ps, dtype=float))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if self.centers_ps.shape != self.counts.shape:
            raise ValueError("centers and counts must have equal length")

    @property
    def edges_ps(self) -> np.ndarray:
        return np.append(self.centers_ps - self.bin_ps / 2, self.centers_ps[-1] + self.bin_ps / 2)

    def total(self) -> int:
        return int(self.counts.sum())

    def rebin(self, factor: int) -> "Histogram":
        n = (self.counts.size // factor) * factor
        c = self.counts[:n].reshape(-1, factor).sum(axis=1)
        x = self.centers_ps[:n].reshape(-1, factor).mean(axis=1)
        return Histogram(x, c, self.bin_ps * factor)

    def window(self, lo_ps: float, hi_ps: float) -> "Histogram":
        m = (self.centers_ps >= lo_ps) & (self.centers_ps <= hi_ps)
        return Histogram(self.centers_ps[m], self.counts[m], self.bin_ps)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_center_ps", "counts"])
        for x, c in zip(self.centers_ps, self.counts):
            w.writerow([f"{x:g}", int(c)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Histogram":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["bin_center_ps", "counts"]:
            raise ValueError("histogram CSV must start with 'bin_center_ps,counts'")
        x = np.array([float(r[0]) for r in rows[1:] if r])
        c = np.array([int(r[1]) for r in rows[1:] if r])
        if x.size < 2:
            raise ValueError("histogram needs at least two bins")
        return cls(x, c, float(np.median(np.diff(x))))


def delay_histogram(delays_ps: np.ndarray, span_ps: int, bin_ps: int) -> Histogram:
    """Histogram integer delays on bins centred at multiples of ``bin_ps``."""
    half = span_ps // bin_ps
    d = np.asarray(delays_ps, dtype=np.int64)
    d = d[np.abs(d) <= span_ps]
    idx = np.floor_divide(d + bin_ps // 2, bin_ps) + half
    idx = idx[(idx >= 0) & (idx <= 2 * half)]
    counts = np.bincount(idx, minlength=2 * half + 1)
    centers = (np.arange(2 * half + 1) - half) * bin_ps
    return Histogram(centers, counts, bin_ps)


def pair_histogram(stream: TagStream, ch_a: int, ch_b: int, cfg: CoincidenceConfig) -> Histogram:
    """All-pairs correlation histogram of ``t_B - t_A`` within the span."""
    ta, tb = stream.times(ch_a), stream.times(ch_b)
    span = int(cfg.histogram_span_ps)
    ia, ib = window_pairs(ta, tb, -span, span)
    return delay_histogram(tb[ib] - ta[ia], span, int(cfg.bin_ps))
