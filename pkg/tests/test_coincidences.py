import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdtele.taglab.coincidences import (
    PAIR_KINDS,
    SIGNATURES,
    TOMO_OUTPUTS,
    ChannelMap,
    CoincidenceConfig,
    Histogram,
    delay_histogram,
    pair_histogram,
    threefold_coincidences,
    window_pairs,
)
from qdtele.taglab.io import TagStream

CMAP = ChannelMap()


def brute_force_threefold(stream: TagStream, cmap: ChannelMap, w: int) -> dict:
    """O(n^2) oracle from explicit outer differences."""
    chans = cmap.channels()
    t = {r: stream.time_ps[stream.channel == c].astype(np.int64) for r, c in chans.items()}
    tomo = {"T": t["tomo_t"], "R": t["tomo_r"]}
    out = {}
    for kind, (ra, rb) in PAIR_KINDS.items():
        ta, tb = t[ra], t[rb]
        ia, ib = np.nonzero(np.abs(ta[:, None] - tb[None, :]) <= w)
        s = ta[ia] + tb[ib]
        for k, tt in tomo.items():
            out[(kind, k)] = int(np.count_nonzero(np.abs(2 * tt[None, :] - s[:, None]) <= 2 * w))
    return out


def random_stream(rng, n, span_ps, n_channels=6):
    t = np.sort(rng.integers(0, span_ps, n))
    ch = rng.integers(0, n_channels, n)
    return TagStream(ch, t)


def planted(kind, tomo, t0=1_000_000, dt=100, dtomo=-50):
    ra, rb = PAIR_KINDS[kind]
    c = CMAP.channels()
    tc = c["tomo_t"] if tomo == "T" else c["tomo_r"]
    return TagStream.from_records(sorted([(c[ra], t0), (c[rb], t0 + dt), (tc, t0 + dt // 2 + dtomo)],
                                         key=lambda r: (r[1], r[0])))


@pytest.mark.parametrize("kind", list(PAIR_KINDS))
@pytest.mark.parametrize("tomo", TOMO_OUTPUTS)
def test_single_planted_triple(kind, tomo):
    counts = threefold_coincidences(planted(kind, tomo), CMAP, CoincidenceConfig())
    for key, n in counts.counts.items():
        assert n == (1 if key == (kind, tomo) else 0)


def test_one_triple_per_combo():
    parts = []
    for i, (kind, tomo) in enumerate((k, t) for k in PAIR_KINDS for t in TOMO_OUTPUTS):
        parts.append(planted(kind, tomo, t0=1_000_000 * (i + 1)))
    counts = threefold_coincidences(TagStream.merge(parts), CMAP, CoincidenceConfig())
    assert all(v == 1 for v in counts.counts.values())
    assert counts.signature("bs") == {"T": 4, "R": 4}
    assert counts.signature("psi_minus") == {"T": 2, "R": 2}


def test_pair_outside_window():
    s = planted("psi_minus_a", "T", dt=601)
    assert threefold_coincidences(s, CMAP, CoincidenceConfig()).total() == 0
    s = planted("psi_minus_a", "T", dt=600, dtomo=0)
    assert threefold_coincidences(s, CMAP, CoincidenceConfig()).total() == 1
    # tomography click too far from the pair midpoint
    s = planted("psi_minus_a", "T", dt=0, dtomo=601)
    assert threefold_coincidences(s, CMAP, CoincidenceConfig()).total() == 0


@given(st.integers(0, 2**32 - 1), st.integers(1, 3000), st.permutations(range(8)))
@settings(max_examples=40, deadline=None)
def test_matches_brute_force(seed, w, perm):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(100, 2000))
    s = random_stream(rng, n, n * 2000, n_channels=8)
    cmap = ChannelMap(*perm[:6])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got = threefold_coincidences(s, cmap, CoincidenceConfig(bsm_window_ps=w, histogram_span_ps=100_000))
    assert got.counts == brute_force_threefold(s, cmap, w)


def test_matches_brute_force_ten_thousand_records():
    rng = np.random.default_rng(2024)
    s = random_stream(rng, 10_000, 10_000 * 1500)
    got = threefold_coincidences(s, CMAP, CoincidenceConfig())
    want = brute_force_threefold(s, CMAP, 600)
    assert got.counts == want
    assert got.total() > 200


@given(st.integers(0, 2**32 - 1), st.integers(-10**12, 10**12))
@settings(max_examples=30)
def test_translation_invariance(seed, offset):
    rng = np.random.default_rng(seed)
    s = random_stream(rng, 500, 500 * 1000)
    base = s.shifted(10**12)
    a = threefold_coincidences(base, CMAP, CoincidenceConfig())
    b = threefold_coincidences(base.shifted(offset), CMAP, CoincidenceConfig())
    assert a.counts == b.counts


def test_unmapped_channels_warn():
    s = TagStream.merge([planted("psi_plus_a", "R"), TagStream.from_records([(9, 5), (9, 7)])])
    with pytest.warns(RuntimeWarning, match="2 tags"):
        c = threefold_coincidences(s, CMAP, CoincidenceConfig())
    assert c.unmapped == 2 and c.total() == 1


def test_channel_map_and_config_validation():
    with pytest.raises(ValueError):
        ChannelMap(bsm1_h=1)
    with pytest.raises(ValueError):
        CoincidenceConfig(bsm_window_ps=100_000)
    with pytest.raises(ValueError):
        CoincidenceConfig(bin_ps=300)
    assert set(SIGNATURES["bs"]) >= set(SIGNATURES["psi_minus"])


@given(st.integers(0, 2**32 - 1), st.integers(-500, 500), st.integers(0, 500))
def test_window_pairs_brute_force(seed, lo, width):
    rng = np.random.default_rng(seed)
    ta = np.sort(rng.integers(0, 5000, 60))
    tb = np.sort(rng.integers(0, 5000, 60))
    ia, ib = window_pairs(ta, tb, lo, lo + width)
    d = tb[None, :] - ta[:, None]
    want = set(zip(*np.nonzero((d >= lo) & (d <= lo + width))))
    assert set(zip(ia.tolist(), ib.tolist())) == want
    assert len(ia) == len(want)


# histograms -------------------------------------------------------------------------

def test_zero_delay_single_count():
    s = TagStream.from_records([(0, 1000), (1, 1000)])
    h = pair_histogram(s, 0, 1, CoincidenceConfig())
    assert h.total() == 1
    assert h.counts[h.centers_ps == 0] == 1


def test_histogram_all_pairs_within_span():
    rng = np.random.default_rng(4)
    s = random_stream(rng, 400, 2_000_000, n_channels=2)
    cfg = CoincidenceConfig(histogram_span_ps=50_000, bin_ps=100)
    h = pair_histogram(s, 0, 1, cfg)
    ta, tb = s.times(0), s.times(1)
    d = (tb[None, :] - ta[:, None]).ravel()
    assert h.total() == np.count_nonzero(np.abs(d) <= 50_000)


def test_uncorrelated_pulsed_stream_is_flat_comb():
    rng = np.random.default_rng(8)
    period = 12_500
    n = 400_000
    pulses = np.arange(n) * period
    a = pulses[rng.random(n) < 0.05]
    b = pulses[rng.random(n) < 0.05]
    s = TagStream.merge([TagStream(np.zeros(a.size), a), TagStream(np.ones(b.size), b)])
    h = pair_histogram(s, 0, 1, CoincidenceConfig(histogram_span_ps=5 * period, bin_ps=100))
    peaks = np.array([h.counts[np.abs(h.centers_ps - k * period) < period / 2].sum() for k in range(-4, 5)])
    expected = n * 0.05 * 0.05
    assert np.all(np.abs(peaks - expected) < 5 * np.sqrt(expected))
    # nothing between the pulses
    off = np.abs(((h.centers_ps + period / 2) % period) - period / 2) > 200
    assert h.counts[off].sum() == 0


def test_rebin_conserves_counts():
    h = delay_histogram(np.random.default_rng(1).integers(-5000, 5000, 10_000), 5000, 10)
    for f in (1, 2, 5, 10, 7):
        r = h.rebin(f)
        if h.counts.size % f == 0:
            assert r.total() == h.total()
        assert r.bin_ps == h.bin_ps * f


def test_histogram_csv_round_trip():
    h = delay_histogram(np.array([-100, 0, 0, 100, 250]), 500, 100)
    back = Histogram.from_csv(h.to_csv())
    np.testing.assert_array_equal(back.counts, h.counts)
    np.testing.assert_array_equal(back.centers_ps, h.centers_ps)
    assert back.bin_ps == 100
    assert h.to_csv().splitlines()[0] == "bin_center_ps,counts"
    with pytest.raises(ValueError):
        Histogram.from_csv("x,y\n1,2\n")


def test_delay_histogram_bins_centered():
    h = delay_histogram(np.array([-49, 49, 50, -50, 1000]), 1000, 100)
    assert h.counts[h.centers_ps == 0] == 3
    assert h.counts[h.centers_ps == 100] == 1
    assert h.counts[h.centers_ps == 1000] == 1
    assert h.counts.size == 21
