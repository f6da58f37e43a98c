import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from qdtele.taglab.coincidences import CoincidenceConfig, Histogram, delay_histogram, pair_histogram
from qdtele.taglab.fitting import (
    FitError,
    estimate_g2,
    fit_hom,
    fit_lifetime,
    hom_model,
    lifetime_model,
)
from qdtele.taglab.io import TagStream
from qdtele.taglab.peaks import emg, emg_with_grad, sym_emg, sym_emg_with_grad
from qdtele.taglab.synth import (
    decay_histogram,
    hom_cluster_histogram,
    synthesize_hbt_tags,
    synthesize_hom_tags,
)


def fd_grad(f, x0, h):
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h * max(abs(x0[i]), 1.0)
        cols.append((f(x0 + e) - f(x0 - e)) / (2 * e[i]))
    return np.column_stack(cols)


# peak shapes ----------------------------------------------------------------------

@pytest.mark.parametrize("sigma,tau", [(170.0, 230.0), (50.0, 800.0), (400.0, 60.0), (10.0, 5000.0)])
def test_emg_unit_area(sigma, tau):
    step = min(sigma, tau) / 50
    t = np.arange(-40 * tau - 20 * sigma, 40 * tau + 20 * sigma, step)
    assert trapezoid(emg(t, sigma, tau), t) == pytest.approx(1.0, abs=1e-6)
    assert trapezoid(sym_emg(t, sigma, tau), t) == pytest.approx(1.0, abs=1e-6)


@given(st.floats(5.0, 800.0), st.floats(5.0, 2000.0))
@settings(max_examples=50)
def test_emg_gradients_match_finite_differences(sigma, tau):
    t = np.linspace(-4 * sigma, 6 * tau + 3 * sigma, 41)
    for fn in (emg_with_grad, sym_emg_with_grad):
        f, dt, ds, du = fn(t, sigma, tau)
        assert np.all(np.isfinite(f)) and np.all(f >= 0)
        h = 1e-6
        num_t = (fn(t + h * sigma, sigma, tau)[0] - fn(t - h * sigma, sigma, tau)[0]) / (2 * h * sigma)
        num_s = (fn(t, sigma * (1 + h), tau)[0] - fn(t, sigma * (1 - h), tau)[0]) / (2 * h * sigma)
        num_u = (fn(t, sigma, tau * (1 + h))[0] - fn(t, sigma, tau * (1 - h))[0]) / (2 * h * tau)
        scale = f.max() / min(sigma, tau)
        np.testing.assert_allclose(dt, num_t, atol=1e-5 * scale, rtol=1e-4)
        np.testing.assert_allclose(ds, num_s, atol=1e-5 * scale, rtol=1e-4)
        np.testing.assert_allclose(du, num_u, atol=1e-5 * scale, rtol=1e-4)


def test_emg_far_tails_finite():
    f, *grads = emg_with_grad(np.array([-1e5, -5000.0, 0.0, 1e5]), 10.0, 100.0)
    assert np.all(np.isfinite(f)) and all(np.all(np.isfinite(g)) for g in grads)
    assert f[0] == 0.0


def test_emg_zero_sigma_is_exponential():
    t = np.array([-5.0, 0.0, 100.0])
    np.testing.assert_allclose(emg(t, 0.0, 100.0), [0.0, 0.01, 0.01 * np.exp(-1)])


def test_hom_model_jacobian():
    x = np.arange(-4500, 4501, 50, dtype=float)
    p = np.array([1000.0, 2100.0, 800.0, 1900.0, 1100.0, 560.0, 230.0, 3.0])
    mu, jac = hom_model(x, p, 50.0, 1800.0)
    num = fd_grad(lambda q: hom_model(x, q, 50.0, 1800.0)[0], p, 1e-6)
    np.testing.assert_allclose(jac, num, rtol=1e-5, atol=1e-6 * mu.max())


def test_lifetime_model_jacobian():
    x = np.arange(-1000, 3000, 16, dtype=float)
    p = np.array([5e4, 40.0, 230.0, 2.0])
    mu, jac = lifetime_model(x, p, 16.0, 127.0)
    num = fd_grad(lambda q: lifetime_model(x, q, 16.0, 127.0)[0], p, 1e-6)
    np.testing.assert_allclose(jac, num, rtol=1e-5, atol=1e-6 * mu.max())


# HOM --------------------------------------------------------------------------------

@pytest.mark.parametrize("v", [0.55, 0.79])
def test_hom_recovery_at_anchor_visibilities(v):
    h = hom_cluster_histogram(v, 100_000, seed=11)
    r = fit_hom(h)
    assert abs(r.visibility - v) < 0.02
    assert abs(r.visibility - v) < 3 * r.visibility_error
    assert 0.001 < r.visibility_error < 0.02
    assert r.fwhm_ps == pytest.approx(560, rel=0.1)


@pytest.mark.parametrize("v", [0.0, 0.3, 1.0])
def test_hom_recovery_other_visibilities(v):
    r = fit_hom(hom_cluster_histogram(v, 100_000, seed=12))
    assert abs(r.visibility - v) < 0.02


def test_hom_with_background():
    r = fit_hom(hom_cluster_histogram(0.55, 100_000, seed=13, background_per_bin=20.0))
    assert abs(r.visibility - 0.55) < 0.03
    # peak tails overlap the flat floor, so the background is only loosely constrained
    assert abs(r.background - 20.0) < 3 * r.fit.errors[7]


@pytest.mark.slow
def test_hom_error_coverage():
    inside = 0
    for s in range(100):
        r = fit_hom(hom_cluster_histogram(0.55, 100_000, seed=10_000 + s))
        inside += abs(r.visibility - 0.55) <= 2 * r.visibility_error
    assert inside >= 95


def test_hom_from_synthesized_tags():
    stream, ledger = synthesize_hom_tags(0.79, 400_000, seed=3)
    h = pair_histogram(stream, 0, 1, CoincidenceConfig(histogram_span_ps=6000, bin_ps=50))
    r = fit_hom(h, rep_period_ps=12500)
    planted = ledger.planted
    v_planted = 1 - 2 * planted[2] / (planted[1] + planted[3])
    assert abs(r.visibility - 0.79) < 0.03
    assert abs(r.visibility - v_planted) < 3 * r.visibility_error + 0.01


def test_hom_degenerate_inputs():
    x = np.arange(-5000, 5001, 100)
    with pytest.raises(FitError):
        fit_hom(Histogram(x, np.zeros(x.size, np.int64), 100))
    y = np.zeros(x.size, np.int64)
    y[50] = 1000
    with pytest.raises(FitError):
        fit_hom(Histogram(x, y, 100))
    with pytest.raises(FitError, match="cover"):
        fit_hom(Histogram(np.arange(-500, 501, 100), np.ones(11, np.int64), 100))


def test_hom_result_dict():
    d = fit_hom(hom_cluster_histogram(0.55, 20_000, seed=2)).as_dict()
    assert {"visibility", "visibility_error", "areas", "reduced_chi2", "method"} <= set(d)
    assert d["reduced_chi2"] < 2.0


# g2 ----------------------------------------------------------------------------------

CFG_G2 = CoincidenceConfig(histogram_span_ps=5 * 12_500, bin_ps=100)


def test_g2_ideal_single_photons():
    s, ledger = synthesize_hbt_tags(500_000, 0.9, 0.0, seed=1, efficiency=0.3)
    r = estimate_g2(pair_histogram(s, 0, 1, CFG_G2), 12_500)
    assert ledger.n_double == 0 and ledger.expected_g2 == 0.0
    assert r.central_area == 0 and r.g2 == 0.0
    assert r.error > 0


def test_g2_poissonian_light():
    rng = np.random.default_rng(7)
    n, period = 1_000_000, 12_500
    pulses = np.arange(n) * period
    a, b = pulses[rng.random(n) < 0.05], pulses[rng.random(n) < 0.05]
    s = TagStream.merge([TagStream(np.zeros(a.size), a), TagStream(np.ones(b.size), b)])
    r = estimate_g2(pair_histogram(s, 0, 1, CFG_G2), period)
    assert abs(r.g2 - 1.0) < 4 * r.error
    assert r.error < 0.05


def test_g2_planted_doubles():
    s, ledger = synthesize_hbt_tags(2_000_000, 0.9, 0.02, seed=9, efficiency=0.3)
    r = estimate_g2(pair_histogram(s, 0, 1, CFG_G2), 12_500)
    assert abs(r.g2 - ledger.expected_g2) < 3 * r.error
    assert len(r.side_areas) == 8


def test_g2_needs_side_peaks():
    h = delay_histogram(np.array([0, 10]), 5000, 100)
    with pytest.raises(ValueError):
        estimate_g2(h, 12_500)


# lifetime ----------------------------------------------------------------------------

@pytest.mark.parametrize("irf", [300.0, 100.0, 0.0])
def test_lifetime_recovery(irf):
    r = fit_lifetime(decay_histogram(230.0, irf, 100_000, seed=4), max(irf, 1.0))
    assert r.tau_ns == pytest.approx(0.23, abs=0.01)
    assert abs(r.tau_ns - 0.23) < 4 * r.error_ns + 0.005


def test_lifetime_long_decay():
    r = fit_lifetime(decay_histogram(1200.0, 300.0, 100_000, seed=5, span_ps=12_000, bin_ps=32), 300.0)
    assert r.tau_ns == pytest.approx(1.2, rel=0.03)


def test_lifetime_flat_histogram_unconstrained():
    x = np.arange(-4000, 4001, 16)
    y = np.random.default_rng(0).poisson(50, x.size)
    with pytest.raises(FitError):
        fit_lifetime(Histogram(x, y, 16), 300.0)


def test_lifetime_empty():
    x = np.arange(-400, 401, 16)
    with pytest.raises(FitError):
        fit_lifetime(Histogram(x, np.zeros(x.size, np.int64), 16), 300.0)
