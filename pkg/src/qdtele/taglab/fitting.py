"""Poisson-weighted peak fits: HOM five-peak cluster, g², and lifetimes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import least_squares, minimize

from .coincidences import Histogram
from .peaks import FWHM_PER_SIGMA, emg_with_grad, sym_emg_with_grad

MAX_ITER = 200
REL_TOL = 1e-8
HOM_DELAY_PS = 1800.0


class FitError(RuntimeError):
    """Fit did not converge or the data cannot constrain the model."""


@dataclass
class FitResult:
    params: np.ndarray
    errors: np.ndarray
    cov: np.ndarray
    reduced_chi2: float
    method: str
    nfev: int
    names: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "parameters": {n: float(v) for n, v in zip(self.names, self.params)},
            "errors": {n: float(e) for n, e in zip(self.names, self.errors)},
            "reduced_chi2": float(self.reduced_chi2),
            "method": self.method,
        }


ModelFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def poisson_fit(
    model: ModelFn,
    y: np.ndarray,
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    names: tuple[str, ...] = (),
) -> FitResult:
    """Minimize Σ((μ - y)/σ)² with σ² = max(y, 1).

    Damped Gauss-Newton (trust-region reflective) with the analytic
    Jacobian from ``model``; falls back to Nelder-Mead when the Jacobian is
    rank deficient or the iteration cap is hit.
    """
    y = np.asarray(y, dtype=float)
    w = 1.0 / np.sqrt(np.maximum(y, 1.0))

    def resid(p):
        return (model(p)[0] - y) * w

    def jac(p):
        return model(p)[1] * w[:, None]

    x0 = np.clip(np.asarray(x0, dtype=float), lower, upper)
    res = least_squares(
        resid, x0, jac=jac, bounds=(lower, upper), method="trf", x_scale="jac",
        ftol=REL_TOL, xtol=REL_TOL, gtol=REL_TOL, max_nfev=MAX_ITER,
    )
    method = "trust-region"
    p, nfev = res.x, res.nfev
    jr = jac(p)
    degenerate = np.linalg.matrix_rank(jr) < p.size
    if res.status <= 0 or degenerate:

        def chi2(q):
            return float(np.sum(resid(q) ** 2))

        nm = minimize(
            chi2, p, method="Nelder-Mead", bounds=list(zip(lower, upper)),
            options={"maxiter": 200 * p.size, "xatol": REL_TOL, "fatol": REL_TOL, "adaptive": True},
        )
        if not nm.success and res.status <= 0:
            raise FitError(f"fit did not converge: {res.message}; simplex: {nm.message}")
        if nm.fun < chi2(p):
            p = nm.x
        method, nfev = "nelder-mead", nfev + nm.nfev
        jr = jac(p)
    cov = np.linalg.pinv(jr.T @ jr)
    dof = max(y.size - p.size, 1)
    return FitResult(
        params=p,
        errors=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        cov=cov,
        reduced_chi2=float(np.sum(resid(p) ** 2) / dof),
        method=method,
        nfev=int(nfev),
        names=names,
    )


# HOM ------------------------------------------------------------------------

HOM_NAMES = ("a_m2", "a_m1", "a_0", "a_p1", "a_p2", "fwhm_ps", "tau_ps", "background")
_OFFSETS = (-2, -1, 0, 1, 2)


def hom_model(x: np.ndarray, p: np.ndarray, bin_ps: float, delay_ps: float):
    """Five-peak cluster counts per bin and Jacobian wrt ``HOM_NAMES``."""
    areas, fwhm, tau, bg = p[:5], p[5], p[6], p[7]
    sigma = fwhm / FWHM_PER_SIGMA
    mu = np.full(x.size, bg, dtype=float)
    jac = np.zeros((x.size, 8))
    for i, k in enumerate(_OFFSETS):
        f, _, fs, ft = sym_emg_with_grad(x - k * delay_ps, sigma, tau)
        mu += bin_ps * areas[i] * f
        jac[:, i] = bin_ps * f
        jac[:, 5] += bin_ps * areas[i] * fs / FWHM_PER_SIGMA
        jac[:, 6] += bin_ps * areas[i] * ft
    jac[:, 7] = 1.0
    return mu, jac


@dataclass
class HomFitResult:
    areas: dict[int, float]
    area_errors: dict[int, float]
    central_area_data: float
    fwhm_ps: float
    tau_ps: float
    background: float
    visibility: float
    visibility_error: float
    fit: FitResult = field(repr=False)

    def as_dict(self) -> dict:
        return {
            "areas": {str(k): v for k, v in self.areas.items()},
            "area_errors": {str(k): v for k, v in self.area_errors.items()},
            "central_area_data": self.central_area_data,
            "fwhm_ps": self.fwhm_ps,
            "tau_ps": self.tau_ps,
            "background": self.background,
            "visibility": self.visibility,
            "visibility_error": self.visibility_error,
            **{k: v for k, v in self.fit.as_dict().items() if k != "parameters"},
            "parameters": self.fit.as_dict()["parameters"],
        }


def _check_not_degenerate(y: np.ndarray) -> None:
    if y.sum() == 0:
        raise FitError("degenerate histogram: no counts")
    if np.count_nonzero(y) <= 1:
        raise FitError("degenerate histogram: all counts in one bin")


def fit_hom(
    h: Histogram,
    delay_ps: float = HOM_DELAY_PS,
    rep_period_ps: float | None = None,
    fwhm0_ps: float = 600.0,
    tau0_ps: float = 250.0,
) -> HomFitResult:
    """Fit the five-peak HOM cluster and extract the interference visibility.

    Side peaks come from the fit. The central area is taken from the data
    in ``|t| < delay/2`` after subtracting the fitted side-peak tails and
    background, corrected for the central-peak fraction outside that
    window, so the estimate does not depend on the central peak shape.
    """
    half = 2.5 * delay_ps
    if rep_period_ps is not None:
        half = min(half, rep_period_ps / 2.0)
    hw = h.window(-half, half)
    x, y = hw.centers_ps, hw.counts.astype(float)
    if x.size < 8 or x.min() > -2 * delay_ps or x.max() < 2 * delay_ps:
        raise FitError("histogram does not cover the five-peak cluster")
    _check_not_degenerate(y)
    b = hw.bin_ps

    guesses = []
    for k in _OFFSETS:
        m = np.abs(x - k * delay_ps) < delay_ps / 2
        guesses.append(max(y[m].sum(), 1.0))
    edge = np.abs(x) > 2.25 * delay_ps
    bg0 = float(np.median(y[edge])) if edge.any() else 0.0
    x0 = np.array([*guesses, fwhm0_ps, tau0_ps, bg0])
    big = 10 * max(y.sum(), 1.0)
    lower = np.array([0, 0, 0, 0, 0, b / 4, 1.0, 0.0])
    upper = np.array([big] * 5 + [delay_ps, 2 * delay_ps, max(y.max(), 1.0)])

    def model(p):
        return hom_model(x, p, b, delay_ps)

    fit = poisson_fit(model, y, x0, lower, upper, HOM_NAMES)
    p = fit.params

    central = np.abs(x) < delay_ps / 2
    data_sum = float(y[central].sum())

    def visibility(q: np.ndarray, d: float) -> float:
        side = q.copy()
        side[2] = 0.0
        contam = hom_model(x[central], side, b, delay_ps)[0].sum()
        unit = q.copy()
        unit[:5] = 0.0
        unit[2] = 1.0
        unit[7] = 0.0
        frac = hom_model(x[central], unit, b, delay_ps)[0].sum()
        a0 = (d - contam) / frac
        return a0, 1.0 - 2.0 * a0 / (q[1] + q[3])

    a0, vis = visibility(p, data_sum)
    grad = np.zeros(p.size)
    for i in range(p.size):
        if i == 2:
            continue
        step = 1e-6 * max(abs(p[i]), 1.0)
        hi, lo = p.copy(), p.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (visibility(hi, data_sum)[1] - visibility(lo, data_sum)[1]) / (2 * step)
    dv_dd = (visibility(p, data_sum + 1.0)[1] - vis)
    var = float(grad @ fit.cov @ grad) + dv_dd**2 * max(data_sum, 1.0)

    return HomFitResult(
        areas={k: float(p[i]) for i, k in enumerate(_OFFSETS)},
        area_errors={k: float(fit.errors[i]) for i, k in enumerate(_OFFSETS)},
        central_area_data=float(a0),
        fwhm_ps=float(p[5]),
        tau_ps=float(p[6]),
        background=float(p[7]),
        visibility=float(vis),
        visibility_error=math.sqrt(var),
        fit=fit,
    )


# g2 -------------------------------------------------------------------------


@dataclass(frozen=True)
class G2Result:
    g2: float
    error: float
    central_area: int
    side_areas: tuple[int, ...]


def estimate_g2(h: Histogram, rep_period_ps: float) -> G2Result:
    """Central-peak area over the mean side-peak area of a pulsed histogram."""
    x, y = h.centers_ps, h.counts
    half = rep_period_ps / 2.0
    lo_edge, hi_edge = x.min() - h.bin_ps / 2, x.max() + h.bin_ps / 2
    central = int(y[np.abs(x) < half].sum())
    sides = []
    k = 1
    while True:
        found = False
        for c in (-k * rep_period_ps, k * rep_period_ps):
            if c - half >= lo_edge and c + half <= hi_edge:
                sides.append(int(y[np.abs(x - c) < half].sum()))
                found = True
        if not found:
            break
        k += 1
    if not sides:
        raise ValueError("no complete side peaks inside the histogram span")
    total_side = sum(sides)
    if total_side == 0:
        raise ValueError("side peaks are empty")
    mean_side = total_side / len(sides)
    g2 = central / mean_side
    rel = math.sqrt(1.0 / max(central, 1) + 1.0 / total_side)
    err = g2 * rel if central > 0 else 1.0 / mean_side
    return G2Result(g2, err, central, tuple(sides))


# lifetime -------------------------------------------------------------------

LIFETIME_NAMES = ("amplitude", "t0_ps", "tau_ps", "background")


@dataclass(frozen=True)
class LifetimeResult:
    tau_ns: float
    error_ns: float
    fit: FitResult

    def as_dict(self) -> dict:
        return {"tau_ns": self.tau_ns, "error_ns": self.error_ns, **self.fit.as_dict()}


def lifetime_model(x: np.ndarray, p: np.ndarray, bin_ps: float, sigma: float):
    amp, t0, tau, bg = p
    f, ft, _, fu = emg_with_grad(x - t0, sigma, tau)
    mu = bin_ps * amp * f + bg
    jac = np.column_stack([bin_ps * f, -bin_ps * amp * ft, bin_ps * amp * fu, np.ones_like(f)])
    return mu, jac


def fit_lifetime(h: Histogram, irf_fwhm_ps: float, tau0_ps: float | None = None) -> LifetimeResult:
    """Fit Gaussian-IRF ⊗ exponential decay; returns the decay constant in ns."""
    x, y = h.centers_ps, h.counts.astype(float)
    _check_not_degenerate(y)
    b = h.bin_ps
    sigma = irf_fwhm_ps / FWHM_PER_SIGMA
    span = x.max() - x.min()
    peak = float(x[np.argmax(y)])
    if tau0_ps is None:
        after = (x > peak) & (y > 0)
        tau0_ps = max(float(np.sum(y[after] * (x[after] - peak)) / max(y[after].sum(), 1.0)), b)
    pre = x < peak - 3 * sigma - b
    bg0 = float(np.median(y[pre])) if pre.sum() > 3 else 0.0
    amp0 = max(y.sum() - bg0 * y.size, 1.0)
    tau_max = 5.0 * span
    x0 = np.array([amp0, peak - min(sigma, tau0_ps), min(tau0_ps, tau_max / 2), bg0])
    lower = np.array([0.0, x.min(), b / 10, 0.0])
    upper = np.array([10 * max(y.sum(), 1.0), x.max(), tau_max, max(y.max(), 1.0)])

    fit = poisson_fit(lambda p: lifetime_model(x, p, b, sigma), y, x0, lower, upper, LIFETIME_NAMES)
    tau, err = fit.params[2], fit.errors[2]
    if tau >= 0.99 * tau_max or not np.isfinite(err) or err > tau:
        raise FitError(f"decay constant not constrained by the data (tau={tau:.3g} ps)")
    return LifetimeResult(tau / 1000.0, err / 1000.0, fit)
