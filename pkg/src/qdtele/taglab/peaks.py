"""Closed-form Gaussian ⊗ exponential peak shapes and their gradients.

All shapes are unit-area densities in 1/ps. Gradients are returned in the
order (d/dt, d/dsigma, d/dtau).
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc, erfcx

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def sigma_from_fwhm(fwhm: float) -> float:
    return fwhm / FWHM_PER_SIGMA


def emg(t: np.ndarray, sigma: float, tau: float) -> np.ndarray:
    """Gaussian (width ``sigma``) convolved with a one-sided decay ``exp(-t/tau)/tau``."""
    return emg_with_grad(t, sigma, tau)[0]


def emg_with_grad(t, sigma: float, tau: float):
    t = np.asarray(t, dtype=float)
    if sigma <= 0.0:
        pos = t >= 0
        f = np.where(pos, np.exp(-np.where(pos, t, 0.0) / tau) / tau, 0.0)
        return f, -f / tau, np.zeros_like(f), f * (t / tau**2 - 1.0 / tau)
    z = (sigma / tau - t / sigma) / _SQRT2
    gauss = np.exp(-0.5 * (t / sigma) ** 2)
    f = np.empty_like(t)
    # erfcx keeps the z >= 0 branch finite; for z < 0 the plain exponent is bounded
    hi = z >= 0
    f[hi] = erfcx(z[hi]) * gauss[hi] / (2.0 * tau)
    lo = ~hi
    f[lo] = np.exp(sigma**2 / (2 * tau**2) - t[lo] / tau) * erfc(z[lo]) / (2.0 * tau)
    g = gauss / (tau * _SQRT2PI)
    df_dt = -f / tau + g / sigma
    df_ds = f * sigma / tau**2 - g * (t / sigma**2 + 1.0 / tau)
    df_dtau = f * (t / tau**2 - 1.0 / tau - sigma**2 / tau**3) + g * sigma / tau**2
    return f, df_dt, df_ds, df_dtau


def sym_emg(t: np.ndarray, sigma: float, tau: float) -> np.ndarray:
    """Gaussian convolved with the two-sided decay ``exp(-|t|/tau)/(2 tau)``."""
    return sym_emg_with_grad(t, sigma, tau)[0]


def sym_emg_with_grad(t, sigma: float, tau: float):
    t = np.asarray(t, dtype=float)
    fp, tp, sp, up = emg_with_grad(t, sigma, tau)
    fm, tm, sm, um = emg_with_grad(-t, sigma, tau)
    return 0.5 * (fp + fm), 0.5 * (tp - tm), 0.5 * (sp + sm), 0.5 * (up + um)
