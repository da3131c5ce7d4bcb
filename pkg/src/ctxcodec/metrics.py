"""Rate/distortion metrics: PSNR, bits per pixel, BD-rate."""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import CubicSpline


def psnr(x, x_hat) -> float:
    """10*log10(1/MSE) for [0,1]-range arrays; inf for identical inputs."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    mse = np.mean((x - x_hat) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def bpp(num_bytes: int, frame_h: int, frame_w: int, frame_count: int) -> float:
    """Total stream bits over total pixel count."""
    return 8.0 * num_bytes / (frame_count * frame_h * frame_w)


def _validate_curve(curve, name):
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 2 or curve.shape[1] != 2:
        raise ValueError(f"{name} must be an (n, 2) array of (bpp, psnr) points")
    if curve.shape[0] < 4:
        raise ValueError(f"{name} needs at least 4 rate points, got {curve.shape[0]}")
    rate, quality = curve[:, 0], curve[:, 1]
    if np.any(np.diff(rate) <= 0):
        raise ValueError(f"{name} rates must be strictly increasing")
    if not np.all(np.isfinite(curve)):
        raise ValueError(f"{name} contains non-finite values")
    return rate, quality


def bd_rate(anchor, test) -> float:
    """Average percent bitrate change of `test` vs `anchor` at equal quality.

    Natural cubic splines of log-rate against PSNR are integrated over the
    shared PSNR interval; negative means the test codec spends fewer bits.
    """
    rate_a, q_a = _validate_curve(anchor, "anchor")
    rate_t, q_t = _validate_curve(test, "test")
    lo = max(q_a.min(), q_t.min())
    hi = min(q_a.max(), q_t.max())
    if hi <= lo:
        raise ValueError("curves have no overlapping quality range")
    order_a, order_t = np.argsort(q_a), np.argsort(q_t)
    spline_a = CubicSpline(q_a[order_a], np.log(rate_a)[order_a], bc_type="natural")
    spline_t = CubicSpline(q_t[order_t], np.log(rate_t)[order_t], bc_type="natural")
    avg_log_diff = (spline_t.integrate(lo, hi) - spline_a.integrate(lo, hi)) / (hi - lo)
    return float((math.exp(avg_log_diff) - 1.0) * 100.0)
