"""Voxel-wise image quality metrics."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 7
K1 = 0.01
K2 = 0.03


class MetricError(ValueError):
    """Metric undefined for the given reference."""


def _pair(x_hat, x):
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    return x_hat, x


def nmse(x_hat, x) -> float:
    """Normalised mean squared error in percent: ||x_hat - x||^2 / ||x||^2 * 100."""
    x_hat, x = _pair(x_hat, x)
    den = float(np.sum(x * x))
    if den == 0.0:
        raise MetricError("NMSE is undefined for an all-zero reference")
    return float(np.sum((x_hat - x) ** 2)) / den * 100.0


def psnr(x_hat, x) -> float:
    """10 log10(max(x)^2 / MSE) in dB; infinite for identical inputs."""
    x_hat, x = _pair(x_hat, x)
    mse = float(np.mean((x_hat - x) ** 2))
    peak = float(np.max(x))
    if peak <= 0:
        raise MetricError("PSNR needs a positive reference peak")
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _box_mean(a: np.ndarray, win) -> np.ndarray:
    """Mean over every fully contained window, one axis at a time."""
    for ax, w in enumerate(win):
        a = sliding_window_view(a, w, axis=ax).mean(axis=-1)
    return a


def ssim(x_hat, x, window: int = SSIM_WINDOW, k1: float = K1, k2: float = K2) -> float:
    """Mean structural similarity over all valid uniform windows.

    The window is ``window`` voxels per axis (clipped to the extent), local
    statistics are population moments, and the dynamic range is max(x).
    """
    x_hat, x = _pair(x_hat, x)
    L = float(np.max(x))
    if L <= 0:
        raise MetricError("SSIM needs a positive reference peak")
    win = tuple(min(window, n) for n in x.shape)
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    mx = _box_mean(x_hat, win)
    my = _box_mean(x, win)
    sxx = _box_mean(x_hat * x_hat, win) - mx * mx
    syy = _box_mean(x * x, win) - my * my
    sxy = _box_mean(x_hat * x, win) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(np.mean(s))
