"""Segment errors, correlation and paired significance tests."""
from __future__ import annotations

import numpy as np
from scipy.stats import t as student_t


def ape(pred, ref) -> np.ndarray:
    """Absolute percent error per segment."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if np.any(ref <= 0):
        raise ValueError("APE needs positive reference values")
    return np.abs(pred - ref) / ref * 100.0


def correlation_stats(pred, ref) -> tuple[float, float]:
    """Pearson r over pooled values and R^2 of the identity line ``pred = ref``."""
    x = np.ravel(np.asarray(pred, dtype=np.float64))
    y = np.ravel(np.asarray(ref, dtype=np.float64))
    xc, yc = x - x.mean(), y - y.mean()
    r = float(np.sum(xc * yc) / np.sqrt(np.sum(xc * xc) * np.sum(yc * yc)))
    ss_tot = float(np.sum(yc * yc))
    r2 = 1.0 - float(np.sum((x - y) ** 2)) / ss_tot
    return r, r2


def paired_t(a, b) -> tuple[float, float]:
    """Two-sided paired t-test; returns ``(t, p)``.

    All-zero differences give ``(0, 1)``; a constant non-zero difference
    (zero variance) gives ``(+-inf, 0)``.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = d.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return float(np.sign(mean) * np.inf), 0.0
    t = mean / (sd / np.sqrt(n))
    return float(t), float(2.0 * student_t.sf(abs(t), n - 1))


def paired_ttest(a, b) -> float:
    return paired_t(a, b)[1]
