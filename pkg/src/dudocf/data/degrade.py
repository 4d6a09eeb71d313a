"""Count-domain degradations: dose thinning and limited-view masking."""
from __future__ import annotations

import numpy as np
from scipy.stats import binom

from ..physics.geometry import GeometryError, ScannerGeometry

LV_DETECTORS = 9


def _as_counts(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p != np.round(p)):
        raise ValueError("thinning needs non-negative integer counts")
    return p


def apply_low_dose(p, rate: float, seed) -> np.ndarray:
    """Binomial thinning: every count survives independently with probability ``rate``.

    One uniform is drawn per bin and pushed through the binomial inverse
    CDF. Because the draw does not depend on the bin's count, thinning
    commutes exactly with any mask that zeroes whole bins.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"dose rate must lie in (0, 1], got {rate}")
    p = _as_counts(p)
    if rate == 1.0:
        return p.copy()
    u = np.random.default_rng(seed).random(p.shape)
    out = binom.ppf(u, p, rate)
    return np.maximum(out, 0.0)


def lv_detectors(geom: ScannerGeometry) -> np.ndarray:
    """Indices of the detectors kept in a limited-view acquisition (centre column)."""
    start, stop = geom.center_column()
    if stop - start != LV_DETECTORS:
        raise GeometryError(
            f"limited-view mask needs a {LV_DETECTORS}-detector centre column, layout is {geom.column_layout}"
        )
    return np.arange(start, stop)


def lv_mask(geom: ScannerGeometry) -> np.ndarray:
    """Boolean per-detector mask, True for kept detectors."""
    m = np.zeros(geom.n_detectors, dtype=bool)
    m[lv_detectors(geom)] = True
    return m


def apply_limited_view(p, geom: ScannerGeometry) -> np.ndarray:
    """Keep the centre-column detectors and zero the peripheral ones."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != geom.n_detectors:
        raise GeometryError(f"projection has {p.shape[-1]} detectors, geometry has {geom.n_detectors}")
    return p * lv_mask(geom)
