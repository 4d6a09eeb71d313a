"""Noisy full-dose, full-view acquisitions."""
from __future__ import annotations

import numpy as np

from ..physics.geometry import GeometryError
from ..physics.projector import forward_project
from ..physics.system_matrix import SystemMatrix

DEFAULT_COUNTS = 200_000


def expected_projection(A: SystemMatrix, phantom, total_counts: float) -> np.ndarray:
    """Attenuated forward projection scaled to ``total_counts`` expected events."""
    if total_counts <= 0:
        raise ValueError("total_counts must be positive")
    lam = forward_project(A, phantom.activity, phantom.mu)
    s = lam.sum()
    if not s > 0:
        raise GeometryError("forward projection of the phantom is empty")
    return lam * (total_counts / s)


def simulate_acquisition(A: SystemMatrix, phantom, total_counts: float = DEFAULT_COUNTS, seed=None) -> np.ndarray:
    """Poisson draw around :func:`expected_projection`; a zero-activity phantom gives zero counts."""
    if total_counts <= 0:
        raise ValueError("total_counts must be positive")
    if not np.any(phantom.activity > 0):
        return np.zeros(A.geometry.projection_shape)
    lam = expected_projection(A, phantom, total_counts)
    return np.random.default_rng(seed).poisson(lam).astype(np.float64)
