import numpy as np


def compute_boundary(mu) -> np.ndarray:
    """Boundary label: |d mu/dx| + |d mu/dy| + |d mu/dz| per voxel.

    Central differences in the interior, one-sided at the faces, unit
    (voxel) spacing.
    """
    mu = np.asarray(mu, dtype=np.float64)
    grads = np.gradient(mu)
    if mu.ndim == 1:
        grads = [grads]
    return np.sum([np.abs(g) for g in grads], axis=0)
