"""Forward projection, back projection and ML-EM reconstruction.

Projection stacks are arrays of shape ``(U, V, D)``; volumes and mu-maps are
arrays of shape ``(Nx, Ny, Nz)`` with mu in cm^-1.
"""
from __future__ import annotations

import logging

import numpy as np

from .geometry import GeometryError
from .system_matrix import SystemMatrix

log = logging.getLogger(__name__)

MU_MAX = 0.5
EM_EPS = 1e-12


def check_mu(A: SystemMatrix, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != A.geometry.volume_grid:
        raise GeometryError(f"mu-map shape {mu.shape} != volume grid {A.geometry.volume_grid}")
    if np.any(mu < 0) or np.any(mu > MU_MAX):
        raise ValueError(f"mu-map values must lie in [0, {MU_MAX}] cm^-1")
    return mu


def _check_volume(A: SystemMatrix, vol) -> np.ndarray:
    vol = np.asarray(vol, dtype=np.float64)
    if vol.shape != A.geometry.volume_grid:
        raise GeometryError(f"volume shape {vol.shape} != volume grid {A.geometry.volume_grid}")
    return vol


def _check_projection(A: SystemMatrix, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != A.geometry.projection_shape:
        raise GeometryError(
            f"projection shape {p.shape} != {A.geometry.projection_shape} "
            f"({A.geometry.n_detectors} detectors)"
        )
    return p


def forward_project(A: SystemMatrix, vol, mu=None) -> np.ndarray:
    """Expected counts per detector pixel; attenuated when ``mu`` is given."""
    vol = _check_volume(A, vol)
    M = A.csr if mu is None else A.attenuated(check_mu(A, mu))
    return (M @ vol.ravel()).reshape(A.geometry.projection_shape)


def back_project(A: SystemMatrix, p) -> np.ndarray:
    p = _check_projection(A, p)
    return A.rmatvec(p.ravel()).reshape(A.geometry.volume_grid)


def poisson_loglik(p: np.ndarray, q: np.ndarray) -> float:
    """Poisson log-likelihood up to the data-only constant: sum p log q - q."""
    q = np.maximum(q, EM_EPS)
    return float(np.sum(p * np.log(q) - q))


def mlem_reconstruct(
    A: SystemMatrix,
    p,
    mu=None,
    iters: int = 30,
    detectors=None,
    x0=None,
    history: bool = False,
):
    """Multiplicative EM for Poisson emission data.

    ``detectors`` restricts the data model to a subset of detector indices
    (used for limited-view acquisitions, whose missing views are not zero
    measurements). With ``history=True`` returns ``(x, loglik_list)`` where
    the list holds the likelihood of the start image and of every iterate.
    """
    p = _check_projection(A, p)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if np.any(p < 0):
        raise ValueError("projection counts must be non-negative")
    M = A.csr if mu is None else A.attenuated(check_mu(A, mu))
    y = p.ravel()
    if detectors is not None:
        det = np.arange(A.shape[0]) % A.geometry.n_detectors
        keep = np.isin(det, np.asarray(list(detectors)))
        M = M[keep]
        y = y[keep]
    Mt = M.T.tocsr()
    sens = Mt @ np.ones(M.shape[0])
    active = sens > 0
    x = np.where(active, 1.0, 0.0) if x0 is None else np.where(active, np.asarray(x0, float).ravel(), 0.0)
    clamped = 0
    lls = []
    q = M @ x
    if history:
        lls.append(poisson_loglik(y, q))
    for _ in range(iters):
        zero = q <= 0
        bad = zero & (y > 0)
        clamped += int(bad.sum())
        ratio = np.where(zero, np.where(y > 0, y / EM_EPS, 0.0), y / np.where(zero, 1.0, q))
        upd = Mt @ ratio
        x = np.where(active, x * upd / np.where(active, sens, 1.0), 0.0)
        q = M @ x
        if history:
            lls.append(poisson_loglik(y, q))
    if clamped:
        log.warning("ML-EM clamped %d zero-expectation bins with positive counts", clamped)
    x = x.reshape(A.geometry.volume_grid)
    return (x, lls) if history else x
