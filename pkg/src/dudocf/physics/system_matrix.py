"""Sparse voxel-to-detector-pixel system matrix and its on-disk cache."""
from __future__ import annotations

import logging
import os
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .._accel import njit
from ..io import as_f32_exact
from .geometry import GeometryError, ScannerGeometry
from .siddon import trace_rays

log = logging.getLogger(__name__)

CACHE_MAGIC = b"DDSM"
_ENTRY = np.dtype([("row", "<u4"), ("col", "<u4"), ("w", "<f4")])
_MEMO: dict[str, "SystemMatrix"] = {}


class SystemMatrix:
    """Immutable CSR system matrix.

    Rows are detector pixels in C order of ``(U, V, D)``, columns are voxels
    in C order of ``(Nx, Ny, Nz)``. Within each row the entries are stored
    in the order the ray meets the voxels, starting at the pinhole; the
    attenuation kernel relies on that ordering.
    """

    def __init__(self, geometry: ScannerGeometry, indptr, indices, weights):
        self.geometry = geometry
        self.shape = (geometry.n_bins, geometry.n_voxels)
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        weights = as_f32_exact(weights)
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise GeometryError("system matrix weights must be finite and non-negative")
        self.csr = sp.csr_matrix((weights, indices, indptr), shape=self.shape)
        self.csc_t = self.csr.T.tocsr()
        # path length (cm) recovered from the weight so a cache round trip is exact
        invsq = _inverse_square(geometry, np.repeat(np.arange(self.shape[0]), np.diff(indptr)), indices)
        self.lengths_cm = weights / invsq * geometry.voxel_size_mm / 10.0
        self.sensitivity = np.asarray(self.csr.sum(axis=0)).ravel()
        self.row_sums = np.asarray(self.csr.sum(axis=1)).ravel()
        for a in (self.lengths_cm, self.sensitivity, self.row_sums):
            a.setflags(write=False)

    @property
    def indptr(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def weights(self) -> np.ndarray:
        return self.csr.data

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.csc_t @ y

    def dense(self) -> np.ndarray:
        return self.csr.toarray()

    def attenuated(self, mu: np.ndarray) -> sp.csr_matrix:
        """Copy of the matrix with every weight scaled by its attenuation factor."""
        f = attenuation_factors(self, mu)
        return sp.csr_matrix((self.weights * f, self.indices, self.indptr), shape=self.shape)


def _inverse_square(geom: ScannerGeometry, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """(R / r)^2 with r the pinhole-to-voxel-centre distance of each entry."""
    det = rows % geom.n_detectors
    centres = geom.voxel_centers()
    r2 = np.sum((centres[cols] - geom.pinholes[det]) ** 2, axis=1)
    return geom.pinhole_radius**2 / r2


@njit
def _attenuation_kernel(indptr, indices, lengths_cm, mu, out):
    for r in range(indptr.shape[0] - 1):
        acc = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            m = mu[indices[k]] * lengths_cm[k]
            out[k] = np.exp(-(acc + 0.5 * m))
            acc += m


def attenuation_factors(A: SystemMatrix, mu: np.ndarray) -> np.ndarray:
    """Survival probability for every matrix entry.

    For entry (ray, voxel) the line integral of ``mu`` (cm^-1) runs from the
    voxel's segment midpoint back to the pinhole along the same ray. Result
    is aligned with ``A.weights``; values lie in (0, 1].
    """
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != A.geometry.volume_grid:
        raise GeometryError(f"mu shape {mu.shape} != volume grid {A.geometry.volume_grid}")
    if np.any(mu < 0):
        raise ValueError("attenuation map must be non-negative")
    out = np.empty(A.nnz)
    _attenuation_kernel(
        np.asarray(A.indptr, np.int64), np.asarray(A.indices, np.int64), A.lengths_cm, mu.ravel(), out
    )
    return out


def build_system_matrix(geom: ScannerGeometry, cache: bool | str | os.PathLike = True) -> SystemMatrix:
    """Trace one ray per detector pixel through its pinhole and assemble the matrix.

    Weight of an entry = (intersection length in voxel units) x (R / r)^2.
    ``cache=True`` uses ``$DUDO_CACHE`` (or ``~/.cache/dudocf``); a path
    selects a directory explicitly; ``False`` disables the disk cache.
    """
    key = geom.hash()
    if key in _MEMO:
        return _MEMO[key]
    cache_dir = _cache_dir(cache)
    path = cache_dir / f"sysmat_{key[:16]}.bin" if cache_dir is not None else None
    A = None
    if path is not None and path.exists():
        try:
            A = load_system_matrix(path, geom)
        except (OSError, ValueError) as exc:
            log.warning("ignoring unreadable system-matrix cache %s: %s", path, exc)
    if A is None:
        A = _trace_matrix(geom)
        if path is not None:
            try:
                cache_dir.mkdir(parents=True, exist_ok=True)
                save_system_matrix(path, A)
            except OSError as exc:
                log.warning("could not write system-matrix cache %s: %s", path, exc)
    _MEMO[key] = A
    return A


def _trace_matrix(geom: ScannerGeometry) -> SystemMatrix:
    origins, dirs = geom.rays()
    lo, _ = geom.volume_bounds
    counts, cols, lens = trace_rays(origins, dirs, geom.volume_grid, lo, geom.voxel_size_mm)
    mask = np.arange(cols.shape[1])[None, :] < counts[:, None]
    rows = np.repeat(np.arange(len(counts)), counts)
    indices = cols[mask]
    lengths_vox = lens[mask] / geom.voxel_size_mm
    weights = lengths_vox * _inverse_square(geom, rows, indices)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    for d in range(geom.n_detectors):
        if counts.reshape(-1, geom.n_detectors)[:, d].sum() == 0:
            raise GeometryError(f"detector {d} does not view the volume")
    return SystemMatrix(geom, indptr, indices, weights)


def _cache_dir(cache) -> Path | None:
    if cache is False or cache is None:
        return None
    if cache is True:
        env = os.environ.get("DUDO_CACHE")
        return Path(env) if env else Path.home() / ".cache" / "dudocf"
    return Path(cache)


def save_system_matrix(path, A: SystemMatrix) -> None:
    """Header: magic, 32-byte geometry hash, u64 entry count; then (u32 row, u32 col, f32 w)."""
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    rec = np.empty(A.nnz, dtype=_ENTRY)
    rec["row"] = rows
    rec["col"] = A.indices
    rec["w"] = A.weights
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC + A.geometry.digest() + struct.pack("<Q", A.nnz))
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def load_system_matrix(path, geom: ScannerGeometry) -> SystemMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CACHE_MAGIC:
        raise ValueError("bad magic")
    if blob[4:36] != geom.digest():
        raise ValueError("geometry hash mismatch")
    (n,) = struct.unpack_from("<Q", blob, 36)
    rec = np.frombuffer(blob, dtype=_ENTRY, count=n, offset=44)
    rows = rec["row"].astype(np.int64)
    if n and np.any(np.diff(rows) < 0):
        raise ValueError("entries not grouped by row")
    counts = np.bincount(rows, minlength=geom.n_bins)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return SystemMatrix(geom, indptr, rec["col"].astype(np.int64), rec["w"].astype(np.float64))
