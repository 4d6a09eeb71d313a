"""17-segment polar maps of the myocardial shell.

The shell is sampled along rays from its centre. Each ray is given by a
polar angle theta (0 at the apex) and an azimuth phi in the shell frame;
along the ray the volume is read at nearest voxels between the inner and
outer surface and the maximum is kept. Rays are binned into the standard
layout: apex (theta < 30 deg), apical ring (30-60, 4 sectors of 90 deg),
mid ring (60-90, 6 sectors) and basal ring (90-120, 6 sectors).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data.phantom import ShellGeometry
from ..physics.geometry import GeometryError

# (theta_lo, theta_hi, sectors, first segment number)
RINGS = ((90.0, 120.0, 6, 1), (60.0, 90.0, 6, 7), (30.0, 60.0, 4, 13), (0.0, 30.0, 1, 17))
N_SEGMENTS = 17


@dataclass
class PolarMap:
    values: np.ndarray  # normalised so the maximum segment is 100
    raw: np.ndarray  # segment means before normalisation
    counts: np.ndarray  # rays per segment

    def __post_init__(self):
        if len(self.values) != N_SEGMENTS:
            raise ValueError("a polar map has exactly 17 segments")


def segment_of(theta_deg: np.ndarray, phi_deg: np.ndarray) -> np.ndarray:
    """Segment number (1..17) per ray; 0 outside the sampled range."""
    seg = np.zeros(np.shape(theta_deg), dtype=int)
    for lo, hi, n, first in RINGS:
        inside = (theta_deg >= lo) & (theta_deg < hi)
        width = 360.0 / n
        # sectors are centred on phi = 0, 60, ... (or 0, 90, ... on the apical ring)
        sector = np.floor(np.mod(phi_deg + 0.5 * width, 360.0) / width).astype(int) % n
        seg = np.where(inside, first + sector, seg)
    return seg


def sampling_rays(n_theta: int = 48, n_phi: int = 72):
    theta = (np.arange(n_theta) + 0.5) * (120.0 / n_theta)
    phi = np.arange(n_phi) * (360.0 / n_phi)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    return T.ravel(), P.ravel()


def polar_map_17(
    volume,
    shell: ShellGeometry,
    voxel_size_mm: float,
    n_theta: int = 48,
    n_phi: int = 72,
    n_radial: int = 9,
) -> PolarMap:
    vol = np.asarray(volume, dtype=np.float64)
    grid = np.asarray(vol.shape)
    lo = -0.5 * grid * voxel_size_mm
    th, ph = sampling_rays(n_theta, n_phi)
    t, p = np.radians(th), np.radians(ph)
    d = np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1)
    # ray parameter s: s = 1 on the outer surface, s_in on the inner one
    s_in = 1.0 / np.sqrt(np.sum((shell.outer * d / shell.inner) ** 2, axis=-1))
    frac = np.linspace(0.0, 1.0, n_radial)
    s = s_in[:, None] + (1.0 - s_in)[:, None] * frac[None, :]
    local = s[..., None] * (shell.outer * d)[:, None, :]
    world = shell.center + local @ shell.frame.T
    idx = np.floor((world - lo) / voxel_size_mm).astype(int)
    valid = np.all((idx >= 0) & (idx < grid), axis=-1)
    idx = np.where(valid[..., None], idx, 0)
    samples = np.where(valid, vol[idx[..., 0], idx[..., 1], idx[..., 2]], -np.inf)
    ray_val = samples.max(axis=1)
    ok = np.isfinite(ray_val)
    seg = segment_of(th, ph)
    raw = np.zeros(N_SEGMENTS)
    counts = np.zeros(N_SEGMENTS, dtype=int)
    for k in range(1, N_SEGMENTS + 1):
        sel = ok & (seg == k)
        counts[k - 1] = int(sel.sum())
        if counts[k - 1] == 0:
            raise GeometryError(f"segment {k} has no samples inside the volume")
        raw[k - 1] = ray_val[sel].mean()
    peak = raw.max()
    if peak <= 0:
        raise GeometryError("polar map has no positive segment")
    return PolarMap(values=raw / peak * 100.0, raw=raw, counts=counts)
