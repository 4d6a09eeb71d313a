"""Randomised torso phantoms with a left-ventricular myocardial shell."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..physics.geometry import GeometryError

MU_SOFT = 0.15
MU_LUNG = 0.04
MU_BONE = 0.25
LUNG_ACTIVITY = 0.3
BONE_ACTIVITY = 0.5
MIN_EXTENT = 8


@dataclass
class ShellGeometry:
    """Myocardial shell in scanner coordinates (mm).

    ``frame`` columns are the local axes; the third is the long axis and
    points from the base towards the apex.
    """

    center: np.ndarray
    frame: np.ndarray
    outer: np.ndarray
    inner: np.ndarray

    def local(self, points: np.ndarray) -> np.ndarray:
        return (points - self.center) @ self.frame

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "frame": self.frame.tolist(),
            "outer": self.outer.tolist(),
            "inner": self.inner.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShellGeometry":
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("center", "frame", "outer", "inner")})


@dataclass
class Phantom:
    activity: np.ndarray
    mu: np.ndarray
    shell: ShellGeometry
    metadata: dict = field(default_factory=dict)

    @property
    def myocardium(self) -> np.ndarray:
        return self.metadata["_masks"]["myocardium"]


def rotation_frame(azimuth: float, elevation: float, roll: float) -> np.ndarray:
    """Orthonormal frame whose third column points along (azimuth, elevation)."""
    e3 = np.array(
        [math.cos(elevation) * math.cos(azimuth), math.cos(elevation) * math.sin(azimuth), math.sin(elevation)]
    )
    ref = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(ref, e3)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    c, s = math.cos(roll), math.sin(roll)
    e1, e2 = c * e1 + s * e2, -s * e1 + c * e2
    return np.stack([e1, e2, e3], axis=1)


def shell_coordinates(shell: ShellGeometry, points: np.ndarray):
    """Normalised radius (1 on the outer surface), polar angle from apex, azimuth."""
    loc = shell.local(points) / shell.outer
    rad = np.linalg.norm(loc, axis=-1)
    safe = np.where(rad > 0, rad, 1.0)
    theta = np.arccos(np.clip(loc[..., 2] / safe, -1.0, 1.0))
    phi = np.mod(np.arctan2(loc[..., 1], loc[..., 0]), 2 * np.pi)
    return rad, theta, phi


def shell_mask(shell: ShellGeometry, points: np.ndarray) -> np.ndarray:
    loc = shell.local(points)
    outer = np.sum((loc / shell.outer) ** 2, axis=-1) <= 1.0
    inner = np.sum((loc / shell.inner) ** 2, axis=-1) < 1.0
    return outer & ~inner


def generate_phantom(seed, grid=(32, 32, 16), voxel_size_mm: float = 4.0, *, shell=None, defect=None, myo_ratio=None) -> Phantom:
    """Draw a phantom.

    ``shell`` overrides the random myocardium placement. ``defect`` is
    ``{"theta": (lo, hi), "phi": (lo, hi), "factor": f}`` in radians of the
    shell's own coordinates; myocardial activity inside that patch is scaled
    by ``f``.
    """
    grid = tuple(int(g) for g in grid)
    if len(grid) != 3 or min(grid) < MIN_EXTENT:
        raise GeometryError(f"grid {grid} too small to contain the organs (min extent {MIN_EXTENT})")
    rng = np.random.default_rng(seed)
    half = 0.5 * np.asarray(grid, dtype=float) * voxel_size_mm
    axes = [-half[i] + (np.arange(n) + 0.5) * voxel_size_mm for i, n in enumerate(grid)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    x, y, z = X / half[0], Y / half[1], Z / half[2]

    ax, ay = rng.uniform(0.80, 0.95), rng.uniform(0.62, 0.80)
    torso = (x / ax) ** 2 + (y / ay) ** 2 <= 1.0

    lungs = np.zeros(grid, dtype=bool)
    lx = rng.uniform(0.36, 0.46)
    for side in (-1.0, 1.0):
        c = np.array([side * lx, rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)])
        r = np.array([rng.uniform(0.17, 0.25), rng.uniform(0.30, 0.42), rng.uniform(0.7, 1.0)])
        lungs |= ((x - c[0]) / r[0]) ** 2 + ((y - c[1]) / r[1]) ** 2 + ((z - c[2]) / r[2]) ** 2 <= 1.0
    lungs &= torso

    sx = rng.uniform(-0.05, 0.05)
    s_hw = rng.uniform(0.09, 0.13)
    s_lo = -ay * rng.uniform(0.85, 0.92)
    spine = (np.abs(x - sx) <= s_hw) & (y >= s_lo) & (y <= s_lo + rng.uniform(0.22, 0.3)) & torso

    points = np.stack([X, Y, Z], axis=-1)
    if shell is None:
        h = float(min(half[0], half[1]))
        a = rng.uniform(0.30, 0.36) * h
        outer = np.array([a, a * rng.uniform(0.9, 1.0), a * rng.uniform(1.3, 1.5)])
        t = max(0.4 * a, 1.5 * voxel_size_mm)
        inner = outer - t
        centre = np.array(
            [rng.uniform(0.0, 0.2) * half[0], rng.uniform(0.0, 0.2) * half[1], rng.uniform(-0.15, 0.15) * half[2]]
        )
        frame = rotation_frame(
            math.radians(rng.uniform(20, 70)), math.radians(rng.uniform(-20, 0)), rng.uniform(0, 2 * math.pi)
        )
        shell = ShellGeometry(centre, frame, outer, inner)
    myo = shell_mask(shell, points) & torso & ~spine
    cavity = (np.sum((shell.local(points) / shell.inner) ** 2, axis=-1) < 1.0) & torso
    ratio = rng.uniform(4.0, 8.0) if myo_ratio is None else float(myo_ratio)

    mu = np.zeros(grid)
    mu[torso] = MU_SOFT
    mu[lungs] = MU_LUNG
    mu[spine] = MU_BONE

    activity = np.zeros(grid)
    activity[torso] = 1.0
    activity[lungs] = LUNG_ACTIVITY
    activity[spine] = BONE_ACTIVITY
    activity[cavity & ~lungs] = 1.0
    activity[myo] = ratio
    lungs &= ~myo
    mu[myo] = MU_SOFT
    if defect is not None:
        _, th, ph = shell_coordinates(shell, points)
        t_lo, t_hi = defect["theta"]
        p_lo, p_hi = defect["phi"]
        in_phi = (ph >= p_lo) & (ph < p_hi) if p_lo <= p_hi else (ph >= p_lo) | (ph < p_hi)
        patch = myo & (th >= t_lo) & (th < t_hi) & in_phi
        activity[patch] *= defect["factor"]

    background = torso & ~lungs & ~spine & ~myo
    meta = {
        "seed": seed if isinstance(seed, int) else None,
        "myo_ratio": ratio,
        "torso_axes": [ax, ay],
        "shell": shell.to_dict(),
        "_masks": {"torso": torso, "lungs": lungs, "spine": spine, "myocardium": myo, "background": background},
    }
    return Phantom(activity=activity, mu=mu, shell=shell, metadata=meta)
