"""Multi-pinhole scanner geometry.

Detectors sit behind ideal point apertures on a cylinder around the body
axis (z). They are grouped into columns stacked along z; each column spreads
its detectors over the same angular arc and every optical axis aims at the
volume centre. Detector index order is column by column, top to bottom.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Invalid or degenerate scanner configuration."""


@dataclass(frozen=True)
class ScannerGeometry:
    n_detectors: int = 19
    column_layout: tuple[int, ...] = (5, 9, 5)
    detector_pixels: tuple[int, int] = (32, 32)
    volume_grid: tuple[int, int, int] = (72, 72, 40)
    voxel_size_mm: float = 4.0
    # pinhole cylinder radius as a multiple of the volume's half-diagonal in xy
    radius_factor: float = 2.0
    focal_mm: float = 60.0
    column_tilt_deg: float = 40.0
    arc_start_deg: float = -45.0
    arc_span_deg: float = 180.0
    # detector half-extent relative to the volume's pinhole image
    fov_factor: float = 0.9
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "column_layout", tuple(int(c) for c in self.column_layout))
        object.__setattr__(self, "detector_pixels", tuple(int(c) for c in self.detector_pixels))
        object.__setattr__(self, "volume_grid", tuple(int(c) for c in self.volume_grid))
        self.validate()

    # ------------------------------------------------------------------ presets
    @classmethod
    def micro(cls, **kw) -> "ScannerGeometry":
        kw.setdefault("detector_pixels", (4, 4))
        kw.setdefault("volume_grid", (8, 8, 8))
        return cls(**kw)

    @classmethod
    def toy(cls, **kw) -> "ScannerGeometry":
        kw.setdefault("detector_pixels", (16, 16))
        kw.setdefault("volume_grid", (16, 16, 8))
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> "ScannerGeometry":
        kw.setdefault("detector_pixels", (16, 16))
        kw.setdefault("volume_grid", (32, 32, 16))
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "ScannerGeometry":
        kw.setdefault("detector_pixels", (32, 32))
        kw.setdefault("volume_grid", (72, 72, 40))
        return cls(**kw)

    @classmethod
    def preset(cls, name: str, **kw) -> "ScannerGeometry":
        try:
            return {"micro": cls.micro, "toy": cls.toy, "desk": cls.desk, "full": cls.full}[name](**kw)
        except KeyError:
            raise GeometryError(f"unknown geometry preset {name!r}") from None

    # --------------------------------------------------------------- checks
    def validate(self) -> None:
        if sum(self.column_layout) != self.n_detectors:
            raise GeometryError(
                f"column layout {self.column_layout} sums to {sum(self.column_layout)}, "
                f"expected {self.n_detectors} detectors"
            )
        if any(c < 1 for c in self.column_layout):
            raise GeometryError("every column needs at least one detector")
        if any(n < 1 for n in self.volume_grid) or any(n < 1 for n in self.detector_pixels):
            raise GeometryError("grid and pixel extents must be positive")
        if self.voxel_size_mm <= 0 or self.focal_mm <= 0:
            raise GeometryError("voxel size and focal length must be positive")
        lo, hi = self.volume_bounds
        for d, p in enumerate(self.pinholes):
            if np.all(p > lo) and np.all(p < hi):
                raise GeometryError(f"pinhole of detector {d} lies inside the volume")

    # ------------------------------------------------------------- derived
    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.volume_grid))

    @property
    def n_bins(self) -> int:
        u, v = self.detector_pixels
        return u * v * self.n_detectors

    @property
    def projection_shape(self) -> tuple[int, int, int]:
        return (*self.detector_pixels, self.n_detectors)

    @property
    def volume_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * np.asarray(self.volume_grid, dtype=float) * self.voxel_size_mm
        return -half, half

    @property
    def pinhole_radius(self) -> float:
        nx, ny, _ = self.volume_grid
        return self.radius_factor * 0.5 * self.voxel_size_mm * math.hypot(nx, ny)

    def column_of(self) -> np.ndarray:
        """Column index of every detector."""
        return np.repeat(np.arange(len(self.column_layout)), self.column_layout)

    def center_column(self) -> tuple[int, int]:
        """Index range [start, stop) of the middle column's detectors."""
        ncol = len(self.column_layout)
        if ncol % 2 == 0:
            raise GeometryError("layout has no single centre column")
        mid = ncol // 2
        start = sum(self.column_layout[:mid])
        return start, start + self.column_layout[mid]

    @property
    def pinholes(self) -> np.ndarray:
        if "pinholes" not in self._cache:
            self._cache.update(self._build_frames())
        return self._cache["pinholes"]

    @property
    def frames(self) -> dict:
        """Per-detector pinhole, optical axis, plane centre and in-plane axes (all mm)."""
        if "pinholes" not in self._cache:
            self._cache.update(self._build_frames())
        return self._cache

    def _build_frames(self) -> dict:
        R = self.pinhole_radius
        ncol = len(self.column_layout)
        tilt = math.radians(self.column_tilt_deg)
        pins, axes, centres, us, vs = [], [], [], [], []
        for col, count in enumerate(self.column_layout):
            # top column gets the largest z
            level = (ncol - 1) / 2.0 - col
            z = R * math.tan(tilt) * level
            if count == 1:
                angles = [self.arc_start_deg + 0.5 * self.arc_span_deg]
            else:
                angles = np.linspace(self.arc_start_deg, self.arc_start_deg + self.arc_span_deg, count)
            for a in angles:
                a = math.radians(a)
                p = np.array([R * math.cos(a), R * math.sin(a), z])
                n = -p / np.linalg.norm(p)
                u = np.cross([0.0, 0.0, 1.0], n)
                u /= np.linalg.norm(u)
                v = np.cross(n, u)
                pins.append(p)
                axes.append(n)
                centres.append(p - self.focal_mm * n)
                us.append(u)
                vs.append(v)
        # fit each detector to the pinhole image of the volume's corners
        lo, hi = self.volume_bounds
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        half_u, half_v = [], []
        for p, n, u, v in zip(pins, axes, us, vs):
            rel = corners - p
            depth = rel @ n
            half_u.append(self.focal_mm * np.max(np.abs(rel @ u) / depth))
            half_v.append(self.focal_mm * np.max(np.abs(rel @ v) / depth))
        return {
            "pinholes": np.asarray(pins),
            "axes": np.asarray(axes),
            "centres": np.asarray(centres),
            "u": np.asarray(us),
            "v": np.asarray(vs),
            "half_u": self.fov_factor * np.asarray(half_u),
            "half_v": self.fov_factor * np.asarray(half_v),
        }

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Origins (pinholes) and unit directions of every detector-pixel ray.

        Rows follow C order of the projection shape (u, v, detector).
        """
        f = self.frames
        nu, nv = self.detector_pixels
        D = self.n_detectors
        origins = np.empty((nu, nv, D, 3))
        dirs = np.empty((nu, nv, D, 3))
        for d in range(D):
            pitch_u = 2.0 * f["half_u"][d] / nu
            pitch_v = 2.0 * f["half_v"][d] / nv
            su = (np.arange(nu) - (nu - 1) / 2.0) * pitch_u
            sv = (np.arange(nv) - (nv - 1) / 2.0) * pitch_v
            pix = (
                f["centres"][d][None, None, :]
                + su[:, None, None] * f["u"][d][None, None, :]
                + sv[None, :, None] * f["v"][d][None, None, :]
            )
            direction = f["pinholes"][d][None, None, :] - pix
            direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
            origins[:, :, d] = f["pinholes"][d]
            dirs[:, :, d] = direction
        return origins.reshape(-1, 3), dirs.reshape(-1, 3)

    def voxel_centers(self) -> np.ndarray:
        lo, _ = self.volume_bounds
        axes = [lo[i] + (np.arange(n) + 0.5) * self.voxel_size_mm for i, n in enumerate(self.volume_grid)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1).reshape(-1, 3)

    # ------------------------------------------------------------- identity
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("_cache", None)
        d["column_layout"] = list(self.column_layout)
        d["detector_pixels"] = list(self.detector_pixels)
        d["volume_grid"] = list(self.volume_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScannerGeometry":
        known = {f.name for f in dataclasses.fields(cls) if not f.name.startswith("_")}
        unknown = set(d) - known
        if unknown:
            raise GeometryError(f"unknown geometry keys: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()

    def hash(self) -> str:
        return self.digest().hex()
