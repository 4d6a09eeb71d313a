"""Voxel traversal of straight rays through a regular grid.

Incremental (Amanatides-Woo) form of Siddon's method: exact intersection
lengths, emitted in the order the ray crosses the voxels.
"""
from __future__ import annotations

import math

import numpy as np

from .._accel import njit


@njit
def _trace(origins, dirs, grid, lo, vs, cap, cols, lens, counts):
    nx, ny, nz = grid[0], grid[1], grid[2]
    n_rays = origins.shape[0]
    big = 1e300
    for r in range(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        t0 = -big
        t1 = big
        o3 = (ox, oy, oz)
        d3 = (dx, dy, dz)
        n3 = (nx, ny, nz)
        miss = False
        for a in range(3):
            lo_a = lo[a]
            hi_a = lo[a] + n3[a] * vs
            if abs(d3[a]) < 1e-15:
                if o3[a] <= lo_a or o3[a] >= hi_a:
                    miss = True
            else:
                ta = (lo_a - o3[a]) / d3[a]
                tb = (hi_a - o3[a]) / d3[a]
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
        counts[r] = 0
        if miss or t1 <= t0 or t1 <= 0.0:
            continue
        if t0 < 0.0:
            t0 = 0.0
        tm = 0.5 * (t0 + min(t1, t0 + vs * 1e-6))
        idx = np.empty(3, np.int64)
        step = np.empty(3, np.int64)
        tmax = np.empty(3)
        tdelta = np.empty(3)
        for a in range(3):
            p = o3[a] + tm * d3[a]
            i = int(math.floor((p - lo[a]) / vs))
            if i < 0:
                i = 0
            if i > n3[a] - 1:
                i = n3[a] - 1
            idx[a] = i
            if d3[a] > 1e-15:
                step[a] = 1
                tmax[a] = (lo[a] + (i + 1) * vs - o3[a]) / d3[a]
                tdelta[a] = vs / d3[a]
            elif d3[a] < -1e-15:
                step[a] = -1
                tmax[a] = (lo[a] + i * vs - o3[a]) / d3[a]
                tdelta[a] = -vs / d3[a]
            else:
                step[a] = 0
                tmax[a] = big
                tdelta[a] = big
        t = t0
        k = 0
        while t < t1 and k < cap:
            a = 0
            if tmax[1] < tmax[a]:
                a = 1
            if tmax[2] < tmax[a]:
                a = 2
            t_next = tmax[a]
            if t_next > t1:
                t_next = t1
            seg = t_next - t
            if seg > 1e-12 * vs:
                cols[r, k] = (idx[0] * ny + idx[1]) * nz + idx[2]
                lens[r, k] = seg
                k += 1
            t = t_next
            idx[a] += step[a]
            if idx[a] < 0 or idx[a] >= n3[a]:
                break
            tmax[a] += tdelta[a]
        counts[r] = k


def trace_rays(origins, dirs, grid, lo, voxel_size):
    """Trace rays through the grid.

    Returns ``(counts, cols, lens)`` where row ``r`` of ``cols``/``lens``
    holds ``counts[r]`` voxel indices (C order over ``grid``) and path
    lengths in mm, ordered from the ray origin outward.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.int64)
    lo = np.asarray(lo, dtype=np.float64)
    cap = int(grid.sum()) + 3
    n = origins.shape[0]
    cols = np.zeros((n, cap), dtype=np.int64)
    lens = np.zeros((n, cap), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    _trace(origins, dirs, grid, lo, float(voxel_size), cap, cols, lens, counts)
    return counts, cols, lens
