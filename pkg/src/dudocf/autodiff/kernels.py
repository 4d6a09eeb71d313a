"""3-D convolution kernels.

Three entry points cover every conv-shaped primitive: the forward
correlation, its adjoint with respect to the input, and the weight
gradient. All of them end in BLAS matrix products.

Stride 1 uses a flat-shift scheme: on the flattened padded grid every
kernel offset is a contiguous slice, so each offset is one GEMM on a view
and nothing is copied. Outputs are computed on the padded row pitch and
cropped. Strided convolutions (only the upsampling path needs them) lower
to a product with an unfolded ("im2col") copy of the input instead; the
unfold and its adjoint fold are numba loops, or strided numpy views when
``DUDO_NUMBA=0``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._accel import USE_NUMBA, njit


def _pad(x, p):
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def out_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


# --------------------------------------------------------------------- numba
@njit
def _unfold_loops(xp, k, s, D, H, W, cols):
    B, Ci = xp.shape[0], xp.shape[1]
    for b in range(B):
        for ci in range(Ci):
            for a in range(k):
                for c in range(k):
                    for e in range(k):
                        row = ((ci * k + a) * k + c) * k + e
                        n = 0
                        for d in range(D):
                            for h in range(H):
                                src = xp[b, ci, d * s + a, h * s + c]
                                for x in range(W):
                                    cols[b, row, n] = src[x * s + e]
                                    n += 1


@njit
def _fold_loops(cols, k, s, D, H, W, gxp):
    B, Ci = gxp.shape[0], gxp.shape[1]
    for b in range(B):
        for ci in range(Ci):
            for a in range(k):
                for c in range(k):
                    for e in range(k):
                        row = ((ci * k + a) * k + c) * k + e
                        n = 0
                        for d in range(D):
                            for h in range(H):
                                dst = gxp[b, ci, d * s + a, h * s + c]
                                for x in range(W):
                                    dst[x * s + e] += cols[b, row, n]
                                    n += 1


# --------------------------------------------------------------------- numpy
def _unfold_numpy(xp, k, s, D, H, W, cols):
    v = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))[:, :, ::s, ::s, ::s][:, :, :D, :H, :W]
    B, Ci = xp.shape[:2]
    cols[...] = v.transpose(0, 1, 5, 6, 7, 2, 3, 4).reshape(B, Ci * k**3, D * H * W)


def _fold_numpy(cols, k, s, D, H, W, gxp):
    B, Ci = gxp.shape[:2]
    c6 = cols.reshape(B, Ci, k, k, k, D, H, W)
    for a in range(k):
        for c in range(k):
            for e in range(k):
                gxp[:, :, a : a + s * (D - 1) + 1 : s, c : c + s * (H - 1) + 1 : s, e : e + s * (W - 1) + 1 : s] += c6[
                    :, :, a, c, e
                ]


def unfold(xp, k, s, shape):
    """``(B, Ci, ...)`` padded input -> ``(B, Ci*k^3, prod(shape))`` columns."""
    D, H, W = shape
    cols = np.empty((xp.shape[0], xp.shape[1] * k**3, D * H * W))
    (_unfold_loops if USE_NUMBA else _unfold_numpy)(xp, k, s, D, H, W, cols)
    return cols


def fold(cols, k, s, shape, padded_shape):
    """Adjoint of :func:`unfold`: scatter-add columns back into a padded input."""
    D, H, W = shape
    gxp = np.zeros(padded_shape)
    (_fold_loops if USE_NUMBA else _fold_numpy)(np.ascontiguousarray(cols), k, s, D, H, W, gxp)
    return gxp


# ---------------------------------------------------------------- flat shift
def _span(shape, padded):
    """Flat length covering every valid output on the padded pitch."""
    D, H, W = shape
    _, Hp, Wp = padded
    return (D - 1) * Hp * Wp + (H - 1) * Wp + W


def _offsets(k, padded):
    _, Hp, Wp = padded
    return [(a, c, e, a * Hp * Wp + c * Wp + e) for a in range(k) for c in range(k) for e in range(k)]


def _to_pitch(g, padded):
    """Place ``g`` [B, C, D, H, W] on the padded row pitch, flattened."""
    B, C, D, H, W = g.shape
    out = np.zeros((B, C, D, padded[1], padded[2]))
    out[:, :, :, :H, :W] = g
    return out.reshape(B, C, -1)


def _flat_forward(x, w, padding):
    k = w.shape[2]
    B = x.shape[0]
    xp = _pad(x, padding)
    padded = xp.shape[2:]
    shape = tuple(n - k + 1 for n in padded)
    L = _span(shape, padded)
    xf = xp.reshape(B, x.shape[1], -1)
    wt = np.ascontiguousarray(w.transpose(2, 3, 4, 0, 1))
    out = np.zeros((B, w.shape[0], shape[0] * padded[1] * padded[2]))
    acc = out[:, :, :L]
    for a, c, e, off in _offsets(k, padded):
        acc += np.matmul(wt[a, c, e], xf[:, :, off : off + L])
    return out.reshape((B, w.shape[0], shape[0]) + padded[1:])[:, :, :, : shape[1], : shape[2]]


def _flat_backward_input(g, w, x_shape, padding):
    # full correlation with the flipped, channel-swapped kernel
    k = w.shape[2]
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    q = k - 1 - padding
    if q < 0:
        raise ValueError("padding larger than k - 1 is not supported")
    gx = _flat_forward(np.ascontiguousarray(g), wf, q)
    if gx.shape[2:] != tuple(x_shape[2:]):
        gx = gx[:, :, : x_shape[2], : x_shape[3], : x_shape[4]]
    return np.ascontiguousarray(gx)


def _flat_backward_weight(x, g, w_shape, padding):
    k = w_shape[2]
    B = x.shape[0]
    xp = _pad(x, padding)
    padded = xp.shape[2:]
    L = _span(g.shape[2:], padded)
    xf = xp.reshape(B, x.shape[1], -1)
    gf = _to_pitch(g, padded)[:, :, :L]
    gw = np.zeros(w_shape)
    for a, c, e, off in _offsets(k, padded):
        acc = gf[0] @ xf[0, :, off : off + L].T
        for b in range(1, B):
            acc += gf[b] @ xf[b, :, off : off + L].T
        gw[:, :, a, c, e] = acc
    return gw


# ----------------------------------------------------------------- public API
def conv3d_forward(x, w, stride=1, padding=0):
    """Cross-correlation ``out[b,o] = sum_c w[o,c] * x[b,c]`` (valid after zero padding)."""
    k = w.shape[2]
    shape = tuple(out_extent(n, k, stride, padding) for n in x.shape[2:])
    w2 = w.reshape(w.shape[0], -1)
    if k == 1 and stride == 1 and padding == 0:
        out = np.matmul(w2, x.reshape(x.shape[0], x.shape[1], -1))
    elif stride == 1:
        return np.ascontiguousarray(_flat_forward(x, w, padding))
    else:
        out = np.matmul(w2, unfold(_pad(x, padding), k, stride, shape))
    return out.reshape((x.shape[0], w.shape[0]) + shape)


def conv3d_backward_input(g, w, x_shape, stride=1, padding=0):
    """Adjoint of :func:`conv3d_forward` in its input, for an input of ``x_shape``."""
    k = w.shape[2]
    B, Ci = x_shape[0], x_shape[1]
    if stride == 1 and k > 1:
        return _flat_backward_input(g, w, x_shape, padding)
    G = np.ascontiguousarray(g).reshape(g.shape[0], g.shape[1], -1)
    cols = np.matmul(w.reshape(w.shape[0], -1).T, G)
    if k == 1 and stride == 1 and padding == 0:
        return cols.reshape(x_shape)
    padded = (B, Ci) + tuple(n + 2 * padding for n in x_shape[2:])
    gxp = fold(cols, k, stride, g.shape[2:], padded)
    if padding:
        p = padding
        gxp = gxp[:, :, p:-p, p:-p, p:-p]
    return np.ascontiguousarray(gxp)


def conv3d_backward_weight(x, g, w_shape, stride=1, padding=0):
    """Gradient of ``<conv3d_forward(x, w), g>`` with respect to ``w``."""
    k = w_shape[2]
    if stride == 1 and k > 1:
        return _flat_backward_weight(x, g, w_shape, padding)
    G = np.ascontiguousarray(g).reshape(g.shape[0], g.shape[1], -1)
    if k == 1 and stride == 1 and padding == 0:
        cols = x.reshape(x.shape[0], x.shape[1], -1)
    else:
        cols = unfold(_pad(x, padding), k, stride, g.shape[2:])
    acc = G[0] @ cols[0].T
    for b in range(1, G.shape[0]):
        acc += G[b] @ cols[b].T
    return acc.reshape(w_shape)
