"""Differentiable primitives on :class:`Tensor`.

Feature maps use the layout ``[B, C, D, H, W]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .tensor import ContractError, DimensionError, Tensor, as_tensor, make_result

_AXES = ("batch", "channel", "depth", "height", "width")


def _axis_name(ndim: int, axis: int) -> str:
    if ndim == 5:
        return _AXES[axis]
    return f"axis {axis}"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- arithmetic
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return make_result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return make_result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    """Element-wise product with numpy broadcasting (channel weights, 1-channel maps)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return make_result(a.data * b.data, (a, b), bw)


elementwise_mul = mul


def scale(a: Tensor, s: float) -> Tensor:
    return make_result(a.data * s, (a,), lambda g: (g * s,))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors Tensor.sum
    return make_result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    return make_result(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def reshape(a: Tensor, shape) -> Tensor:
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# ------------------------------------------------------------ shape plumbing
def concat_channels(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref):
            raise DimensionError(f"rank mismatch {t.shape} vs {ref}")
        for ax in range(len(ref)):
            if ax != 1 and t.shape[ax] != ref[ax]:
                raise DimensionError(
                    f"{_axis_name(len(ref), ax)} extent {t.shape[ax]} != {ref[ax]}", axis=ax
                )
    sizes = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    data = np.concatenate([t.data for t in tensors], axis=1)

    def bw(g):
        return tuple(
            np.ascontiguousarray(g[:, bounds[i] : bounds[i + 1]]) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return make_result(data, tuple(tensors), bw)


def pad_axis(x: Tensor, axis: int, before: int = 0, after: int = 0) -> Tensor:
    """Zero-pad one axis."""
    width = [(0, 0)] * x.ndim
    width[axis] = (before, after)
    n = x.shape[axis]

    def bw(g):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(before, before + n)
        return (np.ascontiguousarray(g[tuple(idx)]),)

    return make_result(np.pad(x.data, width), (x,), bw)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros(x.shape)
        full[idx] = g
        return (full,)

    return make_result(np.ascontiguousarray(x.data[idx]), (x,), bw)


# --------------------------------------------------------------- convolution
def _check_conv(x: Tensor, kernel: Tensor, channel_axis: int):
    if x.ndim != 5:
        raise DimensionError(f"expected [B,C,D,H,W] input, got shape {x.shape}")
    if kernel.ndim != 5:
        raise DimensionError(f"expected 5-D kernel, got shape {kernel.shape}")
    k = kernel.shape[2]
    if kernel.shape[3] != k or kernel.shape[4] != k:
        raise DimensionError(f"kernel must be cubic, got {kernel.shape[2:]}", axis=2)
    if x.shape[1] != kernel.shape[channel_axis]:
        raise DimensionError(
            f"channel extent {x.shape[1]} != kernel input channels {kernel.shape[channel_axis]}", axis=1
        )
    return k


def conv3d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with a ``[C_out, C_in, k, k, k]`` kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    k = _check_conv(x, kernel, 1)
    if k % 2 == 0:
        raise DimensionError(f"kernel extent must be odd, got {k}", axis=2)
    if stride < 1 or padding < 0:
        raise ContractError("stride must be >= 1 and padding >= 0")
    for ax in range(2, 5):
        if x.shape[ax] + 2 * padding < k:
            raise DimensionError(f"{_axis_name(5, ax)} extent {x.shape[ax]} smaller than kernel", axis=ax)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (kernel.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} != ({kernel.shape[0]},)", axis=1)
    out = kernels.conv3d_forward(x.data, kernel.data, stride, padding)
    if bias is not None:
        out += bias.data[None, :, None, None, None]
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gx = kernels.conv3d_backward_input(g, kernel.data, x.shape, stride, padding) if x.requires_grad else None
        gk = (
            kernels.conv3d_backward_weight(x.data, g, kernel.shape, stride, padding)
            if kernel.requires_grad
            else None
        )
        if bias is None:
            return gx, gk
        gb = g.sum(axis=(0, 2, 3, 4)) if bias.requires_grad else None
        return gx, gk, gb

    return make_result(out, inputs, bw)


def conv3d_transpose(
    x, kernel, bias=None, stride: int = 2, padding=None, output_padding=None, output_shape=None
) -> Tensor:
    """Adjoint of :func:`conv3d` sharing its kernel ``[C_conv_out, C_conv_in, k, k, k]``.

    Maps ``C_conv_out`` channels to ``C_conv_in``. With the defaults
    (``padding=(k-1)//2``, ``output_padding=stride-1``) every spatial extent
    is multiplied by ``stride``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    k = _check_conv(x, kernel, 0)
    if padding is None:
        padding = (k - 1) // 2
    if output_padding is None:
        output_padding = stride - 1
    if not 0 <= output_padding < stride:
        raise ContractError("output_padding must lie in [0, stride)")
    spatial = tuple((n - 1) * stride - 2 * padding + k + output_padding for n in x.shape[2:])
    if output_shape is not None:
        target = tuple(output_shape)[-3:]
        for ax, (want, got) in enumerate(zip(target, spatial)):
            if want != got or want % stride:
                raise DimensionError(
                    f"{_axis_name(5, ax + 2)} target extent {want} incompatible with input "
                    f"{x.shape[ax + 2]} at stride {stride}",
                    axis=ax + 2,
                )
    in_shape = (x.shape[0], kernel.shape[1]) + spatial
    out = kernels.conv3d_backward_input(x.data, kernel.data, in_shape, stride, padding)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (kernel.shape[1],):
            raise DimensionError(f"bias shape {bias.shape} != ({kernel.shape[1]},)", axis=1)
        out += bias.data[None, :, None, None, None]
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gx = kernels.conv3d_forward(g, kernel.data, stride, padding) if x.requires_grad else None
        gk = kernels.conv3d_backward_weight(g, x.data, kernel.shape, stride, padding) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, (g.sum(axis=(0, 2, 3, 4)) if bias.requires_grad else None)

    return make_result(out, inputs, bw)


# ------------------------------------------------------------------- pooling
def avg_pool3d(x: Tensor, window: int = 2) -> Tensor:
    B, C, D, H, W = x.shape
    for ax, n in zip(range(2, 5), (D, H, W)):
        if n % window:
            raise DimensionError(f"{_axis_name(5, ax)} extent {n} not divisible by {window}", axis=ax)
    w = window
    out = x.data.reshape(B, C, D // w, w, H // w, w, W // w, w).mean(axis=(3, 5, 7))
    scale_ = 1.0 / w**3

    def bw(g):
        up = np.repeat(np.repeat(np.repeat(g, w, axis=2), w, axis=3), w, axis=4)
        return (up * scale_,)

    return make_result(out, (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: ``[B, C, D, H, W] -> [B, C]``."""
    if x.ndim != 5:
        raise DimensionError(f"expected [B,C,D,H,W], got {x.shape}")
    n = x.shape[2] * x.shape[3] * x.shape[4]

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None, None] / n, x.shape).copy(),)

    return make_result(x.data.mean(axis=(2, 3, 4)), (x,), bw)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    f = factor
    out = np.repeat(np.repeat(np.repeat(x.data, f, axis=2), f, axis=3), f, axis=4)
    B, C, D, H, W = x.shape

    def bw(g):
        return (g.reshape(B, C, D, f, H, f, W, f).sum(axis=(3, 5, 7)),)

    return make_result(out, (x,), bw)


# ------------------------------------------------------------ dense + activations
def fully_connected(x, weight, bias=None) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(f"expected [B,F_in] and [F_out,F_in], got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"feature extent {x.shape[1]} != weight input {weight.shape[1]}", axis=1)
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} != ({weight.shape[0]},)", axis=1)
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if bias.requires_grad else None)

    return make_result(out, inputs, bw)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaNs visible to the training loop's guard
    return make_result(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def softplus(x: Tensor) -> Tensor:
    return make_result(np.logaddexp(0.0, x.data), (x,), lambda g: (g * expit(x.data),))


# -------------------------------------------------------------- normalisation
class UninitializedStatsError(RuntimeError):
    pass


@dataclass
class RunningStats:
    channels: int
    momentum: float = 0.1
    eps: float = 1e-5
    mean: np.ndarray = field(default=None)
    var: np.ndarray = field(default=None)
    initialized: bool = False

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.channels)
        if self.var is None:
            self.var = np.ones(self.channels)


def batch_norm3d(x, gamma, beta, stats: RunningStats, training: bool = True) -> Tensor:
    """Per-channel normalisation over batch and space.

    Training uses batch statistics (biased variance) and updates the running
    estimates with the unbiased one; evaluation uses the running estimates.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"affine parameters must have shape ({C},)", axis=1)
    axes = (0, 2, 3, 4)
    bshape = (1, C, 1, 1, 1)
    if training:
        n = x.size // C
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = stats.momentum
        unbiased = var * n / max(n - 1, 1)
        if stats.initialized:
            stats.mean = (1 - m) * stats.mean + m * mu
            stats.var = (1 - m) * stats.var + m * unbiased
        else:
            stats.mean = (1 - m) * np.zeros(C) + m * mu
            stats.var = (1 - m) * np.ones(C) + m * unbiased
            stats.initialized = True
    else:
        if not stats.initialized:
            raise UninitializedStatsError("batch-norm running statistics used before any training update")
        mu, var = stats.mean, stats.var
        n = None
    invstd = 1.0 / np.sqrt(var + stats.eps)
    xhat = (x.data - mu.reshape(bshape)) * invstd.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def bw(g):
        gg = g.sum(axis=axes) if beta.requires_grad else None
        gga = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = invstd.reshape(bshape) / n * (n * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * invstd.reshape(bshape)
        return gx, gga, gg

    return make_result(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------- loss
def l1_loss(pred, target) -> Tensor:
    """Mean absolute difference; subgradient 0 at ties."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        s = np.sign(diff) * (float(g) / n)
        return (s if pred.requires_grad else None, -s if target.requires_grad else None)

    return make_result(np.asarray(np.abs(diff).mean()), (pred, target), bw)


# ---------------------------------------------------------- linear operators
def linear_map(x: Tensor, forward, adjoint, out_shape: tuple) -> Tensor:
    """Apply a fixed linear operator to every ``[b, c]`` slice of ``x``.

    ``forward`` and ``adjoint`` act on 2-D arrays whose columns are
    flattened slices (e.g. sparse matrix products).
    """
    B, C = x.shape[:2]
    flat = x.data.reshape(B * C, -1).T
    out = np.asarray(forward(flat)).T.reshape((B, C) + tuple(out_shape))
    in_shape = x.shape

    def bw(g):
        return (np.asarray(adjoint(g.reshape(B * C, -1).T)).T.reshape(in_shape),)

    return make_result(np.ascontiguousarray(out), (x,), bw)
