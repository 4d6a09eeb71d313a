"""Central finite-difference oracles for the autodiff engine."""
from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, backward


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def numerical_grad(fn, tensors, step: float = 1e-5):
    """d fn / d t for every tensor in ``tensors``; ``fn()`` returns a float."""
    out = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn()
            flat[i] = orig - step
            fm = fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * step)
        out.append(g)
    return out


def analytic_grad(fn_tensor, tensors):
    for t in tensors:
        t.zero_grad()
    with Tape():
        loss = fn_tensor()
        backward(loss)
    return [t.grad.copy() for t in tensors]


def gradcheck(fn_tensor, tensors, step: float = 1e-5) -> float:
    """Largest relative error between backprop and central differences.

    ``fn_tensor`` builds a scalar :class:`Tensor` from ``tensors``.
    """
    analytic = analytic_grad(fn_tensor, tensors)

    def f():
        from .tensor import no_grad

        with no_grad():
            return float(fn_tensor().data)

    numeric = numerical_grad(f, tensors, step)
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))


def directional_check(fn_tensor, tensors, rng, step=1e-6, accept: float = 0.0) -> float:
    """Relative error of <grad, v> against a central difference along random v.

    One probe per tensor; cheap enough for whole networks. ``step`` may be a
    sequence of step sizes, in which case each probe keeps the best-agreeing
    one. Deep ReLU/L1 networks need this: a large step can straddle a kink
    while a tiny one drowns small directional derivatives in round-off, and
    no single step avoids both for every tensor. A genuinely wrong gradient
    still disagrees at every step. A probe stops trying further steps once
    its error is at most ``accept``.
    """
    steps = np.atleast_1d(np.asarray(step, dtype=float))
    analytic = analytic_grad(fn_tensor, tensors)
    from .tensor import no_grad

    worst = 0.0
    for t, g in zip(tensors, analytic):
        v = rng.standard_normal(t.shape)
        base = t.data.copy()
        ana = float(np.sum(g * v))
        best = np.inf
        for h in steps:
            with no_grad():
                t.data[...] = base + h * v
                fp = float(fn_tensor().data)
                t.data[...] = base - h * v
                fm = float(fn_tensor().data)
            t.data[...] = base
            num = (fp - fm) / (2 * h)
            best = min(best, abs(num - ana) / max(abs(num), abs(ana), 1e-300))
            if best <= accept:
                break
        worst = max(worst, best)
    return worst
