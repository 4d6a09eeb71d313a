"""Parameter containers and the basic layers."""
from __future__ import annotations

import math

import numpy as np

from ..autodiff import functional as F
from ..autodiff.functional import RunningStats
from ..autodiff.tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Attribute-registered tree of parameters, sub-modules and BN statistics.

    Names follow attribute insertion order, lists of modules get their index
    as a path component (``enc.rdb.0.fuse.weight``).
    """

    training = True

    def __call__(self, *args, **kw):
        return self.forward(*args, **kw)

    def forward(self, *args, **kw):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module, RunningStats)):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for j, v in enumerate(val):
                    yield f"{key}.{j}", v

    def named_parameters(self, prefix: str = ""):
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_stats(self, prefix: str = ""):
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, RunningStats):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_stats(name + ".")

    def modules(self):
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameter arrays plus BN running statistics (only once initialised)."""
        out = {n: p.data.copy() for n, p in self.named_parameters()}
        for n, st in self.named_stats():
            if st.initialized:
                out[f"{n}.running_mean"] = st.mean.copy()
                out[f"{n}.running_var"] = st.var.copy()
        return out

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        stats = dict(self.named_stats())
        expected = set(params)
        for n, st in stats.items():
            expected |= {f"{n}.running_mean", f"{n}.running_var"}
        if strict:
            missing = set(params) - set(state)
            unknown = set(state) - expected
            if missing or unknown:
                raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unknown {sorted(unknown)[:5]}")
        for n, p in params.items():
            if n in state:
                arr = np.asarray(state[n], dtype=np.float64)
                if arr.shape != p.shape:
                    raise ValueError(f"{n}: shape {arr.shape} != {p.shape}")
                p.data[...] = arr
        for n, st in stats.items():
            if f"{n}.running_mean" in state:
                st.mean = np.asarray(state[f"{n}.running_mean"], dtype=np.float64).copy()
                st.var = np.asarray(state[f"{n}.running_var"], dtype=np.float64).copy()
                st.initialized = True


def kaiming(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, rng=None, stride: int = 1, bias: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = (k - 1) // 2
        self.weight = Parameter(kaiming(rng, (c_out, c_in, k, k, k), c_in * k**3))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x):
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose3d(Module):
    """Stride-2 upsampling; the kernel is stored in the layout of its adjoint conv."""

    def __init__(self, c_in: int, c_out: int, k: int = 3, rng=None, stride: int = 2):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.weight = Parameter(kaiming(rng, (c_in, c_out, k, k, k), c_in * k**3 / stride**3))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x):
        return F.conv3d_transpose(x, self.weight, self.bias, self.stride)


class Linear(Module):
    def __init__(self, f_in: int, f_out: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(kaiming(rng, (f_out, f_in), f_in))
        self.bias = Parameter(np.zeros(f_out))

    def forward(self, x):
        return F.fully_connected(x, self.weight, self.bias)


class BatchNorm3d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.stats = RunningStats(channels, momentum, eps)

    def forward(self, x):
        return F.batch_norm3d(x, self.gamma, self.beta, self.stats, self.training)
