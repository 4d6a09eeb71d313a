"""Dense float64 tensors with a reverse-mode tape.

Every primitive that touches a tensor requiring gradients appends a node to
the active :class:`Tape`. :func:`backward` replays the tape once, in
reverse, from the node that produced the loss.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class ContractError(RuntimeError):
    """Violated calling contract (wrong rank, replayed tape, ...)."""


class DimensionError(ValueError):
    """Shape mismatch; ``axis`` names the offending axis when known."""

    def __init__(self, message: str, axis=None):
        super().__init__(message)
        self.axis = axis


class Node:
    __slots__ = ("inputs", "output", "backward", "tape", "index")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed primitives.

    Used as a context manager to scope one forward/backward pass::

        with Tape():
            loss = model(x)
            backward(loss)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False
        self._prev = None

    def record(self, node: Node) -> None:
        if self.consumed:
            raise ContractError("cannot record onto a tape that has already been replayed")
        node.tape = self
        node.index = len(self.nodes)
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        self._prev = _state.__dict__.get("tape")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev if self._prev is not None else Tape()
        self._prev = None
        return False


_state = threading.local()


def current_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None or tape.consumed:
        tape = _state.tape = Tape()
    return tape


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = np.zeros_like(arr) if requires_grad else None
        self._node = None
        self.name = name

    # ----------------------------------------------------------- gradient
    @property
    def grad(self):
        if self.requires_grad and self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros_like(self.data)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    # ------------------------------------------------------------- basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # ---------------------------------------------------------- operators
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            raise TypeError("tensor division is only defined for scalar divisors")
        return F.scale(self, 1.0 / float(other))

    def __neg__(self):
        from . import functional as F

        return F.scale(self, -1.0)

    def sum(self):
        from . import functional as F

        return F.sum(self)

    def mean(self):
        from . import functional as F

        return F.mean(self)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data, inputs, backward) -> Tensor:
    """Wrap ``data`` and, when any input needs gradients, record a tape node."""
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out._grad = None
    out._node = None
    out.name = None
    if needs:
        node = Node(tuple(inputs), out, backward)
        current_tape().record(node)
        out._node = node
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every reachable tensor with d(loss)/d(tensor).

    Leaf gradients accumulate across calls; the tape that produced ``loss``
    is consumed and cannot be replayed again.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires gradients")
    if loss._node is None:
        loss.grad += 1.0
        return
    tape = loss._node.tape
    if tape.consumed:
        raise ContractError("tape already replayed; run a new forward pass")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: loss._node.index + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        node.output._grad = g
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._node is None:
                t.grad += gi
            else:
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
    tape.consumed = True
    # break the tensor <-> node cycles so activations are freed by refcounting
    for node in tape.nodes:
        node.inputs = ()
        node.backward = None
        node.output = None
    tape.nodes = []
