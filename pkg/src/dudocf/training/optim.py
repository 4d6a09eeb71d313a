"""Adam with named parameter groups."""
from __future__ import annotations

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_step(params, grads, state: dict, lr: float, beta1=BETA1, beta2=BETA2, eps=EPS) -> None:
    """One in-place Adam update of the arrays in ``params``.

    ``state`` holds ``step`` and per-parameter ``m``/``v`` lists; it is
    initialised on first use.
    """
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["step"] = 0
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    """Adam over groups ``{group: (named_params, lr)}``; ``named_params`` is a list of (name, Parameter)."""

    def __init__(self, groups: dict, beta1=BETA1, beta2=BETA2, eps=EPS):
        self.groups = {}
        for gname, (named, lr) in groups.items():
            named = list(named)
            self.groups[gname] = {"named": named, "lr": float(lr)}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for g in self.groups.values() for n, p in g["named"]}
        self.v = {n: np.zeros_like(p.data) for g in self.groups.values() for n, p in g["named"]}

    def lr_of(self, group: str) -> float:
        return self.groups[group]["lr"]

    def parameters(self):
        return [p for g in self.groups.values() for _, p in g["named"]]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.parameters())))

    def clip(self, max_norm: float) -> float:
        """Scale all gradients so their global norm is at most ``max_norm``; returns the pre-clip norm."""
        norm = self.grad_norm()
        if max_norm and norm > max_norm:
            s = max_norm / (norm + 1e-12)
            for p in self.parameters():
                p.grad *= s
        return norm

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for g in self.groups.values():
            lr = g["lr"]
            for n, p in g["named"]:
                grad = p.grad
                m, v = self.m[n], self.v[n]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": {k: v.copy() for k, v in self.m.items()}, "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]
