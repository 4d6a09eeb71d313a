"""AttenRDB, CDF, self-attention and SBE blocks.

All feature maps are ``[B, C, D, H, W]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import DimensionError
from .module import BatchNorm3d, Conv3d, Linear, Module


def _same_extents(a, b, what: str) -> None:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        for ax in (0, 2, 3, 4):
            if a.shape[ax] != b.shape[ax]:
                raise DimensionError(f"{what}: extent mismatch {a.shape} vs {b.shape} on axis {ax}", axis=ax)


def _channels(x, c: int, what: str) -> None:
    if x.ndim != 5 or x.shape[1] != c:
        raise DimensionError(f"{what}: expected {c} channels, got shape {x.shape}", axis=1)


@dataclass(frozen=True)
class AttenRDBParams:
    n_dense_layers: int = 3
    growth: int = 8
    reduction: int = 4
    kernel: int = 3


class AttenRDB(Module):
    """Residual dense block with squeeze-excitation channel attention.

    The squeeze layer uses softplus rather than ReLU: with only C/4 hidden
    units a ReLU squeeze often shuts off completely for a whole batch,
    leaving the excitation weights without gradient.
    """

    def __init__(self, channels: int, params: AttenRDBParams = AttenRDBParams(), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        g = params.growth
        self.dense = [
            Conv3d(channels + j * g, g, params.kernel, rng) for j in range(params.n_dense_layers)
        ]
        self.fuse = Conv3d(channels + params.n_dense_layers * g, channels, 1, rng)
        hidden = max(channels // params.reduction, 1)
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, x):
        _channels(x, self.channels, "AttenRDB")
        feats = [x]
        for conv in self.dense:
            inp = feats[0] if len(feats) == 1 else F.concat_channels(feats)
            feats.append(F.relu(conv(inp)))
        y = self.fuse(F.concat_channels(feats))
        w = F.sigmoid(self.fc2(F.softplus(self.fc1(F.global_avg_pool(y)))))
        B, C = w.shape
        return x + y * F.reshape(w, (B, C, 1, 1, 1))


class CDF(Module):
    """Cross-domain fusion: channel re-weighting of two branches, then concatenation."""

    def __init__(self, c: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c = c
        self.F0 = Linear(2 * c, 2 * c, rng)
        self.F1 = Linear(2 * c, c, rng)
        self.F2 = Linear(2 * c, c, rng)

    def forward(self, x1, x2):
        _channels(x1, self.c, "CDF branch 1")
        _channels(x2, self.c, "CDF branch 2")
        _same_extents(x1, x2, "CDF")
        wf = self.F0(F.concat_channels([F.global_avg_pool(x1), F.global_avg_pool(x2)]))
        B = x1.shape[0]
        w1 = F.reshape(F.sigmoid(self.F1(wf)), (B, self.c, 1, 1, 1))
        w2 = F.reshape(F.sigmoid(self.F2(wf)), (B, self.c, 1, 1, 1))
        return F.concat_channels([w1 * x1, w2 * x2])


class SelfAttention(Module):
    """P_att = P0 + C2(P0) * sigmoid(C1(P_ldfv)) with 1x1x1 convs C1, C2."""

    def __init__(self, c: int, c_gate: int = 1, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.C1 = Conv3d(c_gate, c, 1, rng)
        self.C2 = Conv3d(c, c, 1, rng)

    def forward(self, p0, p_ldfv):
        _same_extents(p0, p_ldfv, "self-attention")
        return p0 + self.C2(p0) * F.sigmoid(self.C1(p_ldfv))


class SBE(Module):
    """Spatial boundary enhancement: 1-channel spatial gates from a fused 2-channel map."""

    def __init__(self, c: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c = c
        self.G1 = Conv3d(c, 1, 3, rng)
        self.G2 = Conv3d(c, 1, 3, rng)
        self.Gf = Conv3d(2, 2, 3, rng)
        # the batch norms absorb any bias, so G3 and G4 have none
        self.G3 = Conv3d(2, c, 3, rng, bias=False)
        self.G4 = Conv3d(2, c, 3, rng, bias=False)
        self.N3 = BatchNorm3d(c)
        self.N4 = BatchNorm3d(c)

    def fused_map(self, u1, u2):
        return self.Gf(F.concat_channels([self.G1(u1), self.G2(u2)]))

    def forward(self, u1, u2):
        _channels(u1, self.c, "SBE branch 1")
        _channels(u2, self.c, "SBE branch 2")
        _same_extents(u1, u2, "SBE")
        sf = self.fused_map(u1, u2)
        s1 = F.sigmoid(self.N3(self.G3(sf)))
        s2 = F.sigmoid(self.N4(self.G4(sf)))
        return F.concat_channels([s1 * u1, s2 * u2])
