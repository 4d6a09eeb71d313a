"""The N-iteration dual-domain cascade."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import DimensionError, Tensor
from ..nn import Module
from ..physics.system_matrix import SystemMatrix
from .bda import MU_REF, BDANet
from .config import CascadeConfig
from .tsp import TSPNet


@dataclass(frozen=True)
class Scaling:
    """Maps physical quantities to the O(1) ranges the networks see.

    Projections are divided by ``proj_scale`` (mean full-dose counts per bin);
    low-dose inputs are additionally divided by the dose rate.
    """

    proj_scale: float
    dose_rate: float

    def proj_in(self, p_ldlv: np.ndarray) -> np.ndarray:
        return p_ldlv / (self.dose_rate * self.proj_scale)

    def proj_fd(self, p: np.ndarray) -> np.ndarray:
        return p / self.proj_scale

    def proj_out(self, p_hat: np.ndarray) -> np.ndarray:
        """Network projection output back to full-dose counts."""
        return p_hat * self.proj_scale

    @staticmethod
    def volume_in(s: np.ndarray) -> np.ndarray:
        m = float(np.mean(s))
        return s / m if m > 0 else s.copy()


class Physics:
    """Forward and back projection as differentiable linear maps on ``[B, 1, ...]`` tensors.

    Uses the very same sparse matrices as :mod:`dudocf.physics.projector`.
    """

    def __init__(self, A: SystemMatrix):
        self.A = A
        g = A.geometry
        self.proj_shape = g.projection_shape
        self.vol_shape = g.volume_grid
        self.bp_norm = 1.0 / float(np.mean(A.sensitivity))
        self.fp_norm = 1.0 / (MU_REF * float(np.mean(A.row_sums)))

    def fp(self, vol: Tensor) -> Tensor:
        A = self.A
        return F.linear_map(vol, lambda X: A.csr @ X, lambda Y: A.csc_t @ Y, self.proj_shape)

    def bp(self, proj: Tensor) -> Tensor:
        A = self.A
        return F.linear_map(proj, lambda Y: A.csc_t @ Y, lambda X: A.csr @ X, self.vol_shape)


class DuDoCFNet(Module):
    def __init__(self, A: SystemMatrix, cfg: CascadeConfig = CascadeConfig()):
        self.cfg = cfg
        self.physics = Physics(A)
        rng = np.random.default_rng(cfg.seed)
        g = A.geometry
        m = 2 ** (cfg.levels - 1)
        bad = [n for n in (*g.detector_pixels, *g.volume_grid) if n % m]
        if bad:
            raise DimensionError(f"detector and volume extents must be divisible by {m}")
        self.tsp = [TSPNet(i, cfg, rng) for i in range(1, cfg.n_iters + 1)]
        self.bda = [BDANet(i, cfg, rng) for i in range(1, cfg.n_iters + 1)]

    @property
    def n_iters(self) -> int:
        return self.cfg.n_iters

    def named_parameters(self, prefix: str = ""):
        for i in range(self.n_iters):
            yield from self.tsp[i].named_parameters(f"{prefix}iter{i + 1}.tsp.")
            yield from self.bda[i].named_parameters(f"{prefix}iter{i + 1}.bda.")

    def named_stats(self, prefix: str = ""):
        for i in range(self.n_iters):
            yield from self.tsp[i].named_stats(f"{prefix}iter{i + 1}.tsp.")
            yield from self.bda[i].named_stats(f"{prefix}iter{i + 1}.bda.")

    def param_groups(self) -> dict[str, list]:
        """Projection-domain (TSP) and image-domain (BDA) parameters."""
        return {
            "proj": [p for t in self.tsp for p in t.parameters()],
            "image": [p for b in self.bda for p in b.parameters()],
        }

    def census(self) -> list[dict]:
        return [{"iteration": i + 1, "tsp": self.tsp[i].n_parameters(), "bda": self.bda[i].n_parameters()} for i in range(self.n_iters)]

    def forward(self, p_ldlv, s_ldlv) -> list[dict]:
        """``p_ldlv`` [B, 1, U, V, D] and ``s_ldlv`` [B, 1, X, Y, Z], both scaled.

        Returns one dict per iteration with keys ``p_ldfv``, ``p_fdfv``,
        ``beta``, ``mu0``, ``mu``.
        """
        ph = self.physics
        B = p_ldlv.shape[0]
        if p_ldlv.shape != (B, 1, *ph.proj_shape):
            raise DimensionError(f"P_LDLV shape {p_ldlv.shape} != {(B, 1, *ph.proj_shape)}")
        if s_ldlv.shape != (B, 1, *ph.vol_shape):
            raise DimensionError(f"S_LDLV shape {s_ldlv.shape} != {(B, 1, *ph.vol_shape)}")
        hold = (lambda t: t.detach()) if self.cfg.detach else (lambda t: t)
        p_hist, mu_hist, out = [], [], []
        for i in range(self.n_iters):
            proj_in = F.concat_channels([hold(p) for p in p_hist] + [p_ldlv])
            if i == 0:
                anat, last = None, p_ldlv
            else:
                anat = F.scale(ph.fp(hold(mu_hist[-1])), ph.fp_norm)
                last = hold(p_hist[-1])
            p_ldfv, p_fdfv = self.tsp[i](proj_in, anat, last)
            emis = F.scale(ph.bp(p_fdfv), ph.bp_norm)
            img_in = F.concat_channels([F.scale(hold(m), 1.0 / MU_REF) for m in mu_hist] + [s_ldlv])
            prev_mu = hold(mu_hist[-1]) if mu_hist else None
            beta, mu0, mu = self.bda[i](img_in, emis, prev_mu)
            p_hist.append(p_fdfv)
            mu_hist.append(mu)
            out.append({"p_ldfv": p_ldfv, "p_fdfv": p_fdfv, "beta": beta, "mu0": mu0, "mu": mu})
        return out
