"""Boundary-aware image-domain network."""
from __future__ import annotations

from ..autodiff import functional as F
from ..autodiff.tensor import DimensionError
from ..nn import SBE, AttenRDB, Conv3d, Module
from .config import CascadeConfig
from .unet import Decoder, Encoder, zero_head

# typical soft-tissue attenuation (cm^-1); mu and beta heads work in these units
MU_REF = 0.15
# softplus(-4) ~ 0.018: boundary labels are mostly near zero
BETA_INIT_BIAS = -4.0


class BDANet(Module):
    """Shared encoder, a mu-map decoder and a boundary decoder, SBE fusion and a
    refinement chain.

    Inputs: ``img_in`` [B, i, X, Y, Z] (previous mu estimates and S_LDLV),
    ``emis`` [B, 1, X, Y, Z] (back projection of the current projection
    estimate). Outputs ``(beta, mu0, mu)`` in cm^-1; the heads predict in
    units of ``MU_REF`` so their targets are O(1).
    """

    def __init__(self, iteration: int, cfg: CascadeConfig, rng):
        self.iteration = iteration
        self.n_img = iteration
        self.cfg = cfg
        c = cfg.channels
        in_ch = self.n_img + (1 if cfg.no_mlf else 0)
        self.enc = Encoder(in_ch, 0 if cfg.no_mlf else 1, c, cfg.levels, cfg.rdb, rng)
        self.dec_mu = Decoder(self.enc.widths, cfg.rdb, rng)
        self.dec_beta = Decoder(self.enc.widths, cfg.rdb, rng)
        self.head_mu0 = zero_head(c, rng)
        self.head_beta = zero_head(c, rng, bias=BETA_INIT_BIAS)
        self.stage2 = not cfg.no_bda_stage2
        if self.stage2:
            self.sbe = SBE(c, rng)
            self.mix = Conv3d(2 * c, c, 1, rng)
            self.refine = [AttenRDB(c, cfg.rdb, rng) for _ in range(cfg.bda_stage2_blocks)]
            self.head_mu = zero_head(c, rng)

    @property
    def multiple(self) -> int:
        return 2 ** (self.cfg.levels - 1)

    def forward(self, img_in, emis, prev_mu=None):
        if img_in.ndim != 5 or img_in.shape[1] != self.n_img:
            raise DimensionError(
                f"iteration {self.iteration} expects {self.n_img} image channels, got shape {img_in.shape}", axis=1
            )
        for ax in (2, 3, 4):
            if img_in.shape[ax] % self.multiple:
                raise DimensionError(
                    f"volume extent {img_in.shape[ax]} must be divisible by {self.multiple}", axis=ax
                )
        if self.cfg.no_mlf:
            feats = self.enc(F.concat_channels([img_in, emis]))
        else:
            feats = self.enc(img_in, emis)
        u1 = self.dec_mu(feats)[-1]
        u2 = self.dec_beta(feats)[-1]
        mu0 = F.scale(self.head_mu0(u1), MU_REF)
        if prev_mu is not None:
            mu0 = mu0 + prev_mu
        beta = F.scale(F.softplus(self.head_beta(u2)), MU_REF)
        if self.stage2:
            h = self.mix(self.sbe(u1, u2))
            for blk in self.refine:
                h = blk(h)
            mu = mu0 + F.scale(self.head_mu(h), MU_REF)
        else:
            mu = mu0
        return beta, mu0, mu
