"""Two-stage projection-domain network."""
from __future__ import annotations

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import DimensionError
from ..nn import AttenRDB, Conv3d, Module, SelfAttention
from .config import CascadeConfig
from .unet import Decoder, Encoder, zero_head


class TSPNet(Module):
    """Stage 1: U-Net restoring the missing views (P_LDFV estimate).
    Stage 2: full-resolution AttenRDB chain denoising it (P_FDFV estimate).

    Iteration ``i`` takes ``i`` projection channels; from the second
    iteration on it also takes the forward projection of the previous
    mu-map, fused through the encoder (or concatenated at the input when
    multi-layer fusion is ablated).
    """

    def __init__(self, iteration: int, cfg: CascadeConfig, rng):
        self.iteration = iteration
        self.n_proj = iteration
        self.n_aux = 1 if iteration >= 2 else 0
        self.cfg = cfg
        c = cfg.channels
        in_ch = self.n_proj + (self.n_aux if cfg.no_mlf else 0)
        aux_ch = 0 if cfg.no_mlf else self.n_aux
        self.enc = Encoder(in_ch, aux_ch, c, cfg.levels, cfg.rdb, rng)
        self.dec = Decoder(self.enc.widths, cfg.rdb, rng)
        self.head1 = zero_head(c, rng)
        self.stage2 = not cfg.no_tsp_stage2
        if self.stage2:
            self.att = SelfAttention(c, 1, rng)
            # P_att, plus nearest-upsampled features of every coarser decoder level
            mix_in = sum(self.enc.widths)
            self.mix = Conv3d(mix_in, c, 1, rng)
            self.refine = [AttenRDB(c, cfg.rdb, rng) for _ in range(cfg.tsp_stage2_blocks)]
            self.head2 = zero_head(c, rng)

    @property
    def multiple(self) -> int:
        return 2 ** (self.cfg.levels - 1)

    def forward(self, proj_in, anat=None, last=None):
        """``proj_in`` [B, i, U, V, D]; ``anat`` [B, 1, U, V, D] or None; ``last`` is
        the most recent projection estimate that the stage-1 head is residual on
        (defaults to the last input channel)."""
        if proj_in.ndim != 5 or proj_in.shape[1] != self.n_proj:
            raise DimensionError(
                f"iteration {self.iteration} expects {self.n_proj} projection channels, got shape {proj_in.shape}",
                axis=1,
            )
        if (anat is None) != (self.n_aux == 0):
            raise DimensionError(f"iteration {self.iteration}: anatomical input must be {'absent' if self.n_aux == 0 else 'given'}")
        if last is None:
            last = F.slice_axis(proj_in, 1, self.n_proj - 1, self.n_proj)
        D = proj_in.shape[4]
        pad = (-D) % self.multiple
        for ax in (2, 3):
            if proj_in.shape[ax] % self.multiple:
                raise DimensionError(
                    f"detector extent {proj_in.shape[ax]} must be divisible by {self.multiple}", axis=ax
                )

        def padded(t):
            return F.pad_axis(t, 4, 0, pad) if pad else t

        x = padded(proj_in)
        a = padded(anat) if anat is not None else None
        if self.cfg.no_mlf and a is not None:
            x, a = F.concat_channels([x, a]), None
        feats = self.enc(x, a)
        outs = self.dec(feats)
        p0 = outs[-1]
        lastp = padded(last)
        p_ldfv = self.head1(p0) + lastp
        if self.stage2:
            p_att = self.att(p0, p_ldfv)
            L = len(outs)
            ups = [F.upsample_nearest(outs[k], 2 ** (L - 1 - k)) for k in range(L - 1)]
            h = self.mix(F.concat_channels([p_att] + ups))
            for blk in self.refine:
                h = blk(h)
            p_fdfv = self.head2(h) + p_ldfv
        else:
            p_fdfv = p_ldfv
        if pad:
            p_ldfv = F.slice_axis(p_ldfv, 4, 0, D)
            p_fdfv = p_ldfv if not self.stage2 else F.slice_axis(p_fdfv, 4, 0, D)
        return p_ldfv, p_fdfv
