"""Three-level encoder/decoder shared by both sub-networks."""
from __future__ import annotations

import numpy as np

from ..autodiff import functional as F
from ..nn import CDF, AttenRDB, AttenRDBParams, Conv3d, ConvTranspose3d, Module


HEAD_INIT_SCALE = 1e-3


def zero_head(c: int, rng, bias: float = 0.0) -> Conv3d:
    """1x1x1 output conv starting near zero, so residual outputs start at their base.

    The weights are shrunk rather than zeroed so that every upstream
    parameter still sees a non-zero gradient at initialisation.
    """
    head = Conv3d(c, 1, 1, rng)
    head.weight.data *= HEAD_INIT_SCALE
    head.bias.data[...] = bias
    return head


class Encoder(Module):
    """Conv + AttenRDB per level with average pooling between levels.

    With ``aux_ch > 0`` an auxiliary branch (conv + ReLU per level) is fused
    into every level through a CDF block followed by a 1x1x1 conv back to
    the level width (multi-layer fusion).
    """

    def __init__(self, in_ch: int, aux_ch: int, c: int, levels: int, rdb: AttenRDBParams, rng):
        self.levels = levels
        widths = [c * 2**l for l in range(levels)]
        self.widths = widths
        self.conv_in = [Conv3d(in_ch if l == 0 else widths[l - 1], widths[l], 3, rng) for l in range(levels)]
        self.mlf = aux_ch > 0
        if self.mlf:
            self.aux_conv = [Conv3d(aux_ch if l == 0 else widths[l - 1], widths[l], 3, rng) for l in range(levels)]
            self.cdf = [CDF(w, rng) for w in widths]
            self.merge = [Conv3d(2 * w, w, 1, rng) for w in widths]
        self.rdb = [AttenRDB(w, rdb, rng) for w in widths]

    def forward(self, x, aux=None):
        feats = []
        h, a = x, aux
        for l in range(self.levels):
            if l:
                h = F.avg_pool3d(h)
                if self.mlf:
                    a = F.avg_pool3d(a)
            h = F.relu(self.conv_in[l](h))
            if self.mlf:
                a = F.relu(self.aux_conv[l](a))
                h = self.merge[l](self.cdf[l](h, a))
            h = self.rdb[l](h)
            feats.append(h)
        return feats


class Decoder(Module):
    """Transposed-conv upsampling, skip concatenation, conv + AttenRDB per level."""

    def __init__(self, widths, rdb: AttenRDBParams, rng):
        self.levels = len(widths)
        self.up = [ConvTranspose3d(widths[l + 1], widths[l], 3, rng) for l in range(self.levels - 1)]
        self.conv = [Conv3d(2 * widths[l], widths[l], 3, rng) for l in range(self.levels - 1)]
        self.rdb = [AttenRDB(widths[l], rdb, rng) for l in range(self.levels - 1)]

    def forward(self, feats):
        """Returns decoder outputs from coarsest (the bottleneck) to finest."""
        h = feats[-1]
        outs = [h]
        for l in reversed(range(self.levels - 1)):
            h = self.up[l](h)
            h = F.relu(self.conv[l](F.concat_channels([h, feats[l]])))
            h = self.rdb[l](h)
            outs.append(h)
        return outs
