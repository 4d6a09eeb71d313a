from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..nn import AttenRDBParams


@dataclass(frozen=True)
class CascadeConfig:
    n_iters: int = 5
    channels: int = 8
    growth: int = 4
    n_dense: int = 3
    reduction: int = 4
    levels: int = 3
    tsp_stage2_blocks: int = 4
    bda_stage2_blocks: int = 3
    no_tsp_stage2: bool = False
    no_bda_stage2: bool = False
    no_mlf: bool = False
    # cut the graph between iterations (experimentation only)
    detach: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("the cascade needs at least one iteration")
        if self.channels < 1 or self.growth < 1 or self.levels < 1:
            raise ValueError("channels, growth and levels must be positive")

    @property
    def rdb(self) -> AttenRDBParams:
        return AttenRDBParams(self.n_dense, self.growth, self.reduction)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown cascade keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def full_scale(cls, **kw) -> "CascadeConfig":
        """Widths sized for the full 72x72x40 / 32x32x19 problem."""
        kw.setdefault("channels", 16)
        kw.setdefault("growth", 16)
        return cls(**kw)


ABLATIONS = ("no_tsp_stage2", "no_bda_stage2", "no_mlf")


def ablation_config(base: CascadeConfig, flags) -> CascadeConfig:
    """Copy of ``base`` with the named ablations switched on.

    ``flags`` is an iterable of names (dashes or underscores) or a dict of booleans.
    """
    if isinstance(flags, dict):
        names = [k for k, v in flags.items() if v]
    else:
        names = list(flags)
    upd = {}
    for n in names:
        key = n.replace("-", "_")
        if key not in ABLATIONS:
            raise ValueError(f"unknown ablation {n!r}; choose from {ABLATIONS}")
        upd[key] = True
    return dataclasses.replace(base, **upd)
