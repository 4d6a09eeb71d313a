"""Mini-batch training of the cascade with validation, early stopping and checkpoints."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff.tensor import Tape, Tensor, backward, no_grad
from ..io import save_ddt
from ..metrics.voxel import nmse
from ..networks.cascade import DuDoCFNet, Scaling
from ..networks.checkpoint import save_checkpoint
from .losses import LossWeights, total_loss
from .optim import Adam

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "val_nmse_proj", "val_nmse_mu")


class NumericalError(RuntimeError):
    """Non-finite loss; ``dump`` points at the saved offending batch."""

    def __init__(self, msg, dump=None):
        super().__init__(msg)
        self.dump = dump


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 2
    lr_proj: float = 1e-3
    lr_image: float = 1e-4
    alpha_p: float = 1.0
    alpha_i: float = 0.2
    clip_norm: float = 10.0
    patience: int = 10
    seed: int = 0
    # stop after this many optimiser steps (None: run all epochs)
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr_proj <= 0 or self.lr_image <= 0:
            raise ValueError("learning rates must be positive")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha_p, self.alpha_i)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def make_batch(samples, scaling: Scaling) -> tuple[dict, dict]:
    """Scaled network inputs and labels as ``[B, 1, ...]`` tensors."""

    def stack(arrs):
        return Tensor(np.stack(arrs)[:, None])

    inputs = {
        "p_ldlv": stack([scaling.proj_in(s.P_LDLV) for s in samples]),
        "s_ldlv": stack([Scaling.volume_in(s.S_LDLV) for s in samples]),
    }
    labels = {
        # the stage-1 label keeps the low-dose level, rescaled like the input
        "p_ldfv": stack([scaling.proj_in(s.P_LDFV) for s in samples]),
        "p_fdfv": stack([scaling.proj_fd(s.P_FDFV) for s in samples]),
        "mu": stack([s.mu for s in samples]),
        "beta": stack([s.beta for s in samples]),
    }
    return inputs, labels


def make_optimizer(model: DuDoCFNet, cfg: TrainConfig) -> Adam:
    named = list(model.named_parameters())
    return Adam(
        {
            "proj": ([(n, p) for n, p in named if ".tsp." in n], cfg.lr_proj),
            "image": ([(n, p) for n, p in named if ".bda." in n], cfg.lr_image),
        }
    )


def predict(model: DuDoCFNet, samples, scaling: Scaling, batch_size: int = 2) -> list[dict]:
    """Final-iteration predictions per sample, as numpy arrays in physical units."""
    model.eval()
    out = []
    with no_grad():
        for k in range(0, len(samples), batch_size):
            chunk = samples[k : k + batch_size]
            inputs, _ = make_batch(chunk, scaling)
            res = model(inputs["p_ldlv"], inputs["s_ldlv"])[-1]
            for j in range(len(chunk)):
                out.append(
                    {
                        "p_fdfv": scaling.proj_out(res["p_fdfv"].data[j, 0]),
                        "p_ldfv": res["p_ldfv"].data[j, 0] * scaling.dose_rate * scaling.proj_scale,
                        "mu": res["mu"].data[j, 0].copy(),
                        "mu0": res["mu0"].data[j, 0].copy(),
                        "beta": res["beta"].data[j, 0].copy(),
                    }
                )
    return out


def validate(model, samples, scaling) -> tuple[float, float]:
    preds = predict(model, samples, scaling)
    proj = float(np.mean([nmse(p["p_fdfv"], s.P_FDFV) for p, s in zip(preds, samples)]))
    mu = float(np.mean([nmse(p["mu"], s.mu) for p, s in zip(preds, samples)]))
    return proj, mu


def _dump_batch(out_dir: Path, inputs, labels, indices) -> Path:
    dump = out_dir / "nan_dump"
    dump.mkdir(parents=True, exist_ok=True)
    for name, t in {**inputs, **labels}.items():
        save_ddt(dump / f"{name}.ddt", t.data)
    (dump / "batch.json").write_text(json.dumps({"sample_indices": [int(i) for i in indices]}))
    return dump


@dataclass
class TrainResult:
    log: list[dict]
    best_epoch: int
    best_score: float
    steps: int
    checkpoint: Path | None


def train(
    model: DuDoCFNet,
    train_samples,
    val_samples,
    scaling: Scaling,
    cfg: TrainConfig = TrainConfig(),
    out_dir=None,
) -> TrainResult:
    """Train in place. The model ends up holding the best-validation weights.

    Validation score for model selection is ``val_nmse_proj + val_nmse_mu``.
    With ``out_dir`` the best checkpoint goes to ``out_dir/checkpoint`` and
    the per-epoch log to ``out_dir/metrics.csv``.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(model, cfg)
    weights = cfg.weights
    rows = []
    best = (np.inf, 0)
    best_state = model.state_dict()
    best_opt = opt.state_dict()
    stale = 0
    steps = 0
    n = len(train_samples)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = rng.permutation(n)
        losses = []
        for k in range(0, n, cfg.batch_size):
            idx = perm[k : k + cfg.batch_size]
            batch = [train_samples[i] for i in idx]
            inputs, labels = make_batch(batch, scaling)
            opt.zero_grad()
            with Tape():
                outs = model(inputs["p_ldlv"], inputs["s_ldlv"])
                loss = total_loss(outs, labels, weights)
                value = float(loss.data)
                if not np.isfinite(value):
                    dump = _dump_batch(out, inputs, labels, [s.index for s in batch]) if out is not None else None
                    raise NumericalError(f"non-finite loss at epoch {epoch}, step {steps + 1}", dump)
                backward(loss)
            opt.clip(cfg.clip_norm)
            opt.step()
            steps += 1
            losses.append(value)
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
        vp, vm = validate(model, val_samples, scaling) if val_samples else (float("nan"), float("nan"))
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_nmse_proj": vp, "val_nmse_mu": vm}
        rows.append(row)
        log.info("epoch %d loss %.5f val proj %.3f%% mu %.3f%%", epoch, row["train_loss"], vp, vm)
        score = vp + vm if val_samples else row["train_loss"]
        if score < best[0]:
            best = (score, epoch)
            best_state = model.state_dict()
            best_opt = opt.state_dict()
            stale = 0
        else:
            stale += 1
        if out is not None:
            write_log(out / "metrics.csv", rows)
        if stale >= cfg.patience or (cfg.max_steps is not None and steps >= cfg.max_steps):
            break
    model.load_state_dict(best_state)
    ckpt = None
    if out is not None:
        ckpt = save_checkpoint(
            out / "checkpoint", model, scaling, best_opt, extra={"train": cfg.to_dict(), "best_epoch": best[1]}
        )
    return TrainResult(rows, best[1], float(best[0]), steps, ckpt)


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if k != "epoch" else r[k]) for k in LOG_COLUMNS})
