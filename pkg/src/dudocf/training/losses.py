"""Projection, image and total losses; all L1 terms are mean-reduced."""
from __future__ import annotations

from dataclasses import dataclass

from ..autodiff import functional as F


@dataclass(frozen=True)
class LossWeights:
    alpha_p: float = 1.0
    alpha_i: float = 0.2

    def __post_init__(self):
        if self.alpha_p < 0 or self.alpha_i < 0:
            raise ValueError("loss weights must be non-negative")


def projection_loss(p_ldfv_hat, p_fdfv_hat, p_ldfv, p_fdfv):
    """Stage-1 view restoration term plus stage-2 denoising term."""
    return F.l1_loss(p_ldfv_hat, p_ldfv) + F.l1_loss(p_fdfv_hat, p_fdfv)


def image_loss(beta_hat, mu0_hat, mu_hat, beta, mu):
    return F.l1_loss(beta_hat, beta) + F.l1_loss(mu0_hat, mu) + F.l1_loss(mu_hat, mu)


def iteration_losses(outputs: list[dict], labels: dict) -> list[tuple]:
    """``(projection, image)`` loss tensors for every iteration."""
    return [
        (
            projection_loss(o["p_ldfv"], o["p_fdfv"], labels["p_ldfv"], labels["p_fdfv"]),
            image_loss(o["beta"], o["mu0"], o["mu"], labels["beta"], labels["mu"]),
        )
        for o in outputs
    ]


def total_loss(outputs: list[dict], labels: dict, weights: LossWeights = LossWeights(), n_iters: int | None = None):
    """Sum over iterations of ``alpha_p * L_proj + alpha_i * L_img``.

    ``labels`` holds ``p_ldfv``, ``p_fdfv``, ``beta`` and ``mu`` tensors.
    """
    if n_iters is not None and n_iters != len(outputs):
        raise ValueError(f"expected {n_iters} iteration outputs, got {len(outputs)}")
    total = None
    for lp, li in iteration_losses(outputs, labels):
        term = F.scale(lp, weights.alpha_p) + F.scale(li, weights.alpha_i)
        total = term if total is None else total + term
    return total
