"""Pixel and adversarial losses.

The GAN losses are the relativistic-average least-squares pair: every patch
score is judged against the mean score of the opposite class, where the mean
is taken over all patches and batch items of the current mini-batch. The
class means stay inside the autograd graph here; whether the opposing
network's scores are treated as constants is decided by the training loop
(it detaches generated images in the discriminator step and the real score
map in the generator step).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor


@dataclass(frozen=True)
class GanWeights:
    """Weighting factor applied to the adversarial terms of the full objective."""

    gan_lambda: float = 1e-2

    def __post_init__(self):
        if not self.gan_lambda > 0:
            raise ValueError("gan_lambda must be positive")


@dataclass(frozen=True)
class RelativisticScores:
    """Discriminator score maps for real and generated batches plus their means."""

    real_scores: Tensor
    fake_scores: Tensor
    real_mean: Tensor
    fake_mean: Tensor

    @classmethod
    def from_score_maps(cls, real: Tensor, fake: Tensor) -> "RelativisticScores":
        if real.shape != fake.shape:
            raise ValueError(f"score map mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
        return cls(real, fake, real.mean(), fake.mean())


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over all batch items and pixels."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def gan_loss_d(s: RelativisticScores) -> Tensor:
    """Discriminator side: real patches should score one above the fake mean,
    fake patches one below the real mean."""
    return ((s.real_scores - s.fake_mean - 1.0) ** 2).mean() + (
        (s.fake_scores - s.real_mean + 1.0) ** 2
    ).mean()


def gan_loss_g(s: RelativisticScores) -> Tensor:
    """Generator side: the sign-flipped mirror of the discriminator loss."""
    return ((s.real_scores - s.fake_mean + 1.0) ** 2).mean() + (
        (s.fake_scores - s.real_mean - 1.0) ** 2
    ).mean()


def full_objective(
    l1: Tensor, ld: Tensor, lg: Tensor, w: GanWeights
) -> tuple[Tensor, Tensor]:
    """Combine the loss terms into the two per-network optimizer targets.

    Returns (d_objective, g_objective) where d_objective = (lambda/2) * ld and
    g_objective = (lambda/2) * lg + l1; both are minimized by their optimizers
    (minimizing the least-squares discriminator loss realizes the adversarial
    max step of the least-squares GAN convention).
    """
    for name, t in (("l1", l1), ("ld", ld), ("lg", lg)):
        if not torch.isfinite(t).all():
            raise FloatingPointError(f"non-finite {name} loss: {t}")
    half_lambda = 0.5 * w.gan_lambda
    return half_lambda * ld, half_lambda * lg + l1
