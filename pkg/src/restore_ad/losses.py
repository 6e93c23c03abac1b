"""Training objectives for the generator and the critic.

Norms are reduced to per-pixel means so loss magnitudes do not depend on the
image resolution: identity loss is mean absolute error, restoration loss is the
root-mean-square error, both averaged over the batch.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch


@dataclass(frozen=True)
class LossWeights:
    lambda_id: float = 10.0
    lambda_rec: float = 10.0
    lambda_gp: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative, got {v}")


@dataclass
class LossBreakdown:
    id: float = float("nan")
    rec: float = float("nan")
    g_adv: float = float("nan")
    g_total: float = float("nan")
    d_adv: float = float("nan")
    gp: float = float("nan")
    d_total: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def _check_pair(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def identity_loss(x_n_prime: torch.Tensor, x_n: torch.Tensor) -> torch.Tensor:
    _check_pair(x_n_prime, x_n)
    return (x_n_prime - x_n).abs().flatten(1).mean(1).mean()


def restoration_loss(x_p_prime: torch.Tensor, x_n: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of per-image RMS error between restored pseudo-anomalies and their sources."""
    _check_pair(x_p_prime, x_n)
    mse = (x_p_prime - x_n).pow(2).flatten(1).mean(1)
    # sqrt has an infinite slope at 0; route exact zeros around it so gradients stay finite
    pos = mse > 0
    rms = torch.where(pos, torch.where(pos, mse, torch.ones_like(mse)).sqrt(), torch.zeros_like(mse))
    return rms.mean()


def generator_adv_loss(d_scores: torch.Tensor) -> torch.Tensor:
    if d_scores.numel() == 0:
        raise ValueError("empty score batch")
    return -d_scores.mean()


def interpolate_xhat(real: torch.Tensor, fake: torch.Tensor, generator: torch.Generator | None = None,
                     eps: torch.Tensor | None = None) -> torch.Tensor:
    """Per-sample random convex combination ``eps * real + (1 - eps) * fake``."""
    _check_pair(real, fake)
    if eps is None:
        eps = torch.rand(real.shape[0], generator=generator, dtype=real.dtype)
    eps = torch.as_tensor(eps, dtype=real.dtype).reshape(-1, *([1] * (real.dim() - 1)))
    return eps * real + (1 - eps) * fake


def gradient_penalty(critic, x_hat: torch.Tensor, create_graph: bool = True) -> torch.Tensor:
    # input gradients are needed even when the caller runs under no_grad
    with torch.enable_grad():
        x_hat = x_hat.detach().requires_grad_(True)
        scores = critic(x_hat)
        grads = None
        if scores.requires_grad:
            grads, = torch.autograd.grad(scores.sum(), x_hat, create_graph=create_graph,
                                         allow_unused=True)
    if grads is None:
        # critic ignores its input: the gradient is identically zero
        grads = torch.zeros_like(x_hat)
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1) ** 2).mean()


def discriminator_loss(critic, x_n: torch.Tensor, x_fake: torch.Tensor, weights: LossWeights,
                       generator: torch.Generator | None = None, eps=None):
    """Returns ``(d_total, LossBreakdown)``; ``x_fake`` is detached here."""
    if x_n.shape[0] == 0 or x_fake.shape[0] == 0:
        raise ValueError("empty batch")
    x_fake = x_fake.detach()
    d_adv = critic(x_fake).mean() - critic(x_n).mean()
    # interpolation needs matching batch sizes; trim to the shorter batch
    m = min(x_n.shape[0], x_fake.shape[0])
    x_hat = interpolate_xhat(x_n[:m], x_fake[:m], generator, eps)
    gp = gradient_penalty(critic, x_hat)
    total = d_adv + weights.lambda_gp * gp
    return total, LossBreakdown(d_adv=d_adv.item(), gp=gp.item(), d_total=total.item())


def generator_total(id_loss, rec_loss, g_adv, weights: LossWeights):
    for name, v in (("id", id_loss), ("rec", rec_loss), ("g_adv", g_adv)):
        v = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(v):
            raise ValueError(f"non-finite loss component {name}: {v}")
    return g_adv + weights.lambda_id * id_loss + weights.lambda_rec * rec_loss
