"""PatchGAN-style Wasserstein critic.

Strided 4x4 convolutions with LeakyReLU and no normalization (a batch-coupled
norm would mix samples inside the gradient penalty). The last layer is a bare
convolution to one channel; the per-image score is the mean of that map.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn


@dataclass(frozen=True)
class CriticConfig:
    input_size: int = 64
    channels_in: int = 1
    num_layers: int = 4
    base_width: int = 64
    norm: str = "none"
    kernel_size: int = 4

    def __post_init__(self):
        if self.num_layers < 2:
            raise ValueError("num_layers must be >= 2")
        if self.kernel_size not in (3, 4):
            raise ValueError("kernel_size must be 3 or 4")
        if self.norm not in ("none", "layer"):
            raise ValueError("norm must be 'none' or 'layer'")
        if self.receptive_field() >= self.input_size:
            raise ValueError(
                f"receptive field {self.receptive_field()} is not smaller than the image "
                f"({self.input_size}); reduce num_layers")

    def receptive_field(self) -> int:
        # (num_layers - 1) stride-2 convs, then a stride-1 output conv
        rf, jump = 1, 1
        for stride in [2] * (self.num_layers - 1) + [1]:
            rf += (self.kernel_size - 1) * jump
            jump *= stride
        return rf


class PatchCritic(nn.Module):
    def __init__(self, config: CriticConfig):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        cin, w = config.channels_in, config.base_width
        size = config.input_size
        for i in range(config.num_layers - 1):
            layers.append(nn.Conv2d(cin, w, config.kernel_size, stride=2, padding=1))
            size //= 2
            if config.norm == "layer" and i > 0:
                layers.append(nn.GroupNorm(1, w))
            layers.append(nn.LeakyReLU(0.2))
            cin, w = w, min(w * 2, config.base_width * 8)
        self.features = nn.Sequential(*layers)
        self.out = nn.Conv2d(cin, 1, config.kernel_size, stride=1, padding=1)

    def score_map(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.dim() != 4 or x.shape[1] != cfg.channels_in or x.shape[-1] != cfg.input_size \
                or x.shape[-2] != cfg.input_size:
            raise ValueError(
                f"expected (B, {cfg.channels_in}, {cfg.input_size}, {cfg.input_size}), got {tuple(x.shape)}")
        return self.out(self.features(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.score_map(x).mean(dim=(1, 2, 3))


def criticize(x: torch.Tensor, critic: PatchCritic):
    """Per-image scores and the underlying patch score map."""
    smap = critic.score_map(x)
    return smap.mean(dim=(1, 2, 3)), smap


def save_checkpoint(model: PatchCritic, path: str | Path) -> None:
    torch.save({"config": asdict(model.config), "state_dict": model.state_dict()}, path)


def load_critic(path: str | Path, config: CriticConfig | None = None) -> PatchCritic:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    stored = CriticConfig(**blob["config"])
    if config is not None and config != stored:
        raise ValueError(f"checkpoint config {stored} does not match requested {config}")
    model = PatchCritic(stored)
    model.load_state_dict(blob["state_dict"])
    return model
