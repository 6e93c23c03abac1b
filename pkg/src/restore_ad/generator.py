"""Spatial-aware attention generator.

The image is split into an ``N x N`` grid of patches. Every encoder input and
every skip connection gets extra constant channels holding the binary index of
the patch each pixel falls in, so translation-equivariant convolutions can
still tell grid cells apart. The decoder gates each skip connection with an
attention map before using it, upsampled decoder outputs are fused into a
per-pixel additive map, and the restored image is ``tanh(G(x) + x)`` where
``G(x) = delta * I(x) + (1 - delta) * x``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class GeneratorConfig:
    input_size: int = 64
    channels_in: int = 1
    patch_grid_n: int = 2
    base_width: int = 32
    num_levels: int = 4
    gating_prob: float = 0.9
    # decoder levels (0 = full resolution) that carry an attention gate
    gate_levels: tuple[int, ...] | None = None
    gate_scope: str = "output"
    fuse_width: int | None = None
    use_position_codes: bool = True

    def __post_init__(self):
        if self.patch_grid_n < 1:
            raise ValueError("patch_grid_n must be >= 1")
        if not 0.0 <= self.gating_prob <= 1.0:
            raise ValueError("gating_prob must lie in [0, 1]")
        if self.num_levels < 1:
            raise ValueError("num_levels must be >= 1")
        if self.gate_scope not in ("output", "skips"):
            raise ValueError("gate_scope must be 'output' or 'skips'")
        if self.input_size % (2 ** self.num_levels):
            raise ValueError(f"input_size {self.input_size} not divisible by 2**num_levels")
        # codes are appended down to the bottleneck resolution
        bottom = self.input_size // 2 ** self.num_levels
        if bottom % self.patch_grid_n:
            raise ValueError(
                f"bottleneck size {bottom} not divisible by patch_grid_n {self.patch_grid_n}")
        if self.gate_levels is not None:
            object.__setattr__(self, "gate_levels", tuple(int(g) for g in self.gate_levels))
            bad = [g for g in self.gate_levels if not 0 <= g < self.num_levels]
            if bad:
                raise ValueError(f"gate_levels out of range: {bad}")

    @property
    def gated(self) -> tuple[int, ...]:
        if self.gate_levels is None:
            return tuple(range(self.num_levels))
        return self.gate_levels

    def widths(self) -> list[int]:
        return [self.base_width * 2 ** i for i in range(self.num_levels)]


@dataclass(frozen=True)
class PositionalCodeTable:
    n: int
    dim: int
    codes: np.ndarray = field(repr=False)


def code_dim(n: int) -> int:
    return math.ceil(math.log2(n * n) + 1)


def positional_codes(n: int) -> PositionalCodeTable:
    """Binary codes for the N*N patches, row-major, most significant bit first."""
    if n < 1:
        raise ValueError("n must be >= 1")
    dim = code_dim(n)
    idx = np.arange(n * n)
    bits = (idx[:, None] >> np.arange(dim - 1, -1, -1)[None, :]) & 1
    return PositionalCodeTable(n=n, dim=dim, codes=bits.astype(np.float32))


def position_planes(table: PositionalCodeTable, height: int, width: int) -> torch.Tensor:
    """``(dim, H, W)`` tensor: at each pixel, the code of the patch covering it."""
    n = table.n
    if height % n or width % n:
        raise ValueError(f"feature size {height}x{width} not divisible by grid {n}")
    grid = torch.from_numpy(table.codes).T.reshape(table.dim, n, n)
    return grid.repeat_interleave(height // n, dim=1).repeat_interleave(width // n, dim=2)


def append_position_channels(f: torch.Tensor, table: PositionalCodeTable) -> torch.Tensor:
    """Concatenate the patch-code planes to a ``(B, C, H, W)`` feature map."""
    b, _, h, w = f.shape
    planes = position_planes(table, h, w).to(dtype=f.dtype, device=f.device)
    return torch.cat([f, planes.unsqueeze(0).expand(b, -1, -1, -1)], dim=1)


class AttentionGate(nn.Module):
    """alpha = sigmoid(C3(relu(C1(f) + C2(g)))); returns (alpha * g, alpha)."""

    def __init__(self, f_channels: int, g_channels: int, inter_channels: int):
        super().__init__()
        self.c1 = nn.Conv2d(f_channels, inter_channels, 1)
        self.c2 = nn.Conv2d(g_channels, inter_channels, 1, bias=False)
        self.c3 = nn.Conv2d(inter_channels, 1, 1)

    def forward(self, f: torch.Tensor, g: torch.Tensor):
        a = self.c1(f)
        b = self.c2(g)
        if a.shape[-2:] != b.shape[-2:]:
            raise ValueError(f"gate inputs disagree spatially: {tuple(a.shape)} vs {tuple(b.shape)}")
        alpha = torch.sigmoid(self.c3(F.relu(a + b)))
        return alpha * g, alpha


def attention_gate(f_l: torch.Tensor, g_l: torch.Tensor, params: AttentionGate):
    return params(f_l, g_l)


def gated_shortcut(residual: torch.Tensor, identity: torch.Tensor, delta) -> torch.Tensor:
    """``delta * residual + (1 - delta) * identity`` with per-sample ``delta``."""
    if residual.shape != identity.shape:
        raise ValueError(f"shape mismatch: {tuple(residual.shape)} vs {tuple(identity.shape)}")
    delta = torch.as_tensor(delta, dtype=residual.dtype, device=residual.device)
    if delta.dim() == 1:
        delta = delta.view(-1, *([1] * (residual.dim() - 1)))
    return delta * residual + (1 - delta) * identity


def sample_delta(batch: int, p: float, generator: torch.Generator) -> torch.Tensor:
    return torch.bernoulli(torch.full((batch,), float(p)), generator=generator)


def _conv_block(cin: int, cout: int, act: nn.Module) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.InstanceNorm2d(cout, affine=True),
        act,
    )


class SpatialAttentionGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        cfg = config
        self.table = positional_codes(cfg.patch_grid_n)
        pe = self.table.dim if cfg.use_position_codes else 0
        widths = cfg.widths()

        self.encoders = nn.ModuleList()
        cin = cfg.channels_in
        for w in widths:
            self.encoders.append(_conv_block(cin + pe, w, nn.LeakyReLU(0.2)))
            cin = w
        c = widths[-1]
        self.bottleneck = nn.Sequential(
            _conv_block(c + pe, c, nn.LeakyReLU(0.2)),
            _conv_block(c, c, nn.LeakyReLU(0.2)),
        )

        # decoder level l consumes the (upsampled) coarser output and skip l
        self.gates = nn.ModuleDict()
        self.decoders = nn.ModuleList()
        coarse = c
        for level in reversed(range(cfg.num_levels)):
            skip_c = widths[level] + pe
            if level in cfg.gated:
                self.gates[str(level)] = AttentionGate(coarse, skip_c, max(widths[level] // 2, 1))
            self.decoders.append(_conv_block(coarse + skip_c, widths[level], nn.ReLU()))
            coarse = widths[level]
        # decoders are stored coarse -> fine; index by level for clarity
        self._dec_levels = list(reversed(range(cfg.num_levels)))

        fuse = cfg.fuse_width or cfg.base_width
        self.fuse_proj = nn.ModuleList(nn.Conv2d(widths[l], fuse, 1) for l in self._dec_levels)
        self.fuse_block = _conv_block(fuse, fuse, nn.ReLU())
        self.head = nn.Conv2d(fuse, cfg.channels_in, 3, padding=1)
        nn.init.normal_(self.head.weight, std=1e-3)
        nn.init.zeros_(self.head.bias)

    def _pe(self, f: torch.Tensor) -> torch.Tensor:
        if not self.config.use_position_codes:
            return f
        return append_position_channels(f, self.table)

    def additive_map(self, x: torch.Tensor, skip_delta: torch.Tensor | None = None,
                     return_attention: bool = False):
        """The learned map I(x), optionally with the attention maps per level."""
        skips = []
        h = x
        for enc in self.encoders:
            s = enc(self._pe(h))
            skips.append(s)
            h = F.avg_pool2d(s, 2)
        h = self.bottleneck(self._pe(h))

        attn = {}
        outs = []
        for dec, level in zip(self.decoders, self._dec_levels):
            g = self._pe(skips[level])
            if skip_delta is not None:
                g = gated_shortcut(g, torch.zeros_like(g), skip_delta)
            f = F.interpolate(h, size=g.shape[-2:], mode="bilinear", align_corners=False)
            if str(level) in self.gates:
                g, alpha = self.gates[str(level)](f, g)
                attn[level] = alpha
            h = dec(torch.cat([f, g], dim=1))
            outs.append(h)

        size = x.shape[-2:]
        fused = 0
        for proj, o in zip(self.fuse_proj, outs):
            p = proj(o)
            if p.shape[-2:] != size:
                p = F.interpolate(p, size=size, mode="bilinear", align_corners=False)
            fused = fused + p
        out = self.head(self.fuse_block(fused))
        return (out, attn) if return_attention else out

    def forward(self, x: torch.Tensor, mode: str = "infer",
                generator: torch.Generator | None = None, delta=None) -> torch.Tensor:
        cfg = self.config
        if x.dim() != 4 or x.shape[1] != cfg.channels_in or \
                x.shape[-1] != cfg.input_size or x.shape[-2] != cfg.input_size:
            raise ValueError(
                f"expected (B, {cfg.channels_in}, {cfg.input_size}, {cfg.input_size}), got {tuple(x.shape)}")
        if delta is None:
            if mode == "train":
                if generator is None:
                    raise ValueError("mode='train' needs a torch.Generator")
                delta = sample_delta(x.shape[0], cfg.gating_prob, generator)
            elif mode == "infer":
                delta = torch.ones(x.shape[0])
            else:
                raise ValueError(f"unknown mode {mode!r}")
        delta = torch.as_tensor(delta, dtype=x.dtype).reshape(-1).expand(x.shape[0])
        if cfg.gate_scope == "skips":
            return torch.tanh(self.additive_map(x, skip_delta=delta) + x)
        return torch.tanh(gated_shortcut(self.additive_map(x), x, delta) + x)


def generate(x: torch.Tensor, model: SpatialAttentionGenerator, mode: str = "infer",
             rng: torch.Generator | None = None) -> torch.Tensor:
    return model(x, mode=mode, generator=rng)


def save_checkpoint(model: nn.Module, path: str | Path) -> None:
    torch.save({"config": asdict(model.config), "state_dict": model.state_dict()}, path)


def load_generator(path: str | Path, config: GeneratorConfig | None = None) -> SpatialAttentionGenerator:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    stored = _config_from_dict(GeneratorConfig, blob["config"])
    if config is not None and config != stored:
        raise ValueError(f"checkpoint config {stored} does not match requested {config}")
    model = SpatialAttentionGenerator(stored)
    model.load_state_dict(blob["state_dict"])
    return model


def _config_from_dict(cls, d: dict):
    d = dict(d)
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(v)
    return cls(**d)
