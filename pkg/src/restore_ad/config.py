"""Run configuration: nested dataclasses, file loading and ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .discriminator import CriticConfig
from .generator import GeneratorConfig
from .losses import LossWeights
from .synthesis import SynthParams

OUTPUT_ROOT_ENV = "RESTORE_AD_OUTPUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 64
    max_iterations: int = 100_000
    lr_decay_every: int = 1000
    lr_decay_factor: float = 0.95
    d_steps_per_g_step: int = 2
    seed: int = 0
    checkpoint_every: int = 1000
    weights: LossWeights = field(default_factory=LossWeights)
    include_unlabeled: bool = True
    adam_betas: tuple[float, float] = (0.5, 0.999)
    log_every: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        for name in ("batch_size", "max_iterations", "lr_decay_every", "d_steps_per_g_step",
                     "checkpoint_every", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")


@dataclass(frozen=True)
class EvalConfig:
    score_mode: str = "mean"
    topk_fraction: float = 0.05
    batch_size: int = 64

    def __post_init__(self):
        if self.score_mode not in ("mean", "max", "topk_mean"):
            raise ValueError("score_mode must be mean, max or topk_mean")
        if not 0 < self.topk_fraction <= 1:
            raise ValueError("topk_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class DataConfig:
    repartition: str = ""


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthParams = field(default_factory=SynthParams)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = ""

    def __post_init__(self):
        g, c = self.generator, self.critic
        if (g.input_size, g.channels_in) != (c.input_size, c.channels_in):
            raise ValueError("generator and critic disagree on input_size/channels_in")

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def fingerprint(cfg) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _coerce(tp, value, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping")
        return from_dict(tp, value, prefix=key + ".")
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if value is None and type(None) in args:
            return None
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(a, value, key)
            except (ConfigError, TypeError, ValueError):
                continue
        raise ConfigError(f"{key}: cannot interpret {value!r} as {tp}")
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, key) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{key}: expected {len(args)} items")
        return tuple(_coerce(a, v, key) for a, v in zip(args, value))
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + u for u in unknown)}")
    kwargs = {k: _coerce(hints[k], v, prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{prefix.rstrip('.') or cls.__name__}: {exc}") from exc


def _set_path(d: dict, dotted: str, value):
    parts = dotted.split(".")
    cur = d
    for p in parts[:-1]:
        nxt = cur.get(p)
        if not isinstance(nxt, dict):
            raise ConfigError(f"unknown config key: {dotted}")
        cur = nxt
    if parts[-1] not in cur:
        raise ConfigError(f"unknown config key: {dotted}")
    cur[parts[-1]] = value


def apply_overrides(base: dict, overrides: list[str]) -> dict:
    out = json.loads(json.dumps(base))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        if value is None and raw.strip() not in ("null", "~", ""):
            value = raw
        _set_path(out, key.strip(), value)
    return out


def load_run_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    base = to_dict(RunConfig())
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        merged = _deep_merge(base, loaded, "")
    else:
        merged = base
    merged = apply_overrides(merged, overrides or [])
    return from_dict(RunConfig, merged)


def _deep_merge(base: dict, new: dict, prefix: str) -> dict:
    out = dict(base)
    for k, v in new.items():
        if k not in base:
            raise ConfigError(f"unknown config key: {prefix}{k}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _deep_merge(base[k], v, f"{prefix}{k}.")
        else:
            out[k] = v
    return out


def flat_defaults(cfg=None, prefix: str = "") -> list[tuple[str, object]]:
    """``[(dotted.key, default), ...]`` for every leaf of the run config."""
    d = to_dict(cfg if cfg is not None else RunConfig())
    out = []

    def walk(node, pre):
        for k, v in node.items():
            if isinstance(v, dict):
                walk(v, f"{pre}{k}.")
            else:
                out.append((pre + k, v))
    walk(d, prefix)
    return out


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
