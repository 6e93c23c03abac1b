"""Adversarial training loop.

Each generator iteration is preceded by ``d_steps_per_g_step`` critic updates.
All randomness is derived from ``(seed, purpose, step counter)``, so the step
counters and the data-stream cursors are the complete RNG state: a run resumed
from a checkpoint replays exactly what an uninterrupted run would have done.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, TrainConfig, from_dict, save_run_config
from .data import BatchStream, DatasetRepartition, load_split
from .discriminator import PatchCritic, load_critic
from .discriminator import save_checkpoint as save_critic
from .generator import SpatialAttentionGenerator, load_generator
from .generator import save_checkpoint as save_generator
from .losses import (LossBreakdown, discriminator_loss, generator_adv_loss, generator_total,
                     identity_loss, restoration_loss)
from .synthesis import paired_batch

log = logging.getLogger(__name__)

_PURPOSE = {"init": 0, "d_gen": 1, "d_eps": 2, "d_synth": 3, "g_gen": 4, "g_synth": 5,
            "stream_n": 6, "stream_u": 7}


class TrainingError(RuntimeError):
    pass


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    return cfg.lr * cfg.lr_decay_factor ** (iteration // cfg.lr_decay_every)


def _seed(seed: int, purpose: str, step: int = 0) -> int:
    ss = np.random.SeedSequence([seed, _PURPOSE[purpose], step])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _torch_rng(seed: int, purpose: str, step: int) -> torch.Generator:
    return torch.Generator().manual_seed(_seed(seed, purpose, step))


def _np_rng(seed: int, purpose: str, step: int) -> np.random.Generator:
    return np.random.default_rng(_seed(seed, purpose, step))


def _check_finite(name: str, value: torch.Tensor, **context):
    if not torch.isfinite(value).all():
        raise TrainingError(f"non-finite {name} loss ({value.item()}); context: {context}")


class Trainer:
    """Owns the generator, the critic, both optimizers and the data streams."""

    def __init__(self, config: RunConfig, normal: np.ndarray, unlabeled: np.ndarray | None = None):
        self.config = config
        tc = config.train
        if len(normal) == 0:
            raise TrainingError("normal_train is empty")
        if tc.include_unlabeled and (unlabeled is None or len(unlabeled) == 0):
            raise TrainingError("unlabeled_train is empty but include_unlabeled is set")
        with torch.random.fork_rng():
            torch.manual_seed(_seed(tc.seed, "init"))
            self.generator = SpatialAttentionGenerator(config.generator)
            self.critic = PatchCritic(config.critic)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=tc.lr, betas=tc.adam_betas)
        self.opt_d = torch.optim.Adam(self.critic.parameters(), lr=tc.lr, betas=tc.adam_betas)
        self.normal_stream = BatchStream(np.asarray(normal, np.float32), tc.batch_size,
                                         _seed(tc.seed, "stream_n"))
        self.unlabeled_stream = None
        if tc.include_unlabeled:
            self.unlabeled_stream = BatchStream(np.asarray(unlabeled, np.float32), tc.batch_size,
                                                _seed(tc.seed, "stream_u"))
        self.g_steps = 0
        self.d_steps = 0
        self.log: list[dict] = []

    @property
    def lr_current(self) -> float:
        return lr_at(self.config.train, self.g_steps)

    def _set_lr(self):
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = self.lr_current

    def _draw(self):
        x_n = torch.from_numpy(self.normal_stream.next())
        x_u = None if self.unlabeled_stream is None else torch.from_numpy(self.unlabeled_stream.next())
        return x_n, x_u

    def train_step_discriminator(self, x_n=None, x_u=None) -> LossBreakdown:
        tc = self.config.train
        if x_n is None:
            x_n, x_u = self._draw()
        step = self.d_steps
        self._set_lr()
        with torch.no_grad():
            if tc.include_unlabeled:
                source = x_u
            else:
                # no unlabeled data: restored pseudo-anomalies play the fake role
                source, _, _ = paired_batch(x_n, self.config.synth, _np_rng(tc.seed, "d_synth", step))
            fake = self.generator(source, mode="train", generator=_torch_rng(tc.seed, "d_gen", step))
        self.critic.requires_grad_(True)
        self.opt_d.zero_grad(set_to_none=True)
        total, br = discriminator_loss(self.critic, x_n, fake, tc.weights,
                                       generator=_torch_rng(tc.seed, "d_eps", step))
        _check_finite("critic", total, d_step=step, **br.as_dict())
        total.backward()
        self.opt_d.step()
        self.opt_d.zero_grad(set_to_none=True)
        self.d_steps += 1
        return br

    def train_step_generator(self, x_n=None, x_u=None) -> LossBreakdown:
        tc = self.config.train
        if x_n is None:
            x_n, x_u = self._draw()
        step = self.g_steps
        self._set_lr()
        gen_rng = _torch_rng(tc.seed, "g_gen", step)
        x_p, _, _ = paired_batch(x_n, self.config.synth, _np_rng(tc.seed, "g_synth", step))

        self.critic.requires_grad_(False)
        self.opt_g.zero_grad(set_to_none=True)
        # the three passes share one batched forward; instance norm keeps samples independent
        parts = [x_n, x_p] + ([x_u] if tc.include_unlabeled else [])
        restored = self.generator(torch.cat(parts), mode="train", generator=gen_rng)
        pieces = torch.split(restored, [len(p) for p in parts])
        x_n_prime, x_p_prime = pieces[0], pieces[1]
        x_u_prime = pieces[2] if tc.include_unlabeled else x_p_prime
        l_id = identity_loss(x_n_prime, x_n)
        l_rec = restoration_loss(x_p_prime, x_n)
        l_adv = generator_adv_loss(self.critic(x_u_prime))
        try:
            total = generator_total(l_id, l_rec, l_adv, tc.weights)
        except ValueError as exc:
            raise TrainingError(f"generator step {step}: {exc}") from exc
        _check_finite("generator", total, g_step=step)
        total.backward()
        self.opt_g.step()
        self.opt_g.zero_grad(set_to_none=True)
        self.critic.requires_grad_(True)
        self.g_steps += 1
        return LossBreakdown(id=l_id.item(), rec=l_rec.item(), g_adv=l_adv.item(),
                             g_total=total.item())

    def iteration(self) -> dict:
        """Critic updates followed by one generator update; returns the log entry."""
        for _ in range(self.config.train.d_steps_per_g_step):
            d_br = self.train_step_discriminator()
        g_br = self.train_step_generator()
        entry = {"iteration": self.g_steps, "lr": self.lr_at_step(self.g_steps - 1)}
        entry.update({k: getattr(g_br, k) for k in ("id", "rec", "g_adv", "g_total")})
        entry.update({k: getattr(d_br, k) for k in ("d_adv", "gp", "d_total")})
        self.log.append(entry)
        return entry

    def lr_at_step(self, iteration: int) -> float:
        return lr_at(self.config.train, iteration)

    def run(self, out_dir: str | Path | None = None, max_iterations: int | None = None,
            progress: bool = False) -> list[dict]:
        tc = self.config.train
        stop = tc.max_iterations if max_iterations is None else max_iterations
        out = Path(out_dir) if out_dir is not None else None
        log_fh = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            log_fh = open(out / "loss_log.jsonl", "a", encoding="utf-8")
        try:
            while self.g_steps < stop:
                entry = self.iteration()
                if log_fh is not None and (self.g_steps % tc.log_every == 0 or self.g_steps == stop):
                    log_fh.write(json.dumps(entry) + "\n")
                    log_fh.flush()
                if progress and self.g_steps % 100 == 0:
                    log.info("iter %d  g_total %.4f  d_total %.4f", self.g_steps,
                             entry["g_total"], entry["d_total"])
                if out is not None and (self.g_steps % tc.checkpoint_every == 0 or self.g_steps == stop):
                    self.save(out / f"ckpt_{self.g_steps}")
        finally:
            if log_fh is not None:
                log_fh.close()
        return self.log

    def save(self, ckpt_dir: str | Path) -> Path:
        d = Path(ckpt_dir)
        d.mkdir(parents=True, exist_ok=True)
        save_generator(self.generator, d / "generator.pt")
        save_critic(self.critic, d / "critic.pt")
        torch.save({"opt_g": self.opt_g.state_dict(), "opt_d": self.opt_d.state_dict()},
                   d / "optimizers.pt")
        save_run_config(self.config, d / "config.json")
        state = {
            "g_steps": self.g_steps,
            "d_steps": self.d_steps,
            "lr_current": self.lr_current,
            "normal_stream": self.normal_stream.cursor(),
            "unlabeled_stream": None if self.unlabeled_stream is None else self.unlabeled_stream.cursor(),
        }
        (d / "state.json").write_text(json.dumps(state, indent=1) + "\n", encoding="utf-8")
        return d

    @classmethod
    def resume(cls, ckpt_dir: str | Path, normal: np.ndarray,
               unlabeled: np.ndarray | None = None) -> "Trainer":
        d = Path(ckpt_dir)
        cfg = load_checkpoint_config(d)
        trainer = cls(cfg, normal, unlabeled)
        trainer.generator = load_generator(d / "generator.pt", cfg.generator)
        trainer.critic = load_critic(d / "critic.pt", cfg.critic)
        tc = cfg.train
        trainer.opt_g = torch.optim.Adam(trainer.generator.parameters(), lr=tc.lr, betas=tc.adam_betas)
        trainer.opt_d = torch.optim.Adam(trainer.critic.parameters(), lr=tc.lr, betas=tc.adam_betas)
        opts = torch.load(d / "optimizers.pt", map_location="cpu", weights_only=False)
        trainer.opt_g.load_state_dict(opts["opt_g"])
        trainer.opt_d.load_state_dict(opts["opt_d"])
        state = json.loads((d / "state.json").read_text(encoding="utf-8"))
        trainer.g_steps = state["g_steps"]
        trainer.d_steps = state["d_steps"]
        trainer.normal_stream.restore(state["normal_stream"])
        if trainer.unlabeled_stream is not None and state["unlabeled_stream"] is not None:
            trainer.unlabeled_stream.restore(state["unlabeled_stream"])
        return trainer


def load_checkpoint_config(ckpt_dir: str | Path) -> RunConfig:
    raw = json.loads((Path(ckpt_dir) / "config.json").read_text(encoding="utf-8"))
    return from_dict(RunConfig, raw)


def latest_checkpoint(run_dir: str | Path) -> Path | None:
    ckpts = sorted(Path(run_dir).glob("ckpt_*"), key=lambda p: int(p.name.split("_")[1]))
    return ckpts[-1] if ckpts else None


def run_training(config: RunConfig, repartition: DatasetRepartition,
                 out_dir: str | Path | None = None, progress: bool = False) -> Trainer:
    size = config.generator.input_size
    normal, _ = load_split(repartition, "normal_train", size)
    unlabeled = None
    if config.train.include_unlabeled:
        unlabeled, _ = load_split(repartition, "unlabeled_train", size)
    trainer = Trainer(config, normal, unlabeled)
    trainer.run(out_dir, progress=progress)
    return trainer
