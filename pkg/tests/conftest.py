import numpy as np
import pytest
import torch

from restore_ad.config import RunConfig, TrainConfig
from restore_ad.discriminator import CriticConfig
from restore_ad.generator import GeneratorConfig
from restore_ad.losses import LossWeights


ACCEPTANCE: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    """Log one acceptance line and fail the calling test if ``ok`` is false."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


TINY_GEN = GeneratorConfig(input_size=8, channels_in=1, patch_grid_n=2, base_width=4,
                           num_levels=2, gating_prob=0.5)
TINY_CRITIC = CriticConfig(input_size=8, channels_in=1, num_layers=2, base_width=4, kernel_size=3)


def tiny_run_config(**train_kw) -> RunConfig:
    kw = dict(batch_size=4, max_iterations=10, checkpoint_every=5, lr=1e-3, seed=3,
              weights=LossWeights())
    kw.update(train_kw)
    return RunConfig(generator=TINY_GEN, critic=TINY_CRITIC, train=TrainConfig(**kw))


@pytest.fixture
def tiny_data():
    rng = np.random.default_rng(0)
    normal = rng.uniform(-0.5, 0.5, (12, 1, 8, 8)).astype(np.float32)
    unlabeled = rng.uniform(-0.5, 0.5, (10, 1, 8, 8)).astype(np.float32)
    return normal, unlabeled


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
