"""Restoration-based semi-supervised anomaly detection for medical-style images."""
from .config import RunConfig, TrainConfig, EvalConfig, load_run_config
from .discriminator import CriticConfig, PatchCritic
from .generator import GeneratorConfig, SpatialAttentionGenerator, positional_codes
from .losses import LossWeights
from .synthesis import SynthParams

__version__ = "0.1.0"
