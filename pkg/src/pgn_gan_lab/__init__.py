"""
PGN GAN Lab

Piecewise-linear GAN discriminators with gradient normalization: a small
reverse-mode autodiff engine, normalized discriminators, a training loop
with checkpoints, sample metrics and an executable verification suite.
"""

__version__ = "1.0.0"

from .autodiff import Tape, Tensor, backward, finite_difference_gradient
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .datasets import ImageDataset, SyntheticDataset, SyntheticKind, sample_real
from .metrics import MetricsReport, evaluate_generator, frechet_gaussian, mode_coverage
from .nn import (
    Activation,
    NetworkSpec,
    ParameterStore,
    kaiming_init,
    mlp_discriminator,
    mlp_generator,
    net_forward,
    spectral_norm,
)
from .normalizers import LossKind, NormalizerKind, d_loss, discriminate, g_loss, pgn_normalize
from .run_config import RunConfig, load_run_config
from .train import TrainConfig, TrainResult, train_pgn_gan
from .verification import VerifySettings, run_verify

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "finite_difference_gradient",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "ImageDataset",
    "SyntheticDataset",
    "SyntheticKind",
    "sample_real",
    "MetricsReport",
    "evaluate_generator",
    "frechet_gaussian",
    "mode_coverage",
    "Activation",
    "NetworkSpec",
    "ParameterStore",
    "kaiming_init",
    "mlp_discriminator",
    "mlp_generator",
    "net_forward",
    "spectral_norm",
    "LossKind",
    "NormalizerKind",
    "d_loss",
    "discriminate",
    "g_loss",
    "pgn_normalize",
    "RunConfig",
    "load_run_config",
    "TrainConfig",
    "TrainResult",
    "train_pgn_gan",
    "VerifySettings",
    "run_verify",
]
