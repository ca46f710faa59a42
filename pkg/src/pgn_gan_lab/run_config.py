"""
Run configuration files.

A run is described by a flat ``key=value`` file with ``#`` comments. Every
key has a default; the ``task`` key selects a preset that is applied before
the file's own values.
"""

import io
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values

from .datasets import (
    Dataset,
    ImageDataset,
    SyntheticDataset,
    SyntheticKind,
    bar_images,
)
from .nn import (
    Activation,
    NetworkSpec,
    NetworkSpecError,
    conv_discriminator,
    conv_generator,
    mlp_discriminator,
    mlp_generator,
)
from .normalizers import LossKind, NormalizerError, NormalizerKind
from .train import TrainConfig

TASKS = ("ring8", "grid25", "swissroll", "images")
SYNTHETIC_IMAGE_COUNT = 512


class ConfigurationError(Exception):
    """Configuration error."""

    pass


@dataclass(frozen=True)
class RunConfig:
    """Every setting of a run; defaults are the 2-D task preset."""

    task: str = "ring8"
    normalizer: str = "pgn"
    loss: str = "hinge"
    alpha_g: float = 1e-3
    alpha_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size: int = 64
    n_dis: int = 5
    steps: int = 5000
    ema_decay: float = 0.995
    ema_start: int = 2500
    lambda_cr: float = 0.0
    seed: int = 0
    out_dir: str = "runs"
    eval_every: int = 100
    checkpoint_every: int = 1000
    eval_samples: int = 2000
    # Network shape
    g_hidden: Tuple[int, ...] = (128, 128)
    d_hidden: Tuple[int, ...] = (128, 128, 128)
    latent_dim: int = 16
    activation: str = "leaky_relu"
    leaky_slope: float = 0.1
    output_scale: float = 3.0
    # Normalizer extras
    gn_zeta: Optional[float] = None
    gp_lambda: float = 10.0
    # Data
    std: float = 0.02
    data_dir: str = ""
    image_channels: int = 1
    image_size: int = 8

    @classmethod
    def preset(cls, task: str) -> "RunConfig":
        """Defaults for a task."""
        if task == "images":
            return cls(
                task=task,
                alpha_g=1e-4,
                alpha_d=2e-4,
                beta1=0.0,
                beta2=0.999,
                batch_size=50,
                n_dis=4,
                steps=2000,
                ema_decay=0.9999,
                ema_start=1000,
                lambda_cr=5.0,
                g_hidden=(16,),
                d_hidden=(16, 32),
                latent_dim=32,
                output_scale=1.0,
                eval_samples=500,
            )
        return cls(task=task)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Optional[str]]) -> "RunConfig":
        """
        Build a config from raw string values.

        Raises:
            ConfigurationError: Unknown keys, missing values or unparsable values.
        """
        unknown = sorted(set(values) - set(_PARSERS))
        if unknown:
            raise ConfigurationError(f"Unknown configuration key(s): {', '.join(unknown)}")

        task = (values.get("task") or "ring8").strip().lower()
        if task not in TASKS:
            raise ConfigurationError(f"Invalid task: {task}. Valid options: {', '.join(TASKS)}")

        parsed = {}
        for key, raw in values.items():
            if raw is None:
                raise ConfigurationError(f"Key '{key}' has no value")
            try:
                parsed[key] = _PARSERS[key](raw.strip())
            except ValueError as e:
                raise ConfigurationError(f"Invalid value for '{key}': {raw!r} ({e})") from None
        parsed["task"] = task
        return replace(cls.preset(task), **parsed)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_mapping(dotenv_values(stream=io.StringIO(text), interpolate=False))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}")
        return cls.from_mapping(dotenv_values(path, interpolate=False))

    def to_text(self) -> str:
        """Normalized key=value form; parsing it yields an equal config."""
        lines = [f"{f.name}={_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def validate(self) -> Tuple[bool, List[str]]:
        """
        Validate the configuration.

        Returns:
            Tuple of (is_valid, list of error messages).
        """
        errors = []
        try:
            self.normalizer_kind()
        except NormalizerError as e:
            errors.append(str(e))
        try:
            LossKind.from_string(self.loss)
        except NormalizerError as e:
            errors.append(str(e))

        activation = Activation.from_string(self.activation)
        if activation is None or not activation.piecewise_linear:
            errors.append(
                f"Invalid activation: {self.activation}. Valid options: relu, leaky_relu"
            )
        if self.latent_dim < 1:
            errors.append("latent_dim must be at least 1.")
        if not self.g_hidden or not self.d_hidden:
            errors.append("g_hidden and d_hidden need at least one width.")
        if any(width < 1 for width in self.g_hidden + self.d_hidden):
            errors.append("Hidden widths must be positive.")
        if self.lambda_cr < 0:
            errors.append("lambda_cr must be non-negative.")
        if self.lambda_cr > 0 and self.task != "images":
            errors.append("lambda_cr applies to the images task only.")
        if self.std < 0:
            errors.append("std must be non-negative.")
        if self.eval_samples < 2:
            errors.append("eval_samples must be at least 2.")
        if self.task == "images" and (self.image_channels < 1 or self.image_size < 4):
            errors.append("image_channels must be >= 1 and image_size >= 4.")

        _, train_errors = self.train_config().validate()
        errors.extend(train_errors)
        return len(errors) == 0, errors

    def check(self) -> "RunConfig":
        is_valid, errors = self.validate()
        if not is_valid:
            raise ConfigurationError(
                "Configuration validation failed:\n" + "\n".join(f"  - {e}" for e in errors)
            )
        return self

    def normalizer_kind(self) -> NormalizerKind:
        return NormalizerKind.from_string(self.normalizer, zeta=self.gn_zeta, lam=self.gp_lambda)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            alpha_g=self.alpha_g,
            alpha_d=self.alpha_d,
            beta1=self.beta1,
            beta2=self.beta2,
            batch_size=self.batch_size,
            n_dis=self.n_dis,
            total_steps=self.steps,
            ema_decay=self.ema_decay,
            ema_start=self.ema_start,
            normalizer=self._normalizer_or_default(),
            loss=self._loss_or_default(),
            lambda_cr=self.lambda_cr if self.lambda_cr > 0 else None,
            seed=self.seed,
            eval_every=self.eval_every,
            checkpoint_every=self.checkpoint_every,
            eval_samples=self.eval_samples,
        )

    def _normalizer_or_default(self) -> NormalizerKind:
        try:
            return self.normalizer_kind()
        except NormalizerError:
            return NormalizerKind.pgn()

    def _loss_or_default(self) -> LossKind:
        try:
            return LossKind.from_string(self.loss)
        except NormalizerError:
            return LossKind.HINGE

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        if self.task == "images":
            return (self.image_channels, self.image_size, self.image_size)
        return (2,)

    def build_dataset(self) -> Dataset:
        """
        Raises:
            ConfigurationError: If the image set does not match the configured shape.
            DatasetError: If the image set cannot be loaded.
        """
        if self.task != "images":
            return SyntheticDataset(SyntheticKind(self.task), std=self.std)
        if not self.data_dir:
            rng = np.random.default_rng(self.seed)
            images = bar_images(SYNTHETIC_IMAGE_COUNT, rng, self.image_channels, self.image_size)
            return ImageDataset(Path("<bars>"), images)
        dataset = ImageDataset.load(self.data_dir)
        if dataset.sample_shape != self.sample_shape:
            raise ConfigurationError(
                f"Images in {self.data_dir} have shape {dataset.sample_shape}; "
                f"config expects {self.sample_shape} (image_channels, image_size)"
            )
        return dataset

    def build_networks(self) -> Tuple[NetworkSpec, NetworkSpec]:
        """(generator, discriminator) specs for this task."""
        activation = Activation.from_string(self.activation) or Activation.LEAKY_RELU
        try:
            if self.task == "images":
                generator = conv_generator(self.latent_dim, self.sample_shape, self.g_hidden[0])
                discriminator = conv_discriminator(
                    self.sample_shape, self.d_hidden, activation, self.leaky_slope
                )
            else:
                generator = mlp_generator(
                    self.latent_dim, self.g_hidden, 2, output_scale=self.output_scale
                )
                discriminator = mlp_discriminator(
                    2, self.d_hidden, activation, self.leaky_slope
                )
        except NetworkSpecError as e:
            raise ConfigurationError(str(e)) from e
        return generator, discriminator


def _parse_widths(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_zeta(text: str) -> Optional[float]:
    return None if text.lower() in ("abs", "") else float(text)


def _lower(text: str) -> str:
    return text.lower()


_PARSERS: Dict[str, Callable[[str], object]] = {
    "task": _lower,
    "normalizer": _lower,
    "loss": _lower,
    "alpha_g": float,
    "alpha_d": float,
    "beta1": float,
    "beta2": float,
    "batch_size": int,
    "n_dis": int,
    "steps": int,
    "ema_decay": float,
    "ema_start": int,
    "lambda_cr": float,
    "seed": int,
    "out_dir": str,
    "eval_every": int,
    "checkpoint_every": int,
    "eval_samples": int,
    "g_hidden": _parse_widths,
    "d_hidden": _parse_widths,
    "latent_dim": int,
    "activation": _lower,
    "leaky_slope": float,
    "output_scale": float,
    "gn_zeta": _parse_zeta,
    "gp_lambda": float,
    "std": float,
    "data_dir": str,
    "image_channels": int,
    "image_size": int,
}


def _format(value: object) -> str:
    if value is None:
        return "abs"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Load and validate a run configuration file.

    Raises:
        ConfigurationError: If the file is missing or invalid.
    """
    return RunConfig.from_file(path).check()


