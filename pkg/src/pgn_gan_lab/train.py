"""
Alternating adversarial training.

Each generator step is preceded by ``n_dis`` discriminator steps. All
randomness flows from one PCG64 generator stored in checkpoints, so a
resumed run continues the exact trajectory of an uninterrupted one.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .checkpoint import Checkpoint
from .datasets import Dataset, sample_real
from .metrics import evaluate_generator
from .nn import NetworkSpec, ParameterStore, kaiming_init, net_forward, power_iteration_step
from .normalizers import (
    LossKind,
    NormalizerKind,
    NormalizerName,
    augment_images,
    consistency_regularization,
    d_loss,
    discriminate,
    g_loss,
    gradient_penalty,
    input_grad_norm,
    penalty_points,
)
from .optim import AdamState, NonFiniteGradientError, TrainingError, adam_step, ema_update

logger = logging.getLogger(__name__)

METRICS_HEADER = (
    "step",
    "loss_d",
    "loss_g",
    "grad_norm_mean",
    "grad_norm_max",
    "frechet",
    "mode_coverage",
    "high_quality_ratio",
)


class TrainingDivergedError(TrainingError):
    """A loss or gradient became non-finite."""

    def __init__(self, message: str, step: int, checkpoint: Checkpoint):
        self.step = step
        self.checkpoint = checkpoint
        super().__init__(message)


@dataclass
class TrainConfig:
    """Hyperparameters of the training loop."""

    alpha_g: float = 1e-4
    alpha_d: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.999
    batch_size: int = 64
    n_dis: int = 5
    total_steps: int = 1000
    ema_decay: float = 0.9999
    # Before this step the EMA simply tracks the generator.
    ema_start: int = 0
    normalizer: NormalizerKind = field(default_factory=NormalizerKind.pgn)
    loss: LossKind = LossKind.HINGE
    lambda_cr: Optional[float] = None
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 0
    eval_samples: int = 2000
    adam_eps: float = 1e-8
    # Objectives are multiplied by this before differentiation (1 / (2M) convention).
    loss_scale: float = 0.5

    def validate(self) -> Tuple[bool, List[str]]:
        """
        Validate the hyperparameters.

        Returns:
            Tuple of (is_valid, list of error messages).
        """
        errors = []
        if not (self.alpha_g > 0 and self.alpha_d > 0):
            errors.append("Learning rates alpha_g and alpha_d must be positive.")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            errors.append("beta1 and beta2 must lie in [0, 1).")
        if self.batch_size < 1:
            errors.append("batch_size must be at least 1.")
        if self.n_dis < 1:
            errors.append("n_dis must be at least 1.")
        if self.total_steps < 0:
            errors.append("steps must be non-negative.")
        if not 0.0 <= self.ema_decay < 1.0:
            errors.append("ema_decay must lie in [0, 1).")
        if self.ema_start < 0:
            errors.append("ema_start must be non-negative.")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            errors.append("eval_every and checkpoint_every must be non-negative.")
        if self.lambda_cr is not None and self.lambda_cr < 0:
            errors.append("lambda_cr must be non-negative.")
        if not self.loss_scale > 0:
            errors.append("loss_scale must be positive.")
        _, normalizer_errors = self.normalizer.validate()
        errors.extend(normalizer_errors)
        return len(errors) == 0, errors

    def check(self) -> "TrainConfig":
        is_valid, errors = self.validate()
        if not is_valid:
            raise TrainingError(
                "Invalid training config:\n" + "\n".join(f"  - {e}" for e in errors)
            )
        return self


@dataclass
class MetricsRow:
    """One line of the metrics log."""

    step: int
    loss_d: float
    loss_g: float
    grad_norm_mean: float
    grad_norm_max: float
    frechet: float
    mode_coverage: int
    high_quality_ratio: float = 0.0

    def to_csv_fields(self) -> List[str]:
        return [
            str(self.step),
            repr(self.loss_d),
            repr(self.loss_g),
            repr(self.grad_norm_mean),
            repr(self.grad_norm_max),
            repr(self.frechet),
            str(self.mode_coverage),
            repr(self.high_quality_ratio),
        ]


class MetricsLog:
    """Metrics CSV that survives resumption."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def start(self, resume_step: int = 0) -> None:
        """
        Write the header, or on resume keep only rows up to ``resume_step``.
        """
        kept: List[List[str]] = []
        if resume_step > 0 and self.path.is_file():
            with self.path.open(newline="", encoding="utf-8") as handle:
                rows = list(csv.reader(handle))
            kept = [row for row in rows[1:] if row and int(row[0]) <= resume_step]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            writer.writerows(kept)

    def append(self, row: MetricsRow) -> None:
        with self.path.open("a", newline="", encoding="utf-8") as handle:
            csv.writer(handle, lineterminator="\n").writerow(row.to_csv_fields())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: List[MetricsRow] = field(default_factory=list)
    d_updates: int = 0
    g_updates: int = 0


def initial_checkpoint(
    config: TrainConfig,
    g_spec: NetworkSpec,
    d_spec: NetworkSpec,
    config_text: str = "",
) -> Checkpoint:
    """Freshly initialized networks and optimizers at step 0."""
    g_seed, d_seed, train_seed = np.random.SeedSequence(config.seed).generate_state(3)
    generator = kaiming_init(g_spec, int(g_seed))
    discriminator = kaiming_init(d_spec, int(d_seed), spectral=config.normalizer.spectral)
    rng = np.random.Generator(np.random.PCG64(int(train_seed)))
    return Checkpoint(
        step=0,
        generator=generator,
        discriminator=discriminator,
        ema=ParameterStore(dict(generator.params)),
        g_adam=AdamState.zeros_like(generator.params),
        d_adam=AdamState.zeros_like(discriminator.params),
        rng_state=rng.bit_generator.state,
        config_text=config_text,
    )


class _Diverged(Exception):
    pass


@dataclass
class _State:
    generator: ParameterStore
    discriminator: ParameterStore
    ema: ParameterStore
    g_adam: AdamState
    d_adam: AdamState
    rng: np.random.Generator
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    def snapshot(self, step: int, config_text: str) -> Checkpoint:
        return Checkpoint(
            step=step,
            generator=self.generator,
            discriminator=self.discriminator,
            ema=self.ema,
            g_adam=self.g_adam,
            d_adam=self.d_adam,
            rng_state=self.rng.bit_generator.state,
            config_text=config_text,
            extra=dict(self.extra),
        )


def _discriminator_step(
    config: TrainConfig,
    g_spec: NetworkSpec,
    d_spec: NetworkSpec,
    dataset: Dataset,
    state: _State,
) -> float:
    rng = state.rng
    kind = config.normalizer
    if kind.spectral:
        state.discriminator = power_iteration_step(state.discriminator)

    m = config.batch_size
    x_real = sample_real(dataset, m, rng).data
    z = rng.standard_normal((m, g_spec.input_dims[0]))
    x_fake = net_forward(g_spec, state.generator, z).data

    with Tape() as tape:
        params = tape.watch_all(state.discriminator.params)
        store = state.discriminator.with_params(params)
        real = discriminate(d_spec, store, x_real, kind, tape)
        fake = discriminate(d_spec, store, x_fake, kind, tape)
        objective = d_loss(config.loss, real, fake)

        if kind.name is NormalizerName.GP:
            points = tape.watch(Tensor(penalty_points(kind, x_real, x_fake, rng)))
            raw = ad.reshape(net_forward(d_spec, store, points), (m,))
            penalty = gradient_penalty(input_grad_norm(tape, raw, points), kind.target, kind.lam)
            objective = ad.add(objective, penalty)

        if config.lambda_cr:
            cr = consistency_regularization(
                lambda batch: discriminate(d_spec, store, batch, kind, tape).value,
                x_real,
                lambda batch: augment_images(batch, rng),
                config.lambda_cr,
            )
            objective = ad.add(objective, cr)

        if not objective.is_finite():
            raise _Diverged(f"discriminator loss is {objective.item()}")
        grads = backward(tape, ad.mul(objective, config.loss_scale), params)

    try:
        new_params, state.d_adam = adam_step(
            state.discriminator.params,
            grads,
            state.d_adam,
            config.alpha_d,
            config.beta1,
            config.beta2,
            config.adam_eps,
        )
    except NonFiniteGradientError as e:
        raise _Diverged(str(e)) from e
    state.discriminator = state.discriminator.with_params(new_params)
    return objective.item()


def _generator_step(
    config: TrainConfig, g_spec: NetworkSpec, d_spec: NetworkSpec, state: _State
) -> float:
    z = state.rng.standard_normal((config.batch_size, g_spec.input_dims[0]))
    with Tape() as tape:
        params = tape.watch_all(state.generator.params)
        x_fake = net_forward(g_spec, state.generator.with_params(params), z)
        fake = discriminate(d_spec, state.discriminator, x_fake, config.normalizer, tape)
        objective = g_loss(config.loss, fake)
        if not objective.is_finite():
            raise _Diverged(f"generator loss is {objective.item()}")
        grads = backward(tape, ad.mul(objective, config.loss_scale), params)

    try:
        new_params, state.g_adam = adam_step(
            state.generator.params,
            grads,
            state.g_adam,
            config.alpha_g,
            config.beta1,
            config.beta2,
            config.adam_eps,
        )
    except NonFiniteGradientError as e:
        raise _Diverged(str(e)) from e
    state.generator = state.generator.with_params(new_params)
    return objective.item()


def eval_rng(seed: int, step: int) -> np.random.Generator:
    """Evaluation randomness, independent of the training stream."""
    return np.random.default_rng([seed, step])


def train_pgn_gan(
    config: TrainConfig,
    g_spec: NetworkSpec,
    d_spec: NetworkSpec,
    dataset: Dataset,
    resume: Optional[Checkpoint] = None,
    config_text: str = "",
    on_metrics: Optional[Callable[[MetricsRow], None]] = None,
    on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
) -> TrainResult:
    """
    Train a generator against a normalized discriminator.

    Args:
        config: Hyperparameters.
        g_spec: Generator description.
        d_spec: Discriminator description.
        dataset: Source of real samples.
        resume: Continue from this checkpoint instead of a fresh start.
        config_text: Echo of the run configuration stored in checkpoints.
        on_metrics: Called with each metrics row as it is produced.
        on_checkpoint: Called every ``checkpoint_every`` steps.

    Returns:
        TrainResult with the final checkpoint, metrics rows and update counters.

    Raises:
        TrainingError: If the config is invalid.
        CheckpointMismatchError: If ``resume`` does not fit the networks.
        TrainingDivergedError: If a loss or gradient becomes non-finite; it
            carries a checkpoint of the last good state.
    """
    config.check()
    g_spec.check()
    d_spec.check()

    fresh = initial_checkpoint(config, g_spec, d_spec, config_text)
    if resume is None:
        start = fresh
    else:
        resume.check_compatible(fresh.generator, fresh.discriminator)
        start = resume
    if config_text:
        start.config_text = config_text

    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = start.rng_state
    state = _State(
        start.generator,
        start.discriminator,
        start.ema,
        start.g_adam.copy(),
        start.d_adam.copy(),
        rng,
        dict(start.extra),
    )
    result = TrainResult(checkpoint=start)
    text = start.config_text

    if start.step >= config.total_steps:
        return result

    logger.info(
        "Training %s/%s from step %d to %d",
        config.normalizer.label,
        config.loss.value,
        start.step,
        config.total_steps,
    )
    for step in range(start.step + 1, config.total_steps + 1):
        before = state.snapshot(step - 1, text)
        try:
            for _ in range(config.n_dis):
                loss_d = _discriminator_step(config, g_spec, d_spec, dataset, state)
                result.d_updates += 1
            loss_g = _generator_step(config, g_spec, d_spec, state)
            result.g_updates += 1
        except _Diverged as e:
            logger.error("Training diverged at step %d: %s", step, e)
            raise TrainingDivergedError(
                f"Training diverged at step {step}: {e}", step, before
            ) from None

        if step <= config.ema_start:
            state.ema = ParameterStore(dict(state.generator.params))
        else:
            state.ema = ParameterStore(
                ema_update(state.ema.params, state.generator.params, config.ema_decay)
            )
        logger.debug("step %d loss_d=%.6f loss_g=%.6f", step, loss_d, loss_g)

        if config.eval_every and step % config.eval_every == 0:
            report = evaluate_generator(
                g_spec,
                state.ema,
                d_spec,
                state.discriminator,
                config.normalizer,
                dataset,
                config.eval_samples,
                eval_rng(config.seed, step),
            )
            row = MetricsRow(
                step=step,
                loss_d=loss_d,
                loss_g=loss_g,
                grad_norm_mean=report.grad_norm_mean,
                grad_norm_max=report.grad_norm_max,
                frechet=report.frechet,
                mode_coverage=report.mode_coverage,
                high_quality_ratio=report.high_quality_ratio,
            )
            result.metrics.append(row)
            logger.info(
                "step %d loss_d=%.4f loss_g=%.4f frechet=%.4f modes=%d hq=%.3f grad_max=%.4f",
                step,
                loss_d,
                loss_g,
                report.frechet,
                report.mode_coverage,
                report.high_quality_ratio,
                report.grad_norm_max,
            )
            if on_metrics is not None:
                on_metrics(row)

        if on_checkpoint is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            on_checkpoint(state.snapshot(step, text))

    result.checkpoint = state.snapshot(config.total_steps, text)
    return result

