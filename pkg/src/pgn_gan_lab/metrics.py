"""
Sample-quality metrics for generators.
"""

import logging
from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .datasets import Dataset, sample_real
from .nn import NetworkSpec, ParameterStore, net_forward
from .normalizers import NormalizerKind, discriminate

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-8
EIGENVALUE_FLOOR = -1e-10
GRAD_STATS_BATCH = 256
GENERATOR_CHUNK = 4096
# Reports count a mode once it holds one in this many samples (10 of 10k).
COVERAGE_DIVISOR = 1000


class MetricsError(Exception):
    """Base exception for metric errors."""

    pass


class NonSymmetricCovarianceError(MetricsError):
    """A covariance matrix is not symmetric."""

    pass


class NotPositiveSemidefiniteError(MetricsError):
    """A covariance product has a clearly negative eigenvalue."""

    pass


def fit_gaussian(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance of samples flattened to (n, d)."""
    flat = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    if flat.shape[0] < 2:
        raise MetricsError(f"Need at least 2 samples to fit a Gaussian, got {flat.shape[0]}")
    return flat.mean(axis=0), np.atleast_2d(np.cov(flat, rowvar=False, ddof=1))


def _check_symmetric(name: str, cov: np.ndarray) -> None:
    asymmetry = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
    if asymmetry > SYMMETRY_TOLERANCE:
        raise NonSymmetricCovarianceError(f"{name} is not symmetric (max asymmetry {asymmetry:.3g})")


def _clamped_eigenvalues(matrix: np.ndarray, what: str) -> np.ndarray:
    values = np.linalg.eigvalsh(matrix)
    if values.size and values.min() < EIGENVALUE_FLOOR:
        raise NotPositiveSemidefiniteError(f"{what} has eigenvalue {values.min():.3g}")
    return np.clip(values, 0.0, None)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(cov)
    if values.size and values.min() < EIGENVALUE_FLOOR:
        raise NotPositiveSemidefiniteError(f"Covariance has eigenvalue {values.min():.3g}")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def _trace_sqrt_product(cov1: np.ndarray, cov2: np.ndarray) -> float:
    # tr((C1 C2)^1/2) via the symmetric matrix S1 C2 S1, which shares its spectrum.
    root = _psd_sqrt(cov1)
    middle = root @ cov2 @ root
    middle = 0.5 * (middle + middle.T)
    return float(np.sum(np.sqrt(_clamped_eigenvalues(middle, "Covariance product"))))


def frechet_gaussian(
    mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray
) -> float:
    """
    Squared Frechet distance between two Gaussians.

    ||mu1 - mu2||^2 + tr(C1) + tr(C2) - 2 tr((C1 C2)^1/2); exactly symmetric
    in its arguments and exactly 0 for identical inputs.

    Raises:
        NonSymmetricCovarianceError: If a covariance is not symmetric.
        NotPositiveSemidefiniteError: If a covariance is clearly indefinite.
    """
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    cov1, cov2 = np.atleast_2d(cov1), np.atleast_2d(cov2)
    _check_symmetric("cov1", cov1)
    _check_symmetric("cov2", cov2)
    if np.array_equal(mu1, mu2) and np.array_equal(cov1, cov2):
        return 0.0

    diff = mu1 - mu2
    mean_term = float(diff @ diff)
    traces = float(np.trace(cov1)) + float(np.trace(cov2))
    cross = 0.5 * (_trace_sqrt_product(cov1, cov2) + _trace_sqrt_product(cov2, cov1))
    return max(0.0, mean_term + traces - 2.0 * cross)


def _center_distances(samples: np.ndarray, centers: np.ndarray) -> np.ndarray:
    flat = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    return np.linalg.norm(flat[:, None, :] - centers[None, :, :], axis=2)


def mode_coverage(samples: np.ndarray, centers: np.ndarray, std: float, min_count: int = 1) -> int:
    """Number of centers with at least ``min_count`` samples within 3 std."""
    if len(samples) == 0 or len(centers) == 0:
        return 0
    near = _center_distances(samples, centers) <= 3.0 * std
    return int(np.sum(near.sum(axis=0) >= min_count))


def coverage_min_count(n: int) -> int:
    """Samples a mode needs in a report over ``n`` draws."""
    return max(1, -(-n // COVERAGE_DIVISOR))


def high_quality_ratio(samples: np.ndarray, centers: np.ndarray, std: float) -> float:
    """Fraction of samples within 3 std of some center."""
    if len(samples) == 0 or len(centers) == 0:
        return 0.0
    near = _center_distances(samples, centers) <= 3.0 * std
    return float(np.mean(near.any(axis=1)))


def grad_norm_stats(
    d_spec: NetworkSpec,
    d_params: ParameterStore,
    normalizer: NormalizerKind,
    eval_batch: np.ndarray,
) -> Tuple[float, float]:
    """Mean and max over the batch of the per-sample input-gradient norm of the normalized output."""
    if len(eval_batch) == 0:
        return 0.0, 0.0
    with Tape() as tape:
        x = tape.watch(Tensor(eval_batch))
        out = discriminate(d_spec, d_params, x, normalizer, tape)
        (grad,) = tape.gradient(ad.sum(out.value), [x])
    norms = np.linalg.norm(grad.data.reshape(len(eval_batch), -1), axis=1)
    return float(norms.mean()), float(norms.max())


@dataclass
class MetricsReport:
    """Quality metrics of one sample set."""

    frechet: float
    mode_coverage: int
    n_modes: int
    high_quality_ratio: float
    grad_norm_mean: float
    grad_norm_max: float

    FIELDS = (
        "frechet",
        "mode_coverage",
        "n_modes",
        "high_quality_ratio",
        "grad_norm_mean",
        "grad_norm_max",
    )

    def to_csv_fields(self) -> List[str]:
        values = asdict(self)
        return [_format(values[name]) for name in self.FIELDS]


def _format(value: object) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def generate(
    g_spec: NetworkSpec, g_params: ParameterStore, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``n`` generator samples from standard-normal latents."""
    latent_dim = g_spec.input_dims[0]
    z = rng.standard_normal((n, latent_dim))
    chunks = [
        net_forward(g_spec, g_params, z[start : start + GENERATOR_CHUNK]).numpy()
        for start in range(0, n, GENERATOR_CHUNK)
    ]
    if not chunks:
        return np.zeros((0,) + g_spec.output_dims)
    return np.concatenate(chunks, axis=0)


def _report(
    real: np.ndarray,
    candidate: np.ndarray,
    dataset: Dataset,
    grad_stats: Tuple[float, float],
) -> MetricsReport:
    mu_real, cov_real = fit_gaussian(real)
    mu_fake, cov_fake = fit_gaussian(candidate)
    centers = dataset.centers
    return MetricsReport(
        frechet=frechet_gaussian(mu_real, cov_real, mu_fake, cov_fake),
        mode_coverage=mode_coverage(
            candidate, centers, dataset.std, coverage_min_count(len(candidate))
        ),
        n_modes=len(centers),
        high_quality_ratio=high_quality_ratio(candidate, centers, dataset.std),
        grad_norm_mean=grad_stats[0],
        grad_norm_max=grad_stats[1],
    )


def evaluate_generator(
    g_spec: NetworkSpec,
    g_params: ParameterStore,
    d_spec: NetworkSpec,
    d_params: ParameterStore,
    normalizer: NormalizerKind,
    dataset: Dataset,
    n: int,
    rng: np.random.Generator,
) -> MetricsReport:
    """
    Compare ``n`` generator samples against ``n`` real samples.

    A mode counts as covered once at least ``coverage_min_count(n)`` samples
    fall within 3 std of it. Gradient statistics use up to 256 real and 256
    generated points.
    """
    real = sample_real(dataset, n, rng).numpy()
    fake = generate(g_spec, g_params, n, rng)
    k = min(n, GRAD_STATS_BATCH)
    batch = np.concatenate([real[:k], fake[:k]], axis=0)
    stats = grad_norm_stats(d_spec, d_params, normalizer, batch)
    report = _report(real, fake, dataset, stats)
    logger.debug("Evaluation on %d samples: %s", n, report)
    return report


def evaluate_real_vs_real(dataset: Dataset, n: int, rng: np.random.Generator) -> MetricsReport:
    """Metrics of a second real draw against the first; a floor for generator scores."""
    first = sample_real(dataset, n, rng).numpy()
    second = sample_real(dataset, n, rng).numpy()
    return _report(first, second, dataset, (0.0, 0.0))
