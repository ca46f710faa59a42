"""
Tests for the metrics module.
"""

import numpy as np
import pytest

from pgn_gan_lab.autodiff import Tensor
from pgn_gan_lab.datasets import SyntheticDataset, SyntheticKind, ring8_centers
from pgn_gan_lab.metrics import (
    MetricsError,
    MetricsReport,
    NonSymmetricCovarianceError,
    NotPositiveSemidefiniteError,
    coverage_min_count,
    evaluate_generator,
    evaluate_real_vs_real,
    fit_gaussian,
    frechet_gaussian,
    generate,
    grad_norm_stats,
    high_quality_ratio,
    mode_coverage,
)
from pgn_gan_lab.nn import (
    ParameterStore,
    bias_name,
    kaiming_init,
    mlp_discriminator,
    mlp_generator,
    weight_name,
)
from pgn_gan_lab.normalizers import NormalizerKind


def random_spd(rng, n=2):
    a = rng.standard_normal((n, n))
    return a @ a.T + 0.1 * np.eye(n)


def affine_discriminator(w):
    """A one-hidden-layer net computing <w, x> + 0.5 for |x| < 100."""
    return ParameterStore(
        {
            weight_name(0): Tensor(np.eye(2)),
            bias_name(0): Tensor([100.0, 100.0]),
            weight_name(2): Tensor([w]),
            bias_name(2): Tensor([0.5 - 100.0 * sum(w)]),
        }
    )


def frechet_2x2_oracle(mu1, c1, mu2, c2):
    product = c1 @ c2
    trace_sqrt = np.sqrt(np.trace(product) + 2.0 * np.sqrt(np.linalg.det(product)))
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(c1) + np.trace(c2) - 2.0 * trace_sqrt)


class TestFrechet:
    """Tests for the Gaussian Frechet distance."""

    def test_matches_closed_form_2x2(self):
        """Test against the closed-form 2x2 square-root trace."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            mu1, mu2 = rng.standard_normal(2), rng.standard_normal(2)
            c1, c2 = random_spd(rng), random_spd(rng)
            expected = frechet_2x2_oracle(mu1, c1, mu2, c2)
            assert abs(frechet_gaussian(mu1, c1, mu2, c2) - expected) <= 1e-8

    def test_diagonal_covariances(self):
        """Test sum((sqrt a - sqrt b)^2) for diagonal covariances."""
        a, b = np.array([4.0, 1.0]), np.array([1.0, 9.0])
        distance = frechet_gaussian(np.zeros(2), np.diag(a), np.zeros(2), np.diag(b))
        assert distance == pytest.approx(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2))

    def test_identical_inputs_are_zero(self):
        """Test the exact zero at identical Gaussians."""
        rng = np.random.default_rng(1)
        c = random_spd(rng, 3)
        mu = rng.standard_normal(3)
        assert frechet_gaussian(mu, c, mu, c) == 0.0

    def test_symmetric(self):
        """Test exact symmetry in the argument order."""
        rng = np.random.default_rng(2)
        mu1, mu2 = rng.standard_normal(3), rng.standard_normal(3)
        c1, c2 = random_spd(rng, 3), random_spd(rng, 3)
        assert frechet_gaussian(mu1, c1, mu2, c2) == frechet_gaussian(mu2, c2, mu1, c1)

    def test_rejects_non_symmetric(self):
        """Test that asymmetric covariances raise."""
        with pytest.raises(NonSymmetricCovarianceError):
            frechet_gaussian(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2), np.eye(2))

    def test_rejects_indefinite(self):
        """Test that a clearly negative eigenvalue raises."""
        with pytest.raises(NotPositiveSemidefiniteError):
            frechet_gaussian(np.zeros(2), np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))

    def test_fit_gaussian(self):
        """Test mean and unbiased covariance."""
        samples = np.random.default_rng(3).standard_normal((100, 2))
        mu, cov = fit_gaussian(samples)
        np.testing.assert_allclose(mu, samples.mean(axis=0))
        np.testing.assert_allclose(cov, np.cov(samples.T, ddof=1))

    def test_fit_gaussian_needs_two_samples(self):
        """Test that one sample cannot define a covariance."""
        with pytest.raises(MetricsError):
            fit_gaussian(np.zeros((1, 2)))


class TestModeMetrics:
    """Tests for mode coverage and sample quality."""

    def test_all_modes_covered(self):
        """Test samples exactly at every center."""
        centers = ring8_centers()
        assert mode_coverage(centers, centers, 0.02) == 8

    def test_partial_coverage(self):
        """Test samples at half the centers."""
        centers = ring8_centers()
        assert mode_coverage(centers[:4], centers, 0.02) == 4

    def test_min_count(self):
        """Test that a mode needs min_count nearby samples."""
        centers = ring8_centers()
        samples = np.concatenate([np.repeat(centers[:1], 10, axis=0), centers[1:2]])
        assert mode_coverage(samples, centers, 0.02, min_count=10) == 1

    def test_empty_samples(self):
        """Test coverage of an empty sample set."""
        assert mode_coverage(np.zeros((0, 2)), ring8_centers(), 0.02) == 0

    def test_real_data_covers_every_mode(self):
        """Test real ring8 draws with min_count 10."""
        dataset = SyntheticDataset(SyntheticKind.RING8)
        samples = dataset.sample(1000, np.random.default_rng(0))
        assert mode_coverage(samples, dataset.centers, dataset.std, min_count=10) == 8

    def test_report_threshold_scales_with_draws(self):
        """Test one in a thousand samples per covered mode, at least one."""
        assert coverage_min_count(10000) == 10
        assert coverage_min_count(10001) == 11
        assert coverage_min_count(2000) == 2
        assert coverage_min_count(20) == 1

    def test_high_quality_ratio(self):
        """Test the fraction of samples near some center."""
        centers = ring8_centers()
        samples = np.concatenate([centers[:2], np.full((2, 2), 10.0)])
        assert high_quality_ratio(samples, centers, 0.02) == 0.5


class TestEvaluation:
    """Tests for generator evaluation."""

    def test_real_vs_real(self):
        """Test the self-distance floor of ring8 on two 10k draws."""
        report = evaluate_real_vs_real(
            SyntheticDataset(SyntheticKind.RING8), 10000, np.random.default_rng(0)
        )
        assert report.mode_coverage == 8
        assert report.n_modes == 8
        assert report.high_quality_ratio > 0.98
        assert report.frechet <= 0.01
        assert report.grad_norm_mean == report.grad_norm_max == 0.0

    def test_self_distance_floor_on_disjoint_halves(self):
        """Test the Frechet distance between two halves of one 20k ring8 draw."""
        samples = SyntheticDataset(SyntheticKind.RING8).sample(20000, np.random.default_rng(5))
        mu1, c1 = fit_gaussian(samples[:10000])
        mu2, c2 = fit_gaussian(samples[10000:])
        assert frechet_gaussian(mu1, c1, mu2, c2) <= 0.01

    def test_grad_norm_stats_constant_discriminator(self):
        """Test that a constant discriminator has zero input gradients."""
        d_spec = mlp_discriminator(hidden=(2,))
        params = affine_discriminator([0.0, 0.0])
        batch = np.random.default_rng(0).standard_normal((32, 2))
        for kind in (NormalizerKind.none(), NormalizerKind.pgn()):
            assert grad_norm_stats(d_spec, params, kind, batch) == (0.0, 0.0)

    def test_grad_norm_stats_linear_discriminator(self):
        """Test that <w, x> has gradient norm ||w|| everywhere."""
        d_spec = mlp_discriminator(hidden=(2,))
        params = affine_discriminator([3.0, 4.0])
        batch = np.random.default_rng(1).standard_normal((32, 2))
        mean, maximum = grad_norm_stats(d_spec, params, NormalizerKind.none(), batch)
        assert mean == pytest.approx(5.0)
        assert maximum == pytest.approx(5.0)

    def test_evaluate_generator_pgn_gradients_bounded(self):
        """Test that PGN gradient statistics stay within 1."""
        g_spec = mlp_generator(latent_dim=4, hidden=(8,))
        d_spec = mlp_discriminator(hidden=(8,))
        report = evaluate_generator(
            g_spec,
            kaiming_init(g_spec, 0),
            d_spec,
            kaiming_init(d_spec, 1),
            NormalizerKind.pgn(),
            SyntheticDataset(SyntheticKind.RING8),
            100,
            np.random.default_rng(0),
        )
        assert 0 <= report.mode_coverage <= 8
        assert 0.0 <= report.high_quality_ratio <= 1.0
        assert 0.0 < report.grad_norm_max <= 1.0 + 1e-6
        assert report.frechet >= 0.0

    def test_grad_norm_stats_empty_batch(self):
        """Test statistics of an empty batch."""
        d_spec = mlp_discriminator(hidden=(8,))
        stats = grad_norm_stats(d_spec, kaiming_init(d_spec, 0), NormalizerKind.pgn(), np.zeros((0, 2)))
        assert stats == (0.0, 0.0)

    def test_generate_zero_samples(self):
        """Test an empty draw keeps the sample shape."""
        g_spec = mlp_generator(latent_dim=4, hidden=(8,))
        samples = generate(g_spec, kaiming_init(g_spec, 0), 0, np.random.default_rng(0))
        assert samples.shape == (0, 2)

    def test_report_csv_fields(self):
        """Test CSV formatting of a report."""
        report = MetricsReport(0.25, 7, 8, 0.5, 0.125, 1.0)
        assert report.to_csv_fields() == ["0.25", "7", "8", "0.5", "0.125", "1.0"]
