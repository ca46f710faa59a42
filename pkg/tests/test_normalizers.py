"""
Tests for the normalizers module.
"""

import numpy as np
import pytest

from pgn_gan_lab import autodiff as ad
from pgn_gan_lab.autodiff import Tape, Tensor, backward
from pgn_gan_lab.nn import input_gradients, kaiming_init, mlp_discriminator, net_forward
from pgn_gan_lab.normalizers import (
    ConsistencyRegularizationError,
    LossKind,
    NormalizedOutput,
    NormalizerError,
    NormalizerKind,
    NormalizerName,
    UnknownNormalizerError,
    _shift,
    augment_images,
    consistency_regularization,
    d_loss,
    discriminate,
    g_loss,
    gn_normalize,
    gradient_penalty,
    interpolate,
    penalty_points,
    pgn_normalize,
)


@pytest.fixture
def small_discriminator():
    spec = mlp_discriminator(hidden=(16, 16))
    return spec, kaiming_init(spec, 0)


class TestNormalizerKind:
    """Tests for parsing normalizer and loss names."""

    def test_from_string(self):
        """Test every accepted normalizer name."""
        assert NormalizerKind.from_string("PGN").name is NormalizerName.PGN
        assert NormalizerKind.from_string("gn", zeta=0.5).zeta == 0.5
        assert NormalizerKind.from_string("sn").spectral
        assert NormalizerKind.from_string("gp1").target == 1
        assert NormalizerKind.from_string("gp0").target == 0
        assert NormalizerKind.from_string("none").name is NormalizerName.NONE

    def test_unknown_normalizer(self):
        """Test that unknown names raise."""
        with pytest.raises(UnknownNormalizerError):
            NormalizerKind.from_string("batchnorm")

    def test_labels(self):
        """Test display labels."""
        assert NormalizerKind.gp(0).label == "gp0"
        assert NormalizerKind.pgn().label == "pgn"

    def test_needs_grad_norm(self):
        """Test which schemes depend on the input gradient."""
        assert NormalizerKind.pgn().needs_grad_norm
        assert NormalizerKind.gn().needs_grad_norm
        assert not NormalizerKind.sn().needs_grad_norm
        assert not NormalizerKind.gp().needs_grad_norm

    def test_validate(self):
        """Test rejection of invalid penalty settings."""
        is_valid, errors = NormalizerKind.gp(target=2, lam=-1.0).validate()
        assert not is_valid
        assert len(errors) == 2

    def test_zero_penalty_weight_rejected(self):
        """Test that the gradient penalty weight must be strictly positive."""
        is_valid, errors = NormalizerKind.gp(1, 0.0).validate()
        assert not is_valid
        assert errors == ["Gradient penalty weight must be positive, got 0.0"]

    def test_zero_gn_constant_rejected(self):
        """Test that a constant GN denominator term must be strictly positive."""
        assert NormalizerKind.gn(0.0).validate() == (False, ["GN zeta must be positive, got 0.0"])
        assert NormalizerKind.gn(0.5).validate() == (True, [])
        assert NormalizerKind.gn().validate() == (True, [])

    def test_loss_from_string(self):
        """Test loss names and aliases."""
        assert LossKind.from_string("hinge") is LossKind.HINGE
        assert LossKind.from_string("nonsaturating") is LossKind.NONSATURATING
        assert LossKind.from_string("wgan") is LossKind.WASSERSTEIN
        with pytest.raises(UnknownNormalizerError):
            LossKind.from_string("lsgan")


class TestNormalize:
    """Tests for the PGN and GN formulas."""

    def test_pgn_values(self):
        """Test PGN at a few known points."""
        values = pgn_normalize(Tensor([0.0, 1.0, 3.0]), Tensor([1.0, 2.0, 0.0])).data
        np.testing.assert_allclose(values, [0.5, 0.0, -1.0], atol=1e-7)

    def test_pgn_is_bounded(self):
        """Test |PGN| <= 1 for arbitrary outputs and norms."""
        rng = np.random.default_rng(0)
        f = 100.0 * rng.standard_normal(1000)
        g = np.abs(10.0 * rng.standard_normal(1000))
        assert np.max(np.abs(pgn_normalize(f, g).data)) <= 1.0

    def test_gn_values(self):
        """Test GN with |f| and with a constant."""
        f, g = Tensor([2.0]), Tensor([2.0])
        assert gn_normalize(f, g).data[0] == pytest.approx(0.5)
        assert gn_normalize(f, g, zeta=1.0).data[0] == pytest.approx(2.0 / 3.0)

    def test_gn_is_bounded(self):
        """Test |GN| <= 1 when zeta is |f|."""
        rng = np.random.default_rng(1)
        f = 100.0 * rng.standard_normal(1000)
        g = np.abs(rng.standard_normal(1000))
        assert np.max(np.abs(gn_normalize(f, g).data)) <= 1.0


class TestDiscriminate:
    """Tests for the normalized discriminator forward pass."""

    def test_pgn_matches_formula(self, small_discriminator):
        """Test discriminate() against explicitly computed gradient norms."""
        spec, params = small_discriminator
        x = np.random.default_rng(0).standard_normal((8, 2))
        out = discriminate(spec, params, x, NormalizerKind.pgn())

        raw = net_forward(spec, params, x).data[:, 0]
        norms = np.linalg.norm(input_gradients(spec, params, x), axis=1)
        np.testing.assert_allclose(out.raw.data, raw)
        np.testing.assert_allclose(out.grad_norm.data, norms)
        np.testing.assert_allclose(out.value.data, (1 - raw) / (norms + np.abs(1 - raw) + 1e-8))
        assert len(out) == 8

    def test_unnormalized_returns_raw(self, small_discriminator):
        """Test that 'none' passes the raw output through."""
        spec, params = small_discriminator
        x = np.random.default_rng(1).standard_normal((4, 2))
        out = discriminate(spec, params, x, NormalizerKind.none())
        assert out.grad_norm is None
        np.testing.assert_array_equal(out.value.data, net_forward(spec, params, x).data[:, 0])

    def test_spectral_discriminator(self):
        """Test that SN discriminators use their power-iteration vectors."""
        spec = mlp_discriminator(hidden=(8,))
        params = kaiming_init(spec, 0, spectral=True)
        out = discriminate(spec, params, np.zeros((3, 2)), NormalizerKind.sn())
        assert out.value.shape == (3,)

    def test_pgn_parameter_gradients_are_finite(self, small_discriminator):
        """Test differentiating a PGN loss with respect to weights."""
        spec, params = small_discriminator
        x = np.random.default_rng(2).standard_normal((16, 2))
        with Tape() as tape:
            watched = tape.watch_all(params.params)
            out = discriminate(spec, params.with_params(watched), x, NormalizerKind.pgn(), tape)
            loss = g_loss(LossKind.HINGE, out)
            grads = backward(tape, loss, watched)
        assert set(grads) == set(params.params)
        assert all(grad.is_finite() for grad in grads.values())
        assert any(np.any(grad.data) for grad in grads.values())

    @pytest.mark.parametrize("seed", range(5))
    def test_pgn_hinge_loss_is_bounded(self, seed):
        """Test that the PGN hinge discriminator loss stays in [0, 4]."""
        spec = mlp_discriminator(hidden=(32, 32))
        params = kaiming_init(spec, seed)
        rng = np.random.default_rng(seed)
        real = 10.0 * rng.standard_normal((64, 2))
        fake = 10.0 * rng.standard_normal((64, 2))
        kind = NormalizerKind.pgn()
        loss = d_loss(
            LossKind.HINGE,
            discriminate(spec, params, real, kind),
            discriminate(spec, params, fake, kind),
        ).item()
        assert 0.0 <= loss <= 4.0


class TestLosses:
    """Tests for adversarial losses and penalties."""

    def test_hinge(self):
        """Test the hinge discriminator loss."""
        loss = d_loss(LossKind.HINGE, Tensor([2.0, 0.0]), Tensor([-2.0, 0.0]))
        assert loss.item() == pytest.approx(1.0)

    def test_nonsaturating(self):
        """Test the logistic loss at zero logits."""
        loss = d_loss(LossKind.NONSATURATING, Tensor([0.0]), Tensor([0.0]))
        assert loss.item() == pytest.approx(2.0 * np.log(2.0))
        assert g_loss(LossKind.NONSATURATING, Tensor([0.0])).item() == pytest.approx(np.log(2.0))

    def test_nonsaturating_uses_raw_outputs(self):
        """Test that the logistic loss reads raw logits, not normalized values."""
        real = NormalizedOutput(Tensor([0.0]), Tensor([5.0]))
        fake = NormalizedOutput(Tensor([0.0]), Tensor([-5.0]))
        softplus_5 = np.log1p(np.exp(-5.0))
        assert d_loss(LossKind.NONSATURATING, real, fake).item() == pytest.approx(2.0 * softplus_5)
        assert g_loss(LossKind.NONSATURATING, fake).item() == pytest.approx(5.0 + softplus_5)

    def test_hinge_uses_normalized_values(self):
        """Test that the hinge loss reads normalized values."""
        real = NormalizedOutput(Tensor([0.0]), Tensor([5.0]))
        fake = NormalizedOutput(Tensor([0.0]), Tensor([-5.0]))
        assert d_loss(LossKind.HINGE, real, fake).item() == pytest.approx(2.0)

    def test_wasserstein(self):
        """Test the Wasserstein critic loss."""
        loss = d_loss(LossKind.WASSERSTEIN, Tensor([1.0, 3.0]), Tensor([0.5, 0.5]))
        assert loss.item() == pytest.approx(-1.5)

    def test_generator_hinge(self):
        """Test the hinge generator loss."""
        assert g_loss(LossKind.HINGE, Tensor([0.25, 0.75])).item() == pytest.approx(-0.5)

    def test_losses_accept_normalized_output(self):
        """Test passing NormalizedOutput directly."""
        out = NormalizedOutput(Tensor([0.5]), Tensor([3.0]))
        assert g_loss(LossKind.HINGE, out).item() == pytest.approx(-0.5)

    def test_empty_batch(self):
        """Test that empty batches raise."""
        with pytest.raises(NormalizerError):
            d_loss(LossKind.HINGE, Tensor(np.zeros(0)), Tensor([1.0]))

    def test_gradient_penalty(self):
        """Test lam * mean((norm - target)^2)."""
        assert gradient_penalty(Tensor([1.0, 3.0]), 1, 10.0).item() == pytest.approx(20.0)
        assert gradient_penalty(Tensor([1.0, 3.0]), 0, 1.0).item() == pytest.approx(5.0)


class TestPenaltyPoints:
    """Tests for where gradient penalties are evaluated."""

    def test_zero_centered_uses_real(self):
        """Test that 0-GP evaluates at real samples."""
        real = np.ones((4, 2))
        fake = np.zeros((4, 2))
        points = penalty_points(NormalizerKind.gp(0), real, fake, np.random.default_rng(0))
        assert points is real

    def test_interpolates_lie_on_segments(self):
        """Test that interpolates lie between their real and fake endpoints."""
        rng = np.random.default_rng(1)
        real = rng.standard_normal((50, 2))
        fake = rng.standard_normal((50, 2))
        points = interpolate(real, fake, np.random.default_rng(2))
        along = points - fake
        span = real - fake
        cross = along[:, 0] * span[:, 1] - along[:, 1] * span[:, 0]
        np.testing.assert_allclose(cross, 0.0, atol=1e-12)
        weights = np.sum(along * span, axis=1) / np.sum(span * span, axis=1)
        assert np.all((weights >= 0.0) & (weights <= 1.0))


class TestAugmentation:
    """Tests for image augmentation and consistency regularization."""

    def test_shift_fills_with_zeros(self):
        """Test a one-pixel downward shift."""
        image = np.arange(9, dtype=np.float64).reshape(1, 3, 3) + 1.0
        shifted = _shift(image, 1, 0)
        np.testing.assert_array_equal(shifted[0, 0], [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(shifted[0, 1:], image[0, :2])

    def test_flip_without_shift(self):
        """Test certain flips with no translation."""
        images = np.random.default_rng(0).standard_normal((3, 1, 5, 5))
        out = augment_images(images, np.random.default_rng(1), flip_probability=1.0, shift_fraction=0.0)
        np.testing.assert_array_equal(out, images[:, :, :, ::-1])

    def test_augment_preserves_shape(self):
        """Test random augmentation output shape."""
        images = np.ones((4, 2, 8, 8))
        assert augment_images(images, np.random.default_rng(0)).shape == images.shape

    def test_augment_rejects_points(self):
        """Test that 2-D points cannot be augmented."""
        with pytest.raises(ConsistencyRegularizationError):
            augment_images(np.zeros((4, 2)), np.random.default_rng(0))

    def test_consistency_identity_augment_is_zero(self):
        """Test that an identity augmentation costs nothing."""
        images = np.random.default_rng(0).standard_normal((4, 1, 4, 4))
        penalty = consistency_regularization(
            lambda batch: ad.sum(ad.reshape(Tensor(batch), (4, -1)), axis=1),
            images,
            lambda batch: batch,
            5.0,
        )
        assert penalty.item() == 0.0

    def test_consistency_rejects_points(self):
        """Test that consistency regularization is image-only."""
        with pytest.raises(ConsistencyRegularizationError):
            consistency_regularization(lambda b: Tensor(b[:, 0]), np.zeros((4, 2)), lambda b: b, 1.0)
