"""
Tests for the nn module.
"""

import numpy as np
import pytest

from pgn_gan_lab import autodiff as ad
from pgn_gan_lab.autodiff import Tensor, finite_difference_gradient
from pgn_gan_lab.nn import (
    Activation,
    LayerDimensionError,
    LayerKind,
    LayerSpec,
    NetworkRole,
    NetworkSpec,
    NetworkSpecError,
    apply_spectral_normalization,
    conv_discriminator,
    conv_generator,
    empirical_lipschitz,
    exact_spectral_norm,
    input_gradients,
    kaiming_init,
    lipschitz_upper_bound,
    mlp_discriminator,
    mlp_generator,
    net_forward,
    network_function,
    power_iteration_step,
    preactivation_margin,
    spectral_norm,
)


class TestActivation:
    """Tests for the Activation enum."""

    def test_from_string(self):
        """Test lookup by config name."""
        assert Activation.from_string("leaky_relu") is Activation.LEAKY_RELU
        assert Activation.from_string(" ReLU ") is Activation.RELU
        assert Activation.from_string("gelu") is None

    def test_piecewise_linear(self):
        """Test which activations are piecewise linear."""
        assert Activation.RELU.piecewise_linear
        assert Activation.LEAKY_RELU.piecewise_linear
        assert not Activation.TANH.piecewise_linear


class TestNetworkSpec:
    """Tests for layer and network descriptions."""

    def test_conv_output_dims(self):
        """Test stride-2 padded convolution output dims."""
        layer = LayerSpec.conv2d((1, 8, 8), 16, kernel=3, stride=2, padding=1)
        assert layer.kind is LayerKind.CONV2D
        assert layer.out_dims == (16, 4, 4)
        assert layer.weight_shape == (16, 1, 3, 3)
        assert layer.fan_in == 9

    def test_default_discriminator_is_valid(self):
        """Test the default MLP discriminator."""
        spec = mlp_discriminator()
        assert spec.input_dims == (2,)
        assert spec.output_dims == (1,)
        assert len(spec.weighted_layers()) == 4

    def test_discriminator_rejects_tanh(self):
        """Test that discriminators must be piecewise linear."""
        layers = (
            LayerSpec.affine(2, 4),
            LayerSpec.act((4,), Activation.TANH),
            LayerSpec.affine(4, 1),
        )
        with pytest.raises(NetworkSpecError):
            NetworkSpec(layers, NetworkRole.DISCRIMINATOR).check()

    def test_discriminator_needs_scalar_output(self):
        """Test that a discriminator output must be (1,)."""
        spec = NetworkSpec((LayerSpec.affine(2, 2),), NetworkRole.DISCRIMINATOR)
        is_valid, errors = spec.validate()
        assert not is_valid
        assert any("output" in e for e in errors)

    def test_incompatible_layers(self):
        """Test detection of mismatched consecutive layers."""
        spec = NetworkSpec(
            (LayerSpec.affine(2, 4), LayerSpec.affine(5, 1)), NetworkRole.GENERATOR
        )
        is_valid, errors = spec.validate()
        assert not is_valid
        assert "Layer 1" in errors[0]

    def test_generator_may_use_tanh(self):
        """Test that generators accept a tanh output."""
        spec = mlp_generator(latent_dim=4, hidden=(8,))
        assert spec.layers[-1].activation is Activation.TANH
        assert spec.output_scale == 3.0


class TestInitAndForward:
    """Tests for initialization and the forward pass."""

    def test_kaiming_statistics(self):
        """Test weight std sqrt(2 / fan_in) and zero biases."""
        spec = mlp_discriminator(in_dim=500, hidden=(400,))
        params = kaiming_init(spec, 0)
        weight = params.weight(0).data
        assert weight.shape == (400, 500)
        assert weight.std() == pytest.approx(np.sqrt(2.0 / 500), rel=0.02)
        assert not np.any(params.bias(0).data)

    def test_kaiming_is_deterministic(self):
        """Test that the same seed gives the same weights."""
        spec = mlp_discriminator(hidden=(8, 8))
        a = kaiming_init(spec, 7)
        b = kaiming_init(spec, 7)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_spectral_init_adds_unit_vectors(self):
        """Test that spectral init stores one unit vector per weight."""
        spec = mlp_discriminator(hidden=(8, 8))
        params = kaiming_init(spec, 0, spectral=True)
        assert set(params.vectors) == {"layer0.weight", "layer2.weight", "layer4.weight"}
        for u in params.vectors.values():
            assert np.linalg.norm(u) == pytest.approx(1.0)

    def test_forward_shape(self):
        """Test output shapes of MLP and conv networks."""
        rng = np.random.default_rng(0)
        d = mlp_discriminator(hidden=(8,))
        out = net_forward(d, kaiming_init(d, 0), rng.standard_normal((5, 2)))
        assert out.shape == (5, 1)

        g = conv_generator(4, (1, 8, 8), channels=2)
        images = net_forward(g, kaiming_init(g, 0), rng.standard_normal((3, 4)))
        assert images.shape == (3, 1, 8, 8)
        assert np.all(np.abs(images.data) <= 1.0)

        cd = conv_discriminator((1, 8, 8), channels=(2, 4))
        assert net_forward(cd, kaiming_init(cd, 0), images).shape == (3, 1)

    def test_generator_output_scale(self):
        """Test that generator outputs lie within output_scale."""
        g = mlp_generator(latent_dim=4, hidden=(8,), output_scale=2.5)
        out = net_forward(g, kaiming_init(g, 1), 10.0 * np.random.default_rng(1).standard_normal((50, 4)))
        assert np.all(np.abs(out.data) <= 2.5)

    def test_layer_dimension_error(self):
        """Test that a wrong input width names the layer."""
        spec = mlp_discriminator(hidden=(8,))
        with pytest.raises(LayerDimensionError) as excinfo:
            net_forward(spec, kaiming_init(spec, 0), np.zeros((4, 3)))
        assert excinfo.value.layer_index == 0
        assert excinfo.value.actual == (3,)

    def test_conv_matches_direct_convolution(self):
        """Test the im2col convolution against explicit loops."""
        layer = LayerSpec.conv2d((2, 5, 5), 3, kernel=3, stride=2, padding=1)
        spec = NetworkSpec((layer,), NetworkRole.GENERATOR)
        params = kaiming_init(spec, 0)
        rng = np.random.default_rng(2)
        bias = rng.standard_normal(3)
        params = params.with_params({"layer0.weight": params.weight(0), "layer0.bias": Tensor(bias)})
        x = rng.standard_normal((2, 2, 5, 5))

        out = net_forward(spec, params, x).data

        weight = params.weight(0).data
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros((2, 3, 3, 3))
        for n in range(2):
            for o in range(3):
                for i in range(3):
                    for j in range(3):
                        patch = padded[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                        expected[n, o, i, j] = np.sum(weight[o] * patch) + bias[o]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_conv_gradient_matches_finite_differences(self):
        """Test conv backward against central differences."""
        layer = LayerSpec.conv2d((2, 5, 5), 2, kernel=3, stride=1, padding=1)
        spec = NetworkSpec(
            (layer, LayerSpec.act(layer.out_dims, Activation.TANH)), NetworkRole.GENERATOR
        )
        params = kaiming_init(spec, 3)
        x = np.random.default_rng(3).standard_normal(50)

        def f(t):
            return ad.sum(net_forward(spec, params, ad.reshape(t, (1, 2, 5, 5))))

        with ad.Tape() as tape:
            point = tape.watch(Tensor(x))
            (grad,) = tape.gradient(f(point), [point])
        numeric = finite_difference_gradient(f, x)
        error = np.linalg.norm(grad.data - numeric.data) / np.linalg.norm(numeric.data)
        assert error <= 1e-6


class TestSpectralNorm:
    """Tests for power iteration and spectral normalization."""

    def test_matches_svd(self):
        """Test the power-iteration estimate against SVD."""
        rng = np.random.default_rng(0)
        weight = rng.standard_normal((8, 8))
        u = rng.standard_normal(8)
        u /= np.linalg.norm(u)
        sigma, _ = spectral_norm(weight, u, n_iters=100, tol=1e-14)
        assert abs(sigma - np.linalg.svd(weight, compute_uv=False)[0]) <= 1e-6

    def test_zero_matrix(self):
        """Test that a zero weight has spectral norm 0."""
        u = np.array([1.0, 0.0])
        sigma, u_next = spectral_norm(np.zeros((2, 3)), u)
        assert sigma == 0.0
        np.testing.assert_array_equal(u_next, u)

    def test_normalized_weight_has_unit_norm(self):
        """Test sigma(W / sigma(W)) == 1."""
        spec = mlp_discriminator(hidden=(16, 16))
        params = apply_spectral_normalization(
            kaiming_init(spec, 0, spectral=True), n_iters=100, tol=1e-14
        )
        for index, _ in spec.weighted_layers():
            assert exact_spectral_norm(params.weight(index)) == pytest.approx(1.0, abs=1e-6)

    def test_power_iteration_step_keeps_weights(self):
        """Test that refreshing vectors leaves weights untouched."""
        spec = mlp_discriminator(hidden=(8,))
        params = kaiming_init(spec, 0, spectral=True)
        stepped = power_iteration_step(params)
        for name in params.params:
            assert stepped.params[name] is params.params[name]
        assert any(
            not np.array_equal(stepped.vectors[name], params.vectors[name])
            for name in params.vectors
        )

    def test_spectral_forward_divides_by_sigma(self):
        """Test net_forward(spectral=True) against explicitly normalized weights."""
        spec = mlp_discriminator(hidden=(8,))
        params = power_iteration_step(kaiming_init(spec, 4, spectral=True), n_iters=500)
        normalized = apply_spectral_normalization(params, n_iters=100, tol=1e-14)
        x = np.random.default_rng(4).standard_normal((6, 2))
        reparametrized = net_forward(spec, params, x, spectral=True).data
        explicit = net_forward(spec, normalized, x).data
        np.testing.assert_allclose(reparametrized, explicit, rtol=1e-6, atol=1e-9)


class TestLipschitz:
    """Tests for Lipschitz bounds and estimates."""

    def test_single_layer_bound_is_spectral_norm(self):
        """Test the bound of a purely affine network."""
        spec = mlp_discriminator(hidden=())
        params = kaiming_init(spec, 0)
        assert lipschitz_upper_bound(spec, params) == pytest.approx(
            np.linalg.norm(params.weight(0).data)
        )

    def test_normalized_network_bound_is_one(self):
        """Test that a spectrally normalized network has bound 1."""
        spec = mlp_discriminator(hidden=(16, 16))
        params = apply_spectral_normalization(
            kaiming_init(spec, 1, spectral=True), n_iters=100, tol=1e-14
        )
        assert lipschitz_upper_bound(spec, params) == pytest.approx(1.0, abs=1e-5)

    def test_empirical_lipschitz_of_linear_map(self):
        """Test the sampled ratio for a linear function."""
        a = np.array([3.0, 4.0])
        xs = np.array([[0.0, 0.0], [1.0, 1.0]])
        ys = np.array([[0.6, 0.8], [1.0, 2.0]])
        assert empirical_lipschitz(lambda b: b @ a, (xs, ys)) == pytest.approx(5.0)

    def test_empirical_lipschitz_skips_coincident_pairs(self):
        """Test that identical pairs contribute nothing."""
        xs = np.ones((3, 2))
        assert empirical_lipschitz(lambda b: b[:, 0], (xs, xs)) == 0.0

    def test_gradient_bounded_by_estimate_and_bound(self):
        """Test gradient norm <= Lipschitz upper bound."""
        spec = mlp_discriminator(hidden=(16, 16))
        params = kaiming_init(spec, 2)
        x = np.random.default_rng(2).standard_normal((200, 2))
        grads = input_gradients(spec, params, x)
        bound = lipschitz_upper_bound(spec, params)
        assert np.max(np.linalg.norm(grads, axis=1)) <= bound + 1e-9
        pairs = (x[:100], x[100:])
        assert empirical_lipschitz(network_function(spec, params), pairs) <= bound + 1e-9

    def test_input_gradients_of_affine_network(self):
        """Test that an affine network has its weight row as gradient."""
        spec = mlp_discriminator(hidden=())
        params = kaiming_init(spec, 5)
        grads = input_gradients(spec, params, np.ones((3, 2)))
        for row in grads:
            np.testing.assert_allclose(row, params.weight(0).data[0])

    def test_preactivation_margin(self):
        """Test the per-sample distance from the nearest kink."""
        spec = mlp_discriminator(hidden=(8, 8))
        x = np.random.default_rng(6).standard_normal((10, 2))
        margins = preactivation_margin(spec, kaiming_init(spec, 6), x)
        assert margins.shape == (10,)
        assert np.all(margins >= 0.0)
