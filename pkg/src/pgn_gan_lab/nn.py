"""
Feed-forward generator and discriminator networks.

Networks are ordered lists of affine, conv2d, activation and reshape layers.
Weights use the (out, in) layout; conv weights are (out, in, k, k) and are
treated as the (out, in*k*k) matrix for spectral estimates.
"""

import math
from contextlib import nullcontext
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, TensorLike

# Power iteration defaults: one step per training update, 100 for estimates.
TRAIN_POWER_ITERATIONS = 1
VERIFY_POWER_ITERATIONS = 100
VERIFY_POWER_TOLERANCE = 1e-14
MAX_POWER_ITERATIONS = 20000


class NetworkError(Exception):
    """Base exception for network errors."""

    pass


class NetworkSpecError(NetworkError):
    """The network description is inconsistent."""

    pass


class LayerDimensionError(NetworkError):
    """An input does not match the dimensions a layer expects."""

    def __init__(self, layer_index: int, expected: Sequence[int], actual: Sequence[int]):
        self.layer_index = layer_index
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(
            f"Layer {layer_index} expects input dims {self.expected}, got {self.actual}"
        )


class LayerKind(Enum):
    """Kinds of layers a network can contain."""

    AFFINE = "affine"
    CONV2D = "conv2d"
    ACTIVATION = "activation"
    RESHAPE = "reshape"


class Activation(Enum):
    """Supported activation functions."""

    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    TANH = "tanh"

    @property
    def piecewise_linear(self) -> bool:
        return self in (Activation.RELU, Activation.LEAKY_RELU)

    @classmethod
    def from_string(cls, name: str) -> Optional["Activation"]:
        """Get Activation from its config name."""
        name = name.strip().lower()
        for activation in cls:
            if activation.value == name:
                return activation
        return None


class NetworkRole(Enum):
    """Which side of the adversarial game a network plays."""

    GENERATOR = "generator"
    DISCRIMINATOR = "discriminator"


@dataclass(frozen=True)
class LayerSpec:
    """Description of one layer; dims exclude the batch axis."""

    kind: LayerKind
    in_dims: Tuple[int, ...]
    out_dims: Tuple[int, ...]
    activation: Optional[Activation] = None
    slope: float = 0.0
    kernel: int = 0
    stride: int = 1
    padding: int = 0

    @classmethod
    def affine(cls, n_in: int, n_out: int) -> "LayerSpec":
        return cls(LayerKind.AFFINE, (n_in,), (n_out,))

    @classmethod
    def conv2d(
        cls,
        in_dims: Sequence[int],
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
    ) -> "LayerSpec":
        channels, height, width = in_dims
        out_height = ad.conv_output_size(height, kernel, stride, padding)
        out_width = ad.conv_output_size(width, kernel, stride, padding)
        return cls(
            LayerKind.CONV2D,
            (channels, height, width),
            (out_channels, out_height, out_width),
            kernel=kernel,
            stride=stride,
            padding=padding,
        )

    @classmethod
    def act(cls, dims: Sequence[int], activation: Activation, slope: float = 0.0) -> "LayerSpec":
        dims = tuple(dims)
        return cls(LayerKind.ACTIVATION, dims, dims, activation=activation, slope=slope)

    @classmethod
    def reshape(cls, in_dims: Sequence[int], out_dims: Sequence[int]) -> "LayerSpec":
        return cls(LayerKind.RESHAPE, tuple(in_dims), tuple(out_dims))

    @property
    def has_weights(self) -> bool:
        return self.kind in (LayerKind.AFFINE, LayerKind.CONV2D)

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        if self.kind is LayerKind.AFFINE:
            return (self.out_dims[0], self.in_dims[0])
        if self.kind is LayerKind.CONV2D:
            return (self.out_dims[0], self.in_dims[0], self.kernel, self.kernel)
        return ()

    @property
    def bias_shape(self) -> Tuple[int, ...]:
        return (self.out_dims[0],) if self.has_weights else ()

    @property
    def fan_in(self) -> int:
        shape = self.weight_shape
        return int(np.prod(shape[1:])) if shape else 0

    @property
    def lipschitz_factor(self) -> float:
        """Lipschitz constant of an activation layer (1 for the others)."""
        if self.kind is LayerKind.ACTIVATION and self.activation is Activation.LEAKY_RELU:
            return max(1.0, abs(self.slope))
        return 1.0


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers plus the role of the network."""

    layers: Tuple[LayerSpec, ...]
    role: NetworkRole
    output_scale: float = 1.0

    @property
    def input_dims(self) -> Tuple[int, ...]:
        return self.layers[0].in_dims

    @property
    def output_dims(self) -> Tuple[int, ...]:
        return self.layers[-1].out_dims

    def weighted_layers(self) -> List[Tuple[int, LayerSpec]]:
        return [(index, layer) for index, layer in enumerate(self.layers) if layer.has_weights]

    def validate(self) -> Tuple[bool, List[str]]:
        """
        Validate layer compatibility and role constraints.

        Returns:
            Tuple of (is_valid, list of error messages).
        """
        errors = []
        if not self.layers:
            return False, ["Network has no layers."]

        for index, (previous, current) in enumerate(zip(self.layers, self.layers[1:]), 1):
            if previous.out_dims != current.in_dims:
                errors.append(
                    f"Layer {index} expects {current.in_dims} but layer {index - 1} "
                    f"produces {previous.out_dims}."
                )

        for index, layer in enumerate(self.layers):
            if any(extent <= 0 for extent in layer.in_dims + layer.out_dims):
                errors.append(f"Layer {index} has a non-positive dimension.")
            if layer.kind is LayerKind.RESHAPE and math.prod(layer.in_dims) != math.prod(
                layer.out_dims
            ):
                errors.append(f"Layer {index} reshapes {layer.in_dims} into {layer.out_dims}.")
            if layer.kind is LayerKind.ACTIVATION and layer.activation is None:
                errors.append(f"Layer {index} is an activation without a function.")

        if self.role is NetworkRole.DISCRIMINATOR:
            if self.output_dims != (1,):
                errors.append(f"Discriminator output must be (1,), got {self.output_dims}.")
            for index, layer in enumerate(self.layers):
                if layer.kind is LayerKind.ACTIVATION and not layer.activation.piecewise_linear:
                    errors.append(
                        f"Discriminator layer {index} uses {layer.activation.value}; "
                        "only piecewise-linear activations are allowed."
                    )

        return len(errors) == 0, errors

    def check(self) -> "NetworkSpec":
        """Return self, raising NetworkSpecError if invalid."""
        is_valid, errors = self.validate()
        if not is_valid:
            raise NetworkSpecError(
                f"Invalid {self.role.value} spec:\n" + "\n".join(f"  - {e}" for e in errors)
            )
        return self


def weight_name(index: int) -> str:
    return f"layer{index}.weight"


def bias_name(index: int) -> str:
    return f"layer{index}.bias"


@dataclass
class ParameterStore:
    """Named parameter tensors plus per-layer power-iteration vectors."""

    params: Dict[str, Tensor]
    vectors: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def names(self) -> List[str]:
        return list(self.params)

    def weight(self, index: int) -> Tensor:
        return self.params[weight_name(index)]

    def bias(self, index: int) -> Tensor:
        return self.params[bias_name(index)]

    def with_params(self, params: Dict[str, Tensor]) -> "ParameterStore":
        return replace(self, params=dict(params))

    def with_vectors(self, vectors: Dict[str, np.ndarray]) -> "ParameterStore":
        return replace(self, vectors=dict(vectors))

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tensor.shape for name, tensor in self.params.items()}


def kaiming_init(spec: NetworkSpec, rng_seed: int, spectral: bool = False) -> ParameterStore:
    """
    Kaiming-normal weights, zero biases.

    Weights are drawn from Normal(0, 2 / fan_in). With ``spectral`` a random
    unit power-iteration vector is added for every weighted layer.
    """
    spec.check()
    rng = np.random.default_rng(rng_seed)
    params: Dict[str, Tensor] = {}
    for index, layer in spec.weighted_layers():
        std = math.sqrt(2.0 / layer.fan_in)
        params[weight_name(index)] = Tensor._wrap(rng.normal(0.0, std, size=layer.weight_shape))
        params[bias_name(index)] = Tensor.zeros(layer.bias_shape)

    vectors: Dict[str, np.ndarray] = {}
    if spectral:
        for index, layer in spec.weighted_layers():
            vectors[weight_name(index)] = _unit(rng.standard_normal(layer.weight_shape[0]))
    return ParameterStore(params, vectors)


def net_forward(
    spec: NetworkSpec,
    params: ParameterStore,
    x: TensorLike,
    tape: Optional[Tape] = None,
    spectral: bool = False,
    trace: Optional[List[Tensor]] = None,
) -> Tensor:
    """
    Run the network on a batch shaped (M, *input_dims).

    Args:
        spec: Network description.
        params: Parameters (optionally watched tensors on the tape).
        x: Input batch.
        tape: Tape to record on; defaults to the active one.
        spectral: Divide every weight by its spectral-norm estimate, using the
            stored power-iteration vectors; the division is differentiable.
        trace: If given, receives every activation input.

    Raises:
        LayerDimensionError: If the input does not match a layer.
    """
    context = tape if tape is not None and ad.active_tape() is not tape else nullcontext()
    with context:
        hidden = ad.as_tensor(x)
        for index, layer in enumerate(spec.layers):
            if hidden.shape[1:] != layer.in_dims:
                raise LayerDimensionError(index, layer.in_dims, hidden.shape[1:])
            hidden = _layer_forward(index, layer, params, hidden, spectral, trace)
        if spec.output_scale != 1.0:
            hidden = ad.mul(hidden, spec.output_scale)
        return hidden


def _layer_forward(
    index: int,
    layer: LayerSpec,
    params: ParameterStore,
    hidden: Tensor,
    spectral: bool,
    trace: Optional[List[Tensor]],
) -> Tensor:
    batch = hidden.shape[0]
    if layer.kind is LayerKind.AFFINE:
        weight = _effective_weight(index, params, spectral)
        out = ad.matmul(hidden, ad.transpose(weight))
        return ad.add(out, ad.expand(params.bias(index), 0, batch))

    if layer.kind is LayerKind.CONV2D:
        weight = _effective_weight(index, params, spectral)
        out_channels, out_height, out_width = layer.out_dims
        columns = ad.im2col(hidden, layer.kernel, layer.stride, layer.padding)
        matrix = ad.reshape(weight, (out_channels, -1))
        out = ad.matmul(columns, ad.transpose(matrix))
        out = ad.add(out, ad.expand(params.bias(index), 0, columns.shape[0]))
        out = ad.reshape(out, (batch, out_height, out_width, out_channels))
        return ad.transpose(out, (0, 3, 1, 2))

    if layer.kind is LayerKind.ACTIVATION:
        if trace is not None:
            trace.append(hidden)
        if layer.activation is Activation.RELU:
            return ad.relu(hidden)
        if layer.activation is Activation.LEAKY_RELU:
            return ad.leaky_relu(hidden, layer.slope)
        return ad.tanh(hidden)

    return ad.reshape(hidden, (batch,) + layer.out_dims)


def _effective_weight(index: int, params: ParameterStore, spectral: bool) -> Tensor:
    weight = params.weight(index)
    if not spectral:
        return weight
    u = params.vectors.get(weight_name(index))
    if u is None:
        raise NetworkError(f"Layer {index} has no power-iteration vector for spectral normalization")
    matrix = weight.data.reshape(weight.shape[0], -1)
    v = _unit(matrix.T @ u)
    # sigma = u^T W v with u, v held constant, differentiable in W.
    outer = Tensor._wrap(np.outer(u, v).reshape(weight.shape))
    sigma = ad.sum(ad.mul(weight, outer))
    if sigma.item() == 0.0:
        return weight
    return ad.div(weight, sigma)


def _unit(vector: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    return vector / (np.linalg.norm(vector) + eps)


def spectral_norm(
    W: TensorLike,
    u: np.ndarray,
    n_iters: int = TRAIN_POWER_ITERATIONS,
    tol: Optional[float] = None,
    max_iters: int = MAX_POWER_ITERATIONS,
) -> Tuple[float, np.ndarray]:
    """
    Power-iteration estimate of the largest singular value.

    Args:
        W: Weight; anything beyond 2-D is flattened to (out, rest).
        u: Unit left vector of length ``out``.
        n_iters: Number of iterations (minimum number when ``tol`` is set).
        tol: Keep iterating past ``n_iters`` until successive estimates
            differ by at most ``tol`` relative, or ``max_iters`` is hit.

    Returns:
        (sigma, u_next); a zero matrix yields (0.0, u).
    """
    array = ad.as_tensor(W).data
    matrix = array.reshape(array.shape[0], -1)
    u = np.asarray(u, dtype=np.float64)
    if not np.any(matrix):
        return 0.0, u

    limit = n_iters if tol is None else max(n_iters, max_iters)
    sigma = 0.0
    previous = None
    for iteration in range(1, limit + 1):
        v = _unit(matrix.T @ u)
        u = _unit(matrix @ v)
        sigma = float(u @ (matrix @ v))
        if (
            tol is not None
            and iteration >= n_iters
            and previous is not None
            and abs(sigma - previous) <= tol * abs(sigma)
        ):
            break
        previous = sigma
    return sigma, u


def power_iteration_step(
    params: ParameterStore, n_iters: int = TRAIN_POWER_ITERATIONS
) -> ParameterStore:
    """Advance every stored power-iteration vector without touching weights."""
    vectors = {}
    for name, u in params.vectors.items():
        _, vectors[name] = spectral_norm(params.params[name], u, n_iters)
    return params.with_vectors(vectors)


def apply_spectral_normalization(
    params: ParameterStore,
    n_iters: int = TRAIN_POWER_ITERATIONS,
    tol: Optional[float] = None,
) -> ParameterStore:
    """
    Divide every weight with a power-iteration vector by its sigma estimate.

    Performs ``n_iters`` power-iteration steps per weight and stores the
    advanced vectors in the returned store.
    """
    new_params = dict(params.params)
    vectors = {}
    for name, u in params.vectors.items():
        weight = params.params[name]
        sigma, vectors[name] = spectral_norm(weight, u, n_iters, tol=tol)
        if sigma > 0.0:
            new_params[name] = Tensor._wrap(weight.data / sigma)
    return ParameterStore(new_params, vectors)


def exact_spectral_norm(W: TensorLike) -> float:
    """Largest singular value by SVD."""
    array = ad.as_tensor(W).data
    return float(np.linalg.norm(array.reshape(array.shape[0], -1), 2))


def lipschitz_upper_bound(
    spec: NetworkSpec, params: ParameterStore, prefix: Optional[int] = None
) -> float:
    """
    Product of layer Lipschitz constants over the first ``prefix`` layers.

    Weighted layers contribute their exact largest singular value, leaky
    activations max(1, slope), everything else 1. For conv layers the
    singular value of the flattened kernel is used.
    """
    layers = spec.layers if prefix is None else spec.layers[:prefix]
    bound = 1.0
    for index, layer in enumerate(layers):
        if layer.has_weights:
            bound *= exact_spectral_norm(params.weight(index))
        else:
            bound *= layer.lipschitz_factor
    if prefix is None or prefix >= len(spec.layers):
        bound *= abs(spec.output_scale)
    return bound


def network_function(spec: NetworkSpec, params: ParameterStore) -> Callable[[np.ndarray], np.ndarray]:
    """Numpy callable mapping a batch to per-sample scalar outputs."""

    def evaluate(batch: np.ndarray) -> np.ndarray:
        out = net_forward(spec, params, np.asarray(batch, dtype=np.float64))
        return out.data.reshape(out.shape[0], -1)[:, 0]

    return evaluate


def empirical_lipschitz(
    f: Callable[[np.ndarray], np.ndarray],
    sample_pairs: Tuple[np.ndarray, np.ndarray],
) -> float:
    """
    max |f(x) - f(y)| / ||x - y|| over the given pairs.

    Coincident pairs are skipped; with no usable pair the result is 0.
    """
    xs = np.asarray(sample_pairs[0], dtype=np.float64)
    ys = np.asarray(sample_pairs[1], dtype=np.float64)
    if xs.shape[0] == 0:
        return 0.0
    distances = np.linalg.norm((xs - ys).reshape(xs.shape[0], -1), axis=1)
    keep = distances > 0.0
    if not np.any(keep):
        return 0.0
    fx = np.asarray(f(xs[keep]), dtype=np.float64).reshape(-1)
    fy = np.asarray(f(ys[keep]), dtype=np.float64).reshape(-1)
    return float(np.max(np.abs(fx - fy) / distances[keep]))


def input_gradients(spec: NetworkSpec, params: ParameterStore, x: np.ndarray) -> np.ndarray:
    """Per-sample gradient of the scalar output with respect to the input."""
    with Tape() as tape:
        inputs = tape.watch(Tensor(x))
        out = net_forward(spec, params, inputs)
        (grad,) = tape.gradient(ad.sum(out), [inputs])
    return grad.numpy()


def preactivation_margin(spec: NetworkSpec, params: ParameterStore, x: np.ndarray) -> np.ndarray:
    """Per-sample smallest |pre-activation| over all activation layers."""
    trace: List[Tensor] = []
    net_forward(spec, params, Tensor(x), trace=trace)
    batch = np.asarray(x).shape[0]
    margin = np.full(batch, np.inf)
    for pre in trace:
        margin = np.minimum(margin, np.min(np.abs(pre.data.reshape(batch, -1)), axis=1))
    return margin


def mlp_discriminator(
    in_dim: int = 2,
    hidden: Sequence[int] = (128, 128, 128),
    activation: Activation = Activation.LEAKY_RELU,
    slope: float = 0.1,
) -> NetworkSpec:
    """MLP in_dim -> hidden... -> 1 with piecewise-linear activations."""
    layers: List[LayerSpec] = []
    width = in_dim
    for size in hidden:
        layers.append(LayerSpec.affine(width, size))
        layers.append(LayerSpec.act((size,), activation, slope))
        width = size
    layers.append(LayerSpec.affine(width, 1))
    return NetworkSpec(tuple(layers), NetworkRole.DISCRIMINATOR).check()


def mlp_generator(
    latent_dim: int = 16,
    hidden: Sequence[int] = (128, 128),
    out_dim: int = 2,
    activation: Activation = Activation.RELU,
    slope: float = 0.1,
    output_scale: float = 3.0,
) -> NetworkSpec:
    """MLP latent -> hidden... -> out_dim with a tanh output scaled by ``output_scale``."""
    layers: List[LayerSpec] = []
    width = latent_dim
    for size in hidden:
        layers.append(LayerSpec.affine(width, size))
        layers.append(LayerSpec.act((size,), activation, slope))
        width = size
    layers.append(LayerSpec.affine(width, out_dim))
    layers.append(LayerSpec.act((out_dim,), Activation.TANH))
    return NetworkSpec(tuple(layers), NetworkRole.GENERATOR, output_scale).check()


def conv_discriminator(
    image_shape: Sequence[int],
    channels: Sequence[int] = (16, 32),
    activation: Activation = Activation.LEAKY_RELU,
    slope: float = 0.1,
) -> NetworkSpec:
    """Stride-2 3x3 convolutions followed by one affine output unit."""
    layers: List[LayerSpec] = []
    dims = tuple(image_shape)
    for out_channels in channels:
        conv = LayerSpec.conv2d(dims, out_channels, kernel=3, stride=2, padding=1)
        layers.append(conv)
        layers.append(LayerSpec.act(conv.out_dims, activation, slope))
        dims = conv.out_dims
    flat = (math.prod(dims),)
    layers.append(LayerSpec.reshape(dims, flat))
    layers.append(LayerSpec.affine(flat[0], 1))
    return NetworkSpec(tuple(layers), NetworkRole.DISCRIMINATOR).check()


def conv_generator(
    latent_dim: int,
    image_shape: Sequence[int],
    channels: int = 16,
    activation: Activation = Activation.RELU,
    slope: float = 0.1,
) -> NetworkSpec:
    """Affine projection to a feature map, one 3x3 convolution, tanh output."""
    out_channels, height, width = image_shape
    feature_dims = (channels, height, width)
    flat = math.prod(feature_dims)
    conv = LayerSpec.conv2d(feature_dims, out_channels, kernel=3, stride=1, padding=1)
    layers = (
        LayerSpec.affine(latent_dim, flat),
        LayerSpec.act((flat,), activation, slope),
        LayerSpec.reshape((flat,), feature_dims),
        conv,
        LayerSpec.act(conv.out_dims, Activation.TANH),
    )
    return NetworkSpec(layers, NetworkRole.GENERATOR).check()
