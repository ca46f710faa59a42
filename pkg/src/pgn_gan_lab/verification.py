"""
Executable checks of the gradient-normalization guarantees.

Every check draws its own random instances from the run seed and reports the
worst deviation it found against a fixed tolerance. The suite covers the
autodiff engine (finite differences, linearity, second order, replay),
spectral estimates, Lipschitz bounds and the PGN guarantees.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, TensorLike, backward, finite_difference_gradient
from .nn import (
    VERIFY_POWER_ITERATIONS,
    VERIFY_POWER_TOLERANCE,
    Activation,
    NetworkSpec,
    ParameterStore,
    apply_spectral_normalization,
    empirical_lipschitz,
    exact_spectral_norm,
    input_gradients,
    kaiming_init,
    lipschitz_upper_bound,
    mlp_discriminator,
    net_forward,
    network_function,
    preactivation_margin,
    spectral_norm,
)
from .normalizers import PGN_EPS, input_grad_norm, pgn_normalize

logger = logging.getLogger(__name__)

PgnFunction = Callable[[TensorLike, TensorLike], Tensor]

FD_STEP = 1e-5
FD_TOLERANCE = 1e-5
KINK_MARGIN = 1e-3
BOUND_TOLERANCE = 1e-6
IDENTITY_TOLERANCE = 1e-6
WEIGHT_GRADIENT_TOLERANCE = 1e-8
SPECTRAL_TOLERANCE = 1e-6
LINEARITY_TOLERANCE = 1e-12
TANGENT_STEP = 1e-6
LIPSCHITZ_SLACK = 1.05


@dataclass
class CheckResult:
    """Outcome of one check."""

    name: str
    samples: int
    worst: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class VerifyReport:
    """All check results; passes iff every check passes."""

    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def vacuous(self) -> bool:
        return all(check.samples == 0 for check in self.checks)

    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]

    def get(self, name: str) -> CheckResult:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)


@dataclass
class VerifySettings:
    """
    Sizes of the random instance sets.

    ``samples`` is the number of inputs per network and also caps every
    other instance count, so ``samples=0`` runs nothing.
    """

    seed: int = 0
    samples: int = 1000
    n_nets: int = 10
    depths: Tuple[int, ...] = (2, 3, 4)
    hidden: Optional[Tuple[int, ...]] = None
    width: int = 128
    activation: Activation = Activation.LEAKY_RELU
    slope: float = 0.1
    input_dim: int = 2
    input_scale: float = 2.0
    bias_scale: float = 0.1
    n_programs: int = 100
    n_matrices: int = 100
    n_weight_instances: int = 50
    n_identity_points: int = 500
    n_fd_points: int = 20
    n_lipschitz_pairs: int = 10000

    def count(self, n: int) -> int:
        return max(0, min(n, self.samples))

    def hidden_for(self, index: int) -> Tuple[int, ...]:
        if self.hidden:
            return self.hidden
        return (self.width,) * self.depths[index % len(self.depths)]


# Random test material


def relative_error(a: TensorLike, b: TensorLike, floor: float = 1e-3) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    a = ad.as_tensor(a).data
    b = ad.as_tensor(b).data
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / scale


_ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "identity": lambda h: h,
    "relu": ad.relu,
    "leaky_relu": lambda h: ad.leaky_relu(h, 0.2),
    "abs": ad.abs,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
}

_REDUCERS: Dict[str, Callable[[Tensor], Tensor]] = {
    "sum": ad.sum,
    "mean": ad.mean,
    "norm": ad.l2_norm,
    "log_energy": lambda h: ad.log(ad.add(ad.sum(ad.square(h)), 1.0)),
}


def random_scalar_program(
    rng: np.random.Generator, dim: Optional[int] = None
) -> Tuple[Callable[[Tensor], Tensor], int]:
    """
    A random composition of affine maps, activations and a reduction.

    Returns:
        (program, input_dim); the program maps a (dim,) tensor to a scalar.
    """
    dim = int(rng.integers(2, 6)) if dim is None else dim
    layers = []
    width_in = dim
    for _ in range(int(rng.integers(1, 4))):
        width_out = int(rng.integers(2, 6))
        weight = Tensor(rng.standard_normal((width_in, width_out)) / math.sqrt(width_in))
        bias = Tensor(0.5 * rng.standard_normal((1, width_out)))
        activation = _ACTIVATIONS[str(rng.choice(list(_ACTIVATIONS)))]
        layers.append((weight, bias, activation))
        width_in = width_out
    reducer = _REDUCERS[str(rng.choice(list(_REDUCERS)))]
    shift = Tensor(rng.standard_normal((1, width_in))) if rng.random() < 0.5 else None

    def program(x: Tensor) -> Tensor:
        hidden = ad.reshape(x, (1, dim))
        for weight, bias, activation in layers:
            hidden = activation(ad.add(ad.matmul(hidden, weight), bias))
        if shift is not None:
            hidden = ad.mul(hidden, ad.sub(hidden, shift))
        return ad.reshape(reducer(hidden), ())

    return program, dim


def autodiff_gradient(program: Callable[[Tensor], Tensor], x: np.ndarray) -> Tuple[Tensor, float]:
    """Gradient of a scalar program at ``x`` and the kink margin of the evaluation."""
    with Tape() as tape:
        point = tape.watch(Tensor(x))
        out = program(point)
        margin = tape.kink_margin()
        (grad,) = tape.gradient(out, [point])
    return grad, margin


def random_discriminator(
    rng: np.random.Generator, settings: VerifySettings, index: int
) -> Tuple[NetworkSpec, ParameterStore]:
    """Kaiming-initialized MLP discriminator with small random biases."""
    spec = mlp_discriminator(
        settings.input_dim, settings.hidden_for(index), settings.activation, settings.slope
    )
    store = kaiming_init(spec, int(rng.integers(0, 2**31 - 1)), spectral=True)
    params = {
        name: Tensor._wrap(settings.bias_scale * rng.standard_normal(t.shape))
        if name.endswith(".bias")
        else t
        for name, t in store.params.items()
    }
    return spec, store.with_params(params)


def spectrally_normalized(store: ParameterStore) -> ParameterStore:
    return apply_spectral_normalization(
        store, n_iters=VERIFY_POWER_ITERATIONS, tol=VERIFY_POWER_TOLERANCE
    )


def _inputs(rng: np.random.Generator, settings: VerifySettings, n: int) -> np.ndarray:
    return settings.input_scale * rng.standard_normal((n, settings.input_dim))


def pgn_forward(
    spec: NetworkSpec, params: ParameterStore, x: np.ndarray, pgn: PgnFunction
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    PGN values and input gradients over a batch.

    Returns:
        (values, input gradients, raw outputs, raw gradient norms)
    """
    with Tape() as tape:
        points = tape.watch(Tensor(x))
        raw = ad.reshape(net_forward(spec, params, points), (len(x),))
        grad_norm = input_grad_norm(tape, raw, points)
        value = pgn(raw, grad_norm)
        (grad,) = tape.gradient(ad.sum(value), [points])
    return value.numpy(), grad.numpy(), raw.numpy(), grad_norm.numpy()


def pgn_point(
    spec: NetworkSpec, params: ParameterStore, x: TensorLike, pgn: PgnFunction
) -> Tensor:
    """PGN value at a single input."""
    with Tape() as tape:
        point = tape.watch(Tensor(ad.as_tensor(x).data.reshape(1, -1)))
        raw = ad.reshape(net_forward(spec, params, point), (1,))
        grad_norm = input_grad_norm(tape, raw, point)
        return ad.reshape(pgn(raw, grad_norm), ())


def pgn_weight_gradient_closed_form(
    params: ParameterStore, x: np.ndarray, slope: float, eps: float = PGN_EPS
) -> Dict[str, np.ndarray]:
    """
    Weight gradients of the PGN output of a one-hidden-layer leaky network.

    With u = 1 - f, g = ||grad_x f|| and D = g + |u| + eps, the chain rule
    gives d f_hat / d theta = -((g + eps) df/dtheta + u dg/dtheta) / D^2.
    """
    w1 = params.params["layer0.weight"].data
    b1 = params.params["layer0.bias"].data
    w2 = params.params["layer2.weight"].data
    b2 = params.params["layer2.bias"].data
    x = np.asarray(x, dtype=np.float64).reshape(-1)

    pre = w1 @ x + b1
    slopes = np.where(pre >= 0.0, 1.0, slope)
    hidden = slopes * pre
    f = float(w2[0] @ hidden + b2[0])
    s = w2[0] * slopes
    v = w1.T @ s
    g = float(np.linalg.norm(v))
    u = 1.0 - f
    denominator = g + abs(u) + eps

    df = {
        "layer0.weight": np.outer(s, x),
        "layer0.bias": s,
        "layer2.weight": hidden[None, :],
        "layer2.bias": np.ones(1),
    }
    dg = {
        "layer0.weight": np.outer(s, v) / g,
        "layer0.bias": np.zeros_like(b1),
        "layer2.weight": (slopes * (w1 @ v))[None, :] / g,
        "layer2.bias": np.zeros(1),
    }
    return {
        name: -((g + eps) * df[name] + u * dg[name]) / denominator**2 for name in df
    }


# Checks


def check_gradient_oracle(settings: VerifySettings, rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    tested = 0
    for _ in range(settings.count(settings.n_programs)):
        program, dim = random_scalar_program(rng)
        for _ in range(50):
            x = rng.standard_normal(dim)
            grad, margin = autodiff_gradient(program, x)
            if margin >= KINK_MARGIN:
                break
        else:
            continue
        numeric = finite_difference_gradient(program, x, FD_STEP)
        worst = max(worst, relative_error(grad, numeric))
        tested += 1
    return CheckResult(
        "autodiff vs finite differences", tested, worst, FD_TOLERANCE, worst <= FD_TOLERANCE
    )


def check_gradient_linearity(settings: VerifySettings, rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    count = settings.count(settings.n_programs)
    for _ in range(count):
        f, dim = random_scalar_program(rng)
        g, _ = random_scalar_program(rng, dim)
        a, b = rng.standard_normal(2)
        x = rng.standard_normal(dim)
        with Tape() as tape:
            point = tape.watch(Tensor(x))
            combined = ad.add(ad.mul(f(point), a), ad.mul(g(point), b))
            (grad,) = tape.gradient(combined, [point])
        grad_f, _ = autodiff_gradient(f, x)
        grad_g, _ = autodiff_gradient(g, x)
        expected = a * grad_f.data + b * grad_g.data
        scale = max(1.0, float(np.max(np.abs(expected))))
        worst = max(worst, float(np.max(np.abs(grad.data - expected))) / scale)
    return CheckResult(
        "gradient linearity", count, worst, LINEARITY_TOLERANCE, worst <= LINEARITY_TOLERANCE
    )


def check_second_order_piecewise_linear(
    settings: VerifySettings, rng: np.random.Generator
) -> CheckResult:
    """Input Hessians of piecewise-linear networks vanish away from kinks."""
    worst = 0.0
    nets = settings.count(settings.n_nets)
    for index in range(nets):
        spec, params = random_discriminator(rng, settings, index)
        x = _inputs(rng, settings, settings.count(200))
        weights = Tensor(rng.standard_normal(x.shape))
        with Tape() as tape:
            points = tape.watch(Tensor(x))
            out = net_forward(spec, params, points)
            (grad,) = tape.gradient(ad.sum(out), [points], create_graph=True)
            (second,) = tape.gradient(ad.sum(ad.mul(grad, weights)), [points])
        if second.size:
            worst = max(worst, float(np.max(np.abs(second.data))))
    return CheckResult(
        "second-order gradient of piecewise-linear net", nets, worst, 0.0, worst == 0.0
    )


def check_tape_replay(settings: VerifySettings, rng: np.random.Generator) -> CheckResult:
    failures = 0
    nets = settings.count(settings.n_nets)
    for index in range(nets):
        spec, params = random_discriminator(rng, settings, index)
        x = _inputs(rng, settings, settings.count(100))
        with Tape() as tape:
            points = tape.watch(Tensor(x))
            raw = ad.reshape(net_forward(spec, params, points), (len(x),))
            first = pgn_normalize(raw, input_grad_norm(tape, raw, points))
            if not tape.replay():
                failures += 1
        second, _, _, _ = pgn_forward(spec, params, x, pgn_normalize)
        if first.data.tobytes() != second.tobytes():
            failures += 1
    return CheckResult("tape replay is bit-exact", nets, float(failures), 0.0, failures == 0)


def check_spectral_norm_oracle(settings: VerifySettings, rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    count = settings.count(settings.n_matrices)
    for _ in range(count):
        rows, cols = (int(n) for n in rng.integers(2, 17, size=2))
        weight = rng.standard_normal((rows, cols))
        u = rng.standard_normal(rows)
        u /= np.linalg.norm(u)
        sigma, _ = spectral_norm(weight, u, VERIFY_POWER_ITERATIONS, tol=VERIFY_POWER_TOLERANCE)
        exact = exact_spectral_norm(weight)
        normalized = exact_spectral_norm(weight / sigma)
        worst = max(worst, abs(sigma - exact), abs(normalized - 1.0))
    return CheckResult(
        "power iteration vs SVD", count, worst, SPECTRAL_TOLERANCE, worst <= SPECTRAL_TOLERANCE
    )


def check_spectral_idempotent(settings: VerifySettings, rng: np.random.Generator) -> CheckResult:
    """Normalizing an already normalized network changes nothing."""
    worst = 0.0
    nets = settings.count(settings.n_nets)
    for index in range(nets):
        _, params = random_discriminator(rng, settings, index)
        once = spectrally_normalized(params)
        twice = spectrally_normalized(once)
        for name in once.vectors:
            a, b = once.params[name].data, twice.params[name].data
            worst = max(worst, float(np.linalg.norm(a - b) / np.linalg.norm(a)))
    return CheckResult(
        "spectral normalization fixed point",
        nets,
        worst,
        SPECTRAL_TOLERANCE,
        worst <= SPECTRAL_TOLERANCE,
    )


def _tangent_pairs(
    x: np.ndarray, grads: np.ndarray, rng: np.random.Generator, n_random: int
) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(grads, axis=1)
    keep = norms > 0.0
    directions = grads[keep] / norms[keep][:, None]
    first = [x[keep], x[rng.integers(0, len(x), size=n_random)]]
    second = [x[keep] + TANGENT_STEP * directions, x[rng.integers(0, len(x), size=n_random)]]
    return np.concatenate(first), np.concatenate(second)


def check_lipschitz_estimates(settings: VerifySettings, rng: np.random.Generator) -> CheckResult:
    """
    Largest sampled gradient norm, empirical Lipschitz ratio and the
    layer-wise upper bound are ordered as the theory says.
    """
    worst = 0.0
    nets = settings.count(settings.n_nets)
    details = []
    for index in range(nets):
        spec, params = random_discriminator(rng, settings, index)
        if index % 2 == 1:
            params = spectrally_normalized(params)
        x = _inputs(rng, settings, settings.count(settings.samples))
        if len(x) == 0:
            continue
        grads = input_gradients(spec, params, x)
        max_grad = float(np.max(np.linalg.norm(grads, axis=1)))
        n_random = max(0, settings.count(settings.n_lipschitz_pairs) - len(x))
        pairs = _tangent_pairs(x, grads, rng, n_random)
        estimate = empirical_lipschitz(network_function(spec, params), pairs)
        bound = lipschitz_upper_bound(spec, params)
        worst = max(
            worst,
            max_grad - LIPSCHITZ_SLACK * estimate,
            estimate - bound,
            max_grad - bound,
        )
        details.append(f"{max_grad:.4g}/{estimate:.4g}/{bound:.4g}")
    return CheckResult(
        "gradient <= empirical Lipschitz <= bound",
        nets,
        worst,
        BOUND_TOLERANCE,
        worst <= BOUND_TOLERANCE,
        detail="; ".join(details[:3]),
    )


def check_prefix_bounds(settings: VerifySettings, rng: np.random.Generator) -> CheckResult:
    """Layer-wise bounds of spectrally normalized prefixes never grow."""
    worst = 0.0
    nets = settings.count(settings.n_nets)
    for index in range(nets):
        spec, params = random_discriminator(rng, settings, index)
        params = spectrally_normalized(params)
        previous = 1.0
        for prefix in range(1, len(spec.layers) + 1):
            bound = lipschitz_upper_bound(spec, params, prefix)
            worst = max(worst, bound - previous)
            previous = bound
    return CheckResult(
        "spectrally normalized prefix bounds non-increasing",
        nets,
        worst,
        BOUND_TOLERANCE,
        worst <= BOUND_TOLERANCE,
    )


def check_pgn_bound(
    settings: VerifySettings, rng: np.random.Generator, pgn: PgnFunction
) -> CheckResult:
    """|D_hat| <= 1 and ||grad D_hat|| <= 1 on random inputs."""
    worst_value = 0.0
    worst_grad = 0.0
    nets = settings.count(settings.n_nets)
    points = 0
    for index in range(nets):
        spec, params = random_discriminator(rng, settings, index)
        x = _inputs(rng, settings, settings.count(settings.samples))
        if len(x) == 0:
            continue
        values, grads, _, _ = pgn_forward(spec, params, x, pgn)
        worst_value = max(worst_value, float(np.max(np.abs(values))))
        worst_grad = max(worst_grad, float(np.max(np.linalg.norm(grads, axis=1))))
        points += len(x)
    worst = max(worst_value, worst_grad) - 1.0 if points else 0.0
    return CheckResult(
        "PGN value and gradient bounded by 1",
        points,
        worst,
        BOUND_TOLERANCE,
        worst <= BOUND_TOLERANCE,
        detail=f"max |D| = {worst_value:.9f}, max grad = {worst_grad:.9f}",
    )


def check_pgn_finite_differences(
    settings: VerifySettings, rng: np.random.Generator, pgn: PgnFunction
) -> CheckResult:
    """Second-order autodiff through the PGN denominator agrees with finite differences."""
    worst = 0.0
    tested = 0
    nets = settings.count(settings.n_nets)
    per_net = settings.count(settings.n_fd_points)
    for index in range(nets):
        spec, params = random_discriminator(rng, settings, index)
        x = _inputs(rng, settings, 50 * per_net)
        if len(x) == 0:
            continue
        _, grads, raw, _ = pgn_forward(spec, params, x, pgn)
        # A step of FD_STEP moves any kinked quantity by at most FD_STEP * gain.
        gain = max(
            lipschitz_upper_bound(spec, params, prefix) for prefix in range(1, len(spec.layers) + 1)
        )
        required = max(KINK_MARGIN, 10.0 * FD_STEP * gain)
        margins = np.minimum(preactivation_margin(spec, params, x), np.abs(1.0 - raw))
        chosen = np.flatnonzero(margins >= required)[:per_net]
        for i in chosen:
            numeric = finite_difference_gradient(
                lambda t: pgn_point(spec, params, t, pgn), x[i], FD_STEP
            )
            worst = max(worst, relative_error(grads[i], numeric))
        tested += len(chosen)
    return CheckResult(
        "PGN gradient vs finite differences", tested, worst, FD_TOLERANCE, worst <= FD_TOLERANCE
    )


def check_gradient_norm_identity(
    settings: VerifySettings, rng: np.random.Generator, pgn: PgnFunction
) -> CheckResult:
    """||grad D_hat|| equals (g / (g + |1 - f|))^2 at generic points."""
    count = settings.count(settings.n_identity_points)
    worst = 0.0
    if count:
        spec, params = random_discriminator(rng, settings, 0)
        x = _inputs(rng, settings, count)
        _, grads, raw, grad_norm = pgn_forward(spec, params, x, pgn)
        measured = np.linalg.norm(grads, axis=1)
        predicted = (grad_norm / (grad_norm + np.abs(1.0 - raw))) ** 2
        worst = float(np.max(np.abs(measured - predicted)))
    return CheckResult(
        "PGN gradient-norm identity",
        count,
        worst,
        IDENTITY_TOLERANCE,
        worst <= IDENTITY_TOLERANCE,
    )


def check_weight_gradient_closed_form(
    settings: VerifySettings, rng: np.random.Generator, pgn: PgnFunction
) -> CheckResult:
    worst = 0.0
    count = settings.count(settings.n_weight_instances)
    for _ in range(count):
        dim = int(rng.integers(2, 5))
        width = int(rng.integers(3, 17))
        local = VerifySettings(
            input_dim=dim, hidden=(width,), slope=settings.slope, bias_scale=0.5
        )
        spec, params = random_discriminator(rng, local, 0)
        x = _inputs(rng, local, 1)
        with Tape() as tape:
            watched = tape.watch_all(params.params)
            point = tape.watch(Tensor(x))
            raw = ad.reshape(net_forward(spec, params.with_params(watched), point), (1,))
            value = pgn(raw, input_grad_norm(tape, raw, point))
            grads = backward(tape, ad.sum(value), watched)
        expected = pgn_weight_gradient_closed_form(params, x, settings.slope)
        for name, grad in grads.items():
            worst = max(worst, float(np.max(np.abs(grad.data - expected[name]))))
    return CheckResult(
        "PGN weight gradient closed form",
        count,
        worst,
        WEIGHT_GRADIENT_TOLERANCE,
        worst <= WEIGHT_GRADIENT_TOLERANCE,
    )


def check_reflection_invariance(settings: VerifySettings, rng: np.random.Generator) -> CheckResult:
    """||grad (1 - f)|| == ||grad f|| exactly."""
    worst = 0.0
    nets = settings.count(settings.n_nets)
    for index in range(nets):
        spec, params = random_discriminator(rng, settings, index)
        x = _inputs(rng, settings, settings.count(200))
        direct = input_gradients(spec, params, x)
        with Tape() as tape:
            points = tape.watch(Tensor(x))
            reflected = ad.sub(1.0, net_forward(spec, params, points))
            (grad,) = tape.gradient(ad.sum(reflected), [points])
        difference = np.abs(
            np.linalg.norm(direct, axis=1) - np.linalg.norm(grad.data, axis=1)
        )
        if difference.size:
            worst = max(worst, float(np.max(difference)))
    return CheckResult("reflection keeps gradient norm", nets, worst, 0.0, worst == 0.0)


def run_verify(settings: VerifySettings, pgn: PgnFunction = pgn_normalize) -> VerifyReport:
    """
    Run every check.

    Args:
        settings: Instance counts and network shape.
        pgn: The normalizer under test.

    Returns:
        VerifyReport with one result per check.
    """
    if settings.samples <= 0:
        logger.warning("Verification with 0 samples checks nothing; every check passes vacuously")

    checks: List[Callable[[VerifySettings, np.random.Generator], CheckResult]] = [
        check_gradient_oracle,
        check_gradient_linearity,
        check_second_order_piecewise_linear,
        check_tape_replay,
        check_spectral_norm_oracle,
        check_spectral_idempotent,
        check_lipschitz_estimates,
        check_prefix_bounds,
        check_reflection_invariance,
        lambda s, r: check_pgn_bound(s, r, pgn),
        lambda s, r: check_pgn_finite_differences(s, r, pgn),
        lambda s, r: check_gradient_norm_identity(s, r, pgn),
        lambda s, r: check_weight_gradient_closed_form(s, r, pgn),
    ]
    report = VerifyReport()
    for index, check in enumerate(checks):
        result = check(settings, np.random.default_rng([settings.seed, index]))
        report.checks.append(result)
        log = logger.info if result.passed else logger.error
        log(
            "%s: %s (samples=%d, worst=%.3g, tol=%.1g)",
            result.name,
            "pass" if result.passed else "FAIL",
            result.samples,
            result.worst,
            result.tolerance,
        )
    return report
