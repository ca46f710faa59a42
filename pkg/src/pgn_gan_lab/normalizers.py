"""
Discriminator normalizers and adversarial losses.

Gradient normalization rescales a raw discriminator output by its own input
gradient norm. The PGN form (1 - f) / (||grad f|| + |1 - f|) bounds both the
value and the gradient norm by 1 for piecewise-linear networks.
"""

from contextlib import nullcontext
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, TensorLike
from .nn import NetworkSpec, ParameterStore, net_forward


PGN_EPS = 1e-8
DEFAULT_GP_LAMBDA = 10.0


class NormalizerError(Exception):
    """Base exception for normalizer and loss errors."""

    pass


class UnknownNormalizerError(NormalizerError):
    """A normalizer or loss name is not recognised."""

    pass


class ConsistencyRegularizationError(NormalizerError):
    """Consistency regularization was requested for non-image data."""

    pass


class NormalizerName(Enum):
    PGN = "pgn"
    GN = "gn"
    SN = "sn"
    GP = "gp"
    NONE = "none"


@dataclass(frozen=True)
class NormalizerKind:
    """
    A discriminator normalization scheme.

    Attributes:
        name: Scheme.
        zeta: GN denominator constant; None means |f| is used.
        target: GP target gradient norm (0 or 1).
        lam: GP penalty weight.
    """

    name: NormalizerName
    zeta: Optional[float] = None
    target: int = 1
    lam: float = DEFAULT_GP_LAMBDA

    @classmethod
    def pgn(cls) -> "NormalizerKind":
        return cls(NormalizerName.PGN)

    @classmethod
    def gn(cls, zeta: Optional[float] = None) -> "NormalizerKind":
        return cls(NormalizerName.GN, zeta=zeta)

    @classmethod
    def sn(cls) -> "NormalizerKind":
        return cls(NormalizerName.SN)

    @classmethod
    def gp(cls, target: int = 1, lam: float = DEFAULT_GP_LAMBDA) -> "NormalizerKind":
        return cls(NormalizerName.GP, target=target, lam=lam)

    @classmethod
    def none(cls) -> "NormalizerKind":
        return cls(NormalizerName.NONE)

    @classmethod
    def from_string(
        cls, text: str, zeta: Optional[float] = None, lam: float = DEFAULT_GP_LAMBDA
    ) -> "NormalizerKind":
        """
        Parse "pgn", "gn", "sn", "gp1", "gp0" or "none".

        Raises:
            UnknownNormalizerError: For any other name.
        """
        key = text.strip().lower()
        if key == "pgn":
            return cls.pgn()
        if key == "gn":
            return cls.gn(zeta)
        if key == "sn":
            return cls.sn()
        if key in ("gp", "gp1"):
            return cls.gp(1, lam)
        if key == "gp0":
            return cls.gp(0, lam)
        if key == "none":
            return cls.none()
        raise UnknownNormalizerError(
            f"Unknown normalizer '{text}'. Expected one of: pgn, gn, sn, gp1, gp0, none"
        )

    @property
    def label(self) -> str:
        if self.name is NormalizerName.GP:
            return f"gp{self.target}"
        return self.name.value

    @property
    def needs_grad_norm(self) -> bool:
        """Whether the forward value depends on the input gradient."""
        return self.name in (NormalizerName.PGN, NormalizerName.GN)

    @property
    def spectral(self) -> bool:
        return self.name is NormalizerName.SN

    def validate(self) -> Tuple[bool, List[str]]:
        errors = []
        if self.name is NormalizerName.GP:
            if self.target not in (0, 1):
                errors.append(f"Gradient penalty target must be 0 or 1, got {self.target}")
            if not self.lam > 0:
                errors.append(f"Gradient penalty weight must be positive, got {self.lam}")
        if self.zeta is not None and not self.zeta > 0:
            errors.append(f"GN zeta must be positive, got {self.zeta}")
        return len(errors) == 0, errors


class LossKind(Enum):
    HINGE = "hinge"
    NONSATURATING = "ns"
    WASSERSTEIN = "wasserstein"

    @classmethod
    def from_string(cls, text: str) -> "LossKind":
        key = text.strip().lower()
        aliases = {"nonsaturating": "ns", "wgan": "wasserstein", "w": "wasserstein"}
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key:
                return kind
        raise UnknownNormalizerError(
            f"Unknown loss '{text}'. Expected one of: hinge, ns, wasserstein"
        )


@dataclass
class NormalizedOutput:
    """Per-sample discriminator output."""

    value: Tensor
    raw: Tensor
    grad_norm: Optional[Tensor] = None

    def __len__(self) -> int:
        return self.value.shape[0]


Scores = Union[NormalizedOutput, TensorLike]


def pgn_normalize(f: TensorLike, grad_norm: TensorLike, eps: float = PGN_EPS) -> Tensor:
    """(1 - f) / (grad_norm + |1 - f| + eps), elementwise."""
    reflected = ad.sub(1.0, ad.as_tensor(f))
    denominator = ad.add(ad.add(grad_norm, ad.abs(reflected)), eps)
    return ad.div(reflected, denominator)


def gn_normalize(
    f: TensorLike, grad_norm: TensorLike, zeta: Optional[float] = None, eps: float = PGN_EPS
) -> Tensor:
    """f / (grad_norm + zeta + eps); ``zeta=None`` uses |f|."""
    f = ad.as_tensor(f)
    offset = ad.abs(f) if zeta is None else ad.mul(Tensor.ones(f.shape), zeta)
    denominator = ad.add(ad.add(grad_norm, offset), eps)
    return ad.div(f, denominator)


def input_grad_norm(tape: Tape, raw: Tensor, x: Tensor) -> Tensor:
    """
    Per-sample ||d raw_i / d x_i||, recorded so it can be differentiated.

    Rows of a batch do not interact, so the gradient of sum(raw) gives every
    per-sample input gradient at once.
    """
    (grad,) = tape.gradient(ad.sum(raw), [x], create_graph=True)
    return ad.l2_norm(ad.reshape(grad, (grad.shape[0], -1)), axis=1)


def discriminate(
    d_spec: NetworkSpec,
    d_params: ParameterStore,
    x: TensorLike,
    kind: NormalizerKind,
    tape: Optional[Tape] = None,
    eps: float = PGN_EPS,
) -> NormalizedOutput:
    """
    Evaluate the normalized discriminator on a batch.

    Args:
        d_spec: Discriminator description.
        d_params: Its parameters (watched tensors when training).
        x: Batch shaped (M, *input_dims); recorded on the tape if it is not yet.
        kind: Normalization scheme.
        tape: Tape to record on; a private one is used when omitted.
        eps: Denominator guard for PGN/GN.

    Returns:
        NormalizedOutput with per-sample values of shape (M,).
    """
    if tape is None:
        with Tape() as private:
            return discriminate(d_spec, d_params, x, kind, private, eps)

    with tape if ad.active_tape() is not tape else nullcontext():
        x = ad.as_tensor(x)
        if kind.needs_grad_norm and x not in tape:
            x = tape.watch(x)
        out = net_forward(d_spec, d_params, x, spectral=kind.spectral)
        raw = ad.reshape(out, (out.shape[0],))
        if not kind.needs_grad_norm:
            return NormalizedOutput(raw, raw)

        grad_norm = input_grad_norm(tape, raw, x)
        if kind.name is NormalizerName.PGN:
            value = pgn_normalize(raw, grad_norm, eps)
        else:
            value = gn_normalize(raw, grad_norm, kind.zeta, eps)
        return NormalizedOutput(value, raw, grad_norm)


def _values(scores: Scores) -> Tensor:
    if isinstance(scores, NormalizedOutput):
        return scores.value
    return ad.as_tensor(scores)


def _logits(scores: Scores) -> Tensor:
    if isinstance(scores, NormalizedOutput):
        return scores.raw
    return ad.as_tensor(scores)


def _require_batch(name: str, values: Tensor) -> None:
    if values.size == 0:
        raise NormalizerError(f"{name} batch is empty")


def d_loss(loss: LossKind, d_real: Scores, d_fake: Scores) -> Tensor:
    """
    Discriminator loss over a real and a fake batch.

    Hinge: mean relu(1 - real) + mean relu(1 + fake).
    Nonsaturating: mean softplus(-real) + mean softplus(fake) over the raw
    outputs, i.e. the logistic loss with sigmoid applied to the raw logits.
    Wasserstein: mean fake - mean real.
    """
    if loss is LossKind.NONSATURATING:
        real, fake = _logits(d_real), _logits(d_fake)
    else:
        real, fake = _values(d_real), _values(d_fake)
    _require_batch("real", real)
    _require_batch("fake", fake)
    if loss is LossKind.HINGE:
        return ad.add(ad.mean(ad.relu(ad.sub(1.0, real))), ad.mean(ad.relu(ad.add(1.0, fake))))
    if loss is LossKind.NONSATURATING:
        return ad.add(ad.mean(ad.softplus(ad.neg(real))), ad.mean(ad.softplus(fake)))
    return ad.sub(ad.mean(fake), ad.mean(real))


def g_loss(loss: LossKind, d_fake: Scores) -> Tensor:
    """Generator loss: -mean fake (hinge, Wasserstein) or mean softplus(-raw fake)."""
    if loss is LossKind.NONSATURATING:
        logits = _logits(d_fake)
        _require_batch("fake", logits)
        return ad.mean(ad.softplus(ad.neg(logits)))
    fake = _values(d_fake)
    _require_batch("fake", fake)
    return ad.neg(ad.mean(fake))


def gradient_penalty(grad_norms: TensorLike, target: int, lam: float) -> Tensor:
    """lam * mean((grad_norm - target)^2)."""
    norms = ad.as_tensor(grad_norms)
    _require_batch("gradient norm", norms)
    return ad.mul(ad.mean(ad.square(ad.sub(norms, float(target)))), lam)


def interpolate(real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random per-sample convex combinations of real and fake points."""
    weights = rng.uniform(size=(real.shape[0],) + (1,) * (real.ndim - 1))
    return weights * real + (1.0 - weights) * fake


def penalty_points(
    kind: NormalizerKind, real: np.ndarray, fake: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Where the gradient penalty is evaluated: real samples for 0-GP, interpolates for 1-GP."""
    if kind.target == 0:
        return real
    return interpolate(real, fake, rng)


def augment_images(
    images: np.ndarray,
    rng: np.random.Generator,
    flip_probability: float = 0.5,
    shift_fraction: float = 0.2,
) -> np.ndarray:
    """
    Random horizontal flips and integer translations with zero fill.

    Each image is flipped with ``flip_probability`` and shifted by up to
    ``shift_fraction`` of its size along each spatial axis.
    """
    if images.ndim != 4:
        raise ConsistencyRegularizationError(
            f"Augmentation needs image batches (N, C, H, W), got shape {images.shape}"
        )
    batch, _, height, width = images.shape
    flips = rng.random(batch) < flip_probability
    max_dy = int(round(shift_fraction * height))
    max_dx = int(round(shift_fraction * width))
    dys = rng.integers(-max_dy, max_dy + 1, size=batch)
    dxs = rng.integers(-max_dx, max_dx + 1, size=batch)

    out = np.zeros_like(images)
    for i in range(batch):
        image = images[i, :, :, ::-1] if flips[i] else images[i]
        out[i] = _shift(image, int(dys[i]), int(dxs[i]))
    return out


def _shift(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    _, height, width = image.shape
    shifted = np.zeros_like(image)
    if abs(dy) >= height or abs(dx) >= width:
        return shifted
    src_y = slice(max(0, -dy), height - max(0, dy))
    dst_y = slice(max(0, dy), height - max(0, -dy))
    src_x = slice(max(0, -dx), width - max(0, dx))
    dst_x = slice(max(0, dx), width - max(0, -dx))
    shifted[:, dst_y, dst_x] = image[:, src_y, src_x]
    return shifted


def consistency_regularization(
    d_fn: Callable[[np.ndarray], Tensor],
    x_real: np.ndarray,
    augment: Callable[[np.ndarray], np.ndarray],
    lambda_cr: float,
) -> Tensor:
    """
    lambda_cr * mean((D(x) - D(augment(x)))^2) over a real image batch.

    Raises:
        ConsistencyRegularizationError: If ``x_real`` is not an image batch.
    """
    x_real = np.asarray(x_real)
    if x_real.ndim != 4:
        raise ConsistencyRegularizationError(
            "Consistency regularization applies to image data only, "
            f"got batch of shape {x_real.shape}"
        )
    difference = ad.sub(d_fn(x_real), d_fn(augment(x_real)))
    return ad.mul(ad.mean(ad.square(difference)), lambda_cr)
