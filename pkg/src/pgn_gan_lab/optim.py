"""
Adam optimizer state and parameter averaging.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from .autodiff import Tensor

GradientLike = Union[Tensor, np.ndarray]


class TrainingError(Exception):
    """Base exception for training errors."""

    pass


class NonFiniteGradientError(TrainingError):
    """A gradient contains NaN or infinity."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Gradient for '{name}' is not finite")


@dataclass
class AdamState:
    """First and second moment estimates plus the update count."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros(p.shape) for name, p in params.items()},
            v={name: np.zeros(p.shape) for name, p in params.items()},
            t=0,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={name: value.copy() for name, value in self.m.items()},
            v={name: value.copy() for name, value in self.v.items()},
            t=self.t,
        )


def _as_array(grad: GradientLike) -> np.ndarray:
    return grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, GradientLike],
    state: AdamState,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float = 1e-8,
) -> Tuple[Dict[str, Tensor], AdamState]:
    """
    One bias-corrected Adam update.

    Returns new parameters and a new state; the inputs are left untouched.

    Raises:
        NonFiniteGradientError: If any gradient has a NaN or infinite entry.
    """
    arrays = {name: _as_array(grads[name]) for name in params}
    for name, grad in arrays.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)

    t = state.t + 1
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    new_params: Dict[str, Tensor] = {}
    new_state = AdamState(t=t)
    for name, param in params.items():
        grad = arrays[name]
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * grad
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = Tensor._wrap(param.data - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_state.m[name] = m
        new_state.v[name] = v
    return new_params, new_state


def ema_update(
    ema: Mapping[str, Tensor], current: Mapping[str, Tensor], decay: float
) -> Dict[str, Tensor]:
    """decay * ema + (1 - decay) * current, per parameter."""
    return {
        name: Tensor._wrap(decay * ema[name].data + (1.0 - decay) * current[name].data)
        for name in ema
    }
