"""AdamW with decoupled weight decay and bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .tensor import Tensor


@dataclass
class AdamWState:
    """Per-parameter optimizer slots plus the hyperparameters that drive them."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_param(cls, param: Tensor, **hyper) -> "AdamWState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data), **hyper)


def adamw_step(name: str, param: Tensor, grad: np.ndarray, state: AdamWState):
    """One update. Decay multiplies the parameter, never the gradient."""
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient for parameter '{name}'")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    param.data -= state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * param.data)


@dataclass
class AdamW:
    """Drives adamw_step over a named parameter dict; grads read from .grad."""

    params: dict[str, Tensor]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    states: dict[str, AdamWState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states[name] = AdamWState.for_param(
                p,
                lr=self.lr,
                beta1=self.beta1,
                beta2=self.beta2,
                eps=self.eps,
                weight_decay=self.weight_decay,
            )

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adamw_step(name, p, grad, self.states[name])
