"""Small trainable building blocks composed from the engine's operator set."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in)


class Linear:
    def __init__(self, name: str, fan_in: int, fan_out: int, rng, bias: bool = True,
                 zero_init: bool = False):
        self.name = name
        w = np.zeros((fan_in, fan_out)) if zero_init else init_weight(rng, fan_in, fan_out)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros((1, fan_out)), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.w)
        if self.b is not None:
            out = ops.add(out, self.b)
        return out

    def params(self) -> dict[str, Tensor]:
        out = {f"{self.name}.w": self.w}
        if self.b is not None:
            out[f"{self.name}.b"] = self.b
        return out


_ACTIVATIONS = {"gelu": ops.gelu, "tanh": ops.tanh, "silu": ops.silu}


class Mlp:
    """Dense stack with a fixed nonlinearity between layers (none after the last)."""

    def __init__(self, name, dims: list[int], rng, activation: str = "gelu",
                 zero_init_last: bool = False):
        self.activation = _ACTIVATIONS[activation]
        self.linears = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            self.linears.append(
                Linear(f"{name}.{i}", dims[i], dims[i + 1], rng,
                       zero_init=zero_init_last and last)
            )

    def __call__(self, x: Tensor) -> Tensor:
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < len(self.linears) - 1:
                x = self.activation(x)
        return x

    def params(self) -> dict[str, Tensor]:
        out = {}
        for lin in self.linears:
            out.update(lin.params())
        return out


class LayerNormParams:
    def __init__(self, name: str, dim: int):
        self.name = name
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}


def collect_params(*components) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for c in components:
        out.update(c.params())
    return out
