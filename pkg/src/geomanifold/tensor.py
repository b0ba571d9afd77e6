"""Dense fp64 tensors with a recorded computation graph for reverse-mode gradients.

Operators (see geomanifold.ops) run eagerly on numpy arrays and record, on each
result, links to the parents that need gradients together with vector-Jacobian
closures. `backprop` replays that record in reverse topological order. The
record doubles as the tape: building a graph IS recording it.

Tensors are immutable once created except for the `grad` slot (and parameter
data updated between steps by the optimizer). A graph must not be shared
across concurrent backward passes.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class Tensor:
    """fp64 array + optional grad. Graph nodes also carry (parent, vjp) pairs."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or bool(parents)
        # parents: tuple of (Tensor, vjp) where vjp maps the upstream gradient
        # to that parent's gradient; only grad-requiring parents are recorded.
        self.parents = parents
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Convenience arithmetic; the canonical operator set lives in geomanifold.ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops

        return ops.slice_(self, key)


def toposort(output: Tensor) -> list[Tensor]:
    """Iterative post-order over the graph reachable from `output`."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backprop(output: Tensor, seed=None):
    """Accumulate gradients of `output` into every reachable grad-requiring tensor.

    `seed` is the upstream gradient of `output` (defaults to ones, which for a
    scalar output makes grads plain derivatives). Leaves whose grad was zeroed
    beforehand and that the graph never touches keep an exact zero gradient.
    """
    if seed is None:
        seed_arr = np.ones_like(output.data)
    else:
        seed_arr = np.asarray(seed, dtype=np.float64)
        if seed_arr.shape != output.data.shape:
            raise ShapeError("backprop seed", seed_arr.shape, output.data.shape)
    order = toposort(output)
    output.accumulate_grad(seed_arr)
    for node in reversed(order):
        g = node.grad
        if g is None or not node.parents:
            continue
        for parent, vjp in node.parents:
            parent.accumulate_grad(vjp(g))
