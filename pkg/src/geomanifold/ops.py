"""The fixed operator set of the gradient engine.

Every trainable layer in the package is a composition of these operators; the
engine stays small enough to verify exhaustively against finite differences.
Elementwise binaries follow numpy broadcasting (gradients are summed back over
broadcast axes). `reshape`/`transpose`/`slice_`/`concat` are layout operators
with trivial Jacobians; `clip` and `arccos` exist for the manifold formulas
(spherical distances are not expressible without an inverse trig primitive).
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import ShapeError
from .tensor import Tensor

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _node(data, op, *parent_vjps):
    parents = tuple((p, fn) for p, fn in parent_vjps if p.requires_grad)
    return Tensor(data, parents=parents, op=op)


# ---------------------------------------------------------------------------
# elementwise binary


def _binary(op_name, a, b, fw, vjp_a, vjp_b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = fw(a.data, b.data)
    except ValueError:
        raise ShapeError(op_name, a.shape, b.shape) from None
    return _node(
        out,
        op_name,
        (a, lambda g: _unbroadcast(vjp_a(g, a.data, b.data), a.shape)),
        (b, lambda g: _unbroadcast(vjp_b(g, a.data, b.data), b.shape)),
    )


def add(a, b):
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(
        "div", a, b, np.divide, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _node(
        a.data @ b.data,
        "matmul",
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    )


# ---------------------------------------------------------------------------
# elementwise unary


def neg(x):
    x = _as_tensor(x)
    return _node(-x.data, "neg", (x, lambda g: -g))


def exp(x):
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _node(out, "exp", (x, lambda g: g * out))


def log(x):
    x = _as_tensor(x)
    return _node(np.log(x.data), "log", (x, lambda g: g / x.data))


def square(x):
    x = _as_tensor(x)
    return _node(x.data * x.data, "square", (x, lambda g: g * 2.0 * x.data))


def sqrt(x):
    x = _as_tensor(x)
    out = np.sqrt(x.data)
    return _node(out, "sqrt", (x, lambda g: g * 0.5 / out))


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, "tanh", (x, lambda g: g * (1.0 - out * out)))


def sigmoid(x):
    x = _as_tensor(x)
    out = special.expit(x.data)
    return _node(out, "sigmoid", (x, lambda g: g * out * (1.0 - out)))


def silu(x):
    x = _as_tensor(x)
    s = special.expit(x.data)
    return _node(x.data * s, "silu", (x, lambda g: g * s * (1.0 + x.data * (1.0 - s))))


def gelu(x):
    """Exact (erf-based) GELU."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
    return _node(x.data * cdf, "gelu", (x, lambda g: g * (cdf + x.data * pdf)))


def arccos(x):
    x = _as_tensor(x)
    return _node(
        np.arccos(x.data), "arccos", (x, lambda g: -g / np.sqrt(1.0 - x.data * x.data))
    )


def clip(x, lo=None, hi=None):
    """Clamp; gradient passes only strictly inside the active range."""
    x = _as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = np.ones_like(x.data)
    if lo is not None:
        inside = inside * (x.data > lo)
    if hi is not None:
        inside = inside * (x.data < hi)
    return _node(out, "clip", (x, lambda g: g * inside))


# ---------------------------------------------------------------------------
# reductions


def _restore_axes(g, axis, keepdims, shape):
    if axis is None or keepdims:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum_(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape
    return _node(
        out, "sum", (x, lambda g: np.ascontiguousarray(_restore_axes(g, axis, keepdims, shape)))
    )


def mean_(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1)
    shape = x.shape
    return _node(
        out,
        "mean",
        (x, lambda g: np.ascontiguousarray(_restore_axes(g, axis, keepdims, shape)) / count),
    )


def norm(x, axis=None, keepdims=False):
    """L2 norm over all entries or along `axis`. Subgradient 0 at the origin."""
    x = _as_tensor(x)
    out = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=keepdims))
    shape = x.shape

    def vjp(g):
        denom = np.where(out > 0.0, out, 1.0)
        scaled = _restore_axes(g / denom, axis, keepdims, shape)
        return scaled * x.data

    return _node(out, "norm", (x, vjp))


# ---------------------------------------------------------------------------
# row softmax and layer norm


def softmax_rows(x):
    """Row-wise softmax of a 2-D tensor, computed with row-max subtraction."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("softmax-rows", x.shape)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return out * (g - dot)

    return _node(out, "softmax-rows", (x, vjp))


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    centered = sub(x, mean_(x, axis=-1, keepdims=True))
    variance = mean_(square(centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(variance, eps)))
    return add(mul(normed, gamma), beta)


# ---------------------------------------------------------------------------
# layout


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _node(out, "reshape", (x, lambda g: g.reshape(old)))


def transpose(x, axes=None):
    x = _as_tensor(x)
    out = np.transpose(x.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))
    return _node(out, "transpose", (x, lambda g: np.ascontiguousarray(np.transpose(g, inverse))))


def slice_(x, key):
    """Basic (non-fancy) indexing with gradient scatter."""
    x = _as_tensor(x)
    out = x.data[key]
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        full[key] = g
        return full

    return _node(np.ascontiguousarray(out), "slice", (x, vjp))


def concat(tensors, axis: int = 0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", ())
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return np.ascontiguousarray(g[tuple(index)])

        return vjp

    return _node(out, "concat", *((t, make_vjp(i)) for i, t in enumerate(tensors)))


# The engine's operator set. Layers compose these; nothing else differentiates.
SUPPORTED_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "sub": sub,
    "div": div,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "silu": silu,
    "gelu": gelu,
    "softmax-rows": softmax_rows,
    "layer-norm": layer_norm,
    "concat": concat,
    "slice": slice_,
    "sum": sum_,
    "mean": mean_,
    "square": square,
    "sqrt": sqrt,
    "norm": norm,
    # layout and manifold support primitives
    "neg": neg,
    "reshape": reshape,
    "transpose": transpose,
    "clip": clip,
    "arccos": arccos,
}
