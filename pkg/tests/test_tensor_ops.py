"""Operator-set correctness: forward identities, finite-difference gradients,
determinism, and the row-softmax guarantees."""

import numpy as np
import pytest

from geomanifold import Tensor, backprop, ops
from geomanifold.errors import ShapeError

RNG = np.random.default_rng(20240811)
FD_H = 1e-5
FD_TOL = 1e-4
N_RANDOM_POINTS = 20


def fd_grad(f, x: np.ndarray, h: float = FD_H) -> np.ndarray:
    """Central differences of a scalar-valued f at x, entry by entry."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b), np.full_like(a, 1e-6)]))


def check_unary_grad(op, sample):
    worst = 0.0
    for _ in range(N_RANDOM_POINTS):
        x = sample()
        xt = Tensor(x, requires_grad=True)
        # weight the output so the check exercises non-uniform upstream seeds
        weights = RNG.normal(size=op(Tensor(x)).shape)
        out = ops.sum_(ops.mul(op(xt), Tensor(weights)))

        def scalar(arr, w=weights):
            return float((np.asarray(op(Tensor(arr)).data) * w).sum())

        xt.zero_grad()
        backprop(out)
        worst = max(worst, rel_err(xt.grad, fd_grad(scalar, x)))
    return worst


UNARY_CASES = {
    "exp": (ops.exp, lambda: RNG.uniform(-2, 2, size=(3, 4))),
    "log": (ops.log, lambda: RNG.uniform(0.2, 3, size=(3, 4))),
    "tanh": (ops.tanh, lambda: RNG.uniform(-3, 3, size=(3, 4))),
    "sigmoid": (ops.sigmoid, lambda: RNG.uniform(-4, 4, size=(3, 4))),
    "silu": (ops.silu, lambda: RNG.uniform(-4, 4, size=(3, 4))),
    "gelu": (ops.gelu, lambda: RNG.uniform(-4, 4, size=(3, 4))),
    "square": (ops.square, lambda: RNG.uniform(-2, 2, size=(3, 4))),
    "sqrt": (ops.sqrt, lambda: RNG.uniform(0.3, 3, size=(3, 4))),
    "neg": (ops.neg, lambda: RNG.uniform(-2, 2, size=(3, 4))),
    "arccos": (ops.arccos, lambda: RNG.uniform(-0.9, 0.9, size=(3, 4))),
    "softmax-rows": (ops.softmax_rows, lambda: RNG.uniform(-2, 2, size=(3, 4))),
    "clip": (lambda x: ops.clip(x, -0.8, 0.8), lambda: RNG.uniform(-0.7, 0.7, size=(3, 4))),
    "sum": (lambda x: ops.sum_(x, axis=1, keepdims=True), lambda: RNG.normal(size=(3, 4))),
    "mean": (lambda x: ops.mean_(x, axis=0), lambda: RNG.normal(size=(3, 4))),
    "norm": (lambda x: ops.norm(x, axis=1, keepdims=True), lambda: RNG.uniform(0.5, 2, (3, 4))),
    "reshape": (lambda x: ops.reshape(x, (4, 3)), lambda: RNG.normal(size=(3, 4))),
    "transpose": (ops.transpose, lambda: RNG.normal(size=(3, 4))),
    "slice": (lambda x: ops.slice_(x, (slice(1, 3), slice(0, 2))), lambda: RNG.normal(size=(3, 4))),
}


@pytest.mark.parametrize("name", sorted(UNARY_CASES))
def test_unary_gradients_match_finite_differences(name):
    op, sample = UNARY_CASES[name]
    assert check_unary_grad(op, sample) < FD_TOL


@pytest.mark.parametrize("name", ["add", "sub", "mul", "div", "matmul"])
def test_binary_gradients_match_finite_differences(name):
    op = ops.SUPPORTED_OPS[name]
    worst = 0.0
    for _ in range(N_RANDOM_POINTS):
        if name == "matmul":
            a = RNG.normal(size=(3, 4))
            b = RNG.normal(size=(4, 2))
        else:
            a = RNG.uniform(0.5, 2, size=(3, 4))
            b = RNG.uniform(0.5, 2, size=(3, 4))
        w = RNG.normal(size=op(Tensor(a), Tensor(b)).shape)

        def scalar_a(x):
            return float((op(Tensor(x), Tensor(b)).data * w).sum())

        def scalar_b(x):
            return float((op(Tensor(a), Tensor(x)).data * w).sum())

        at, bt = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        out = ops.sum_(ops.mul(op(at, bt), Tensor(w)))
        at.zero_grad()
        bt.zero_grad()
        backprop(out)
        worst = max(worst, rel_err(at.grad, fd_grad(scalar_a, a)))
        worst = max(worst, rel_err(bt.grad, fd_grad(scalar_b, b)))
    assert worst < FD_TOL


def test_broadcast_gradients():
    a = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(RNG.normal(size=(1, 4)), requires_grad=True)
    out = ops.sum_(ops.mul(ops.add(a, b), ops.add(a, b)))
    a.zero_grad()
    b.zero_grad()
    backprop(out)
    expect_b = (2 * (a.data + b.data)).sum(axis=0, keepdims=True)
    assert np.allclose(b.grad, expect_b, atol=1e-12)
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_concat_and_layernorm_gradients():
    a = RNG.normal(size=(2, 3))
    b = RNG.normal(size=(2, 2))
    gamma = np.ones(5)
    beta = np.zeros(5)

    def scalar(xa, xb=b):
        at, bt = Tensor(xa), Tensor(xb)
        y = ops.layer_norm(ops.concat([at, bt], axis=1), Tensor(gamma), Tensor(beta))
        return float(ops.sum_(ops.square(y)).data)

    at = Tensor(a, requires_grad=True)
    bt = Tensor(b, requires_grad=True)
    y = ops.layer_norm(ops.concat([at, bt], axis=1), Tensor(gamma), Tensor(beta))
    out = ops.sum_(ops.square(y))
    at.zero_grad()
    backprop(out)
    assert rel_err(at.grad, fd_grad(scalar, a)) < FD_TOL


def test_matmul_identity_and_shape_error():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ops.matmul(x, Tensor(np.eye(2)))
    assert np.array_equal(out.data, x.data)
    with pytest.raises(ShapeError) as err:
        ops.matmul(x, Tensor(np.zeros((3, 3))))
    assert "matmul" in str(err.value) and "(2, 2)" in str(err.value)


def test_softmax_symmetry_and_row_sums():
    out = ops.softmax_rows(Tensor([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)
    # moderate logits: at extreme spreads fp64 rounds the dominant entry to 1.0
    x = RNG.normal(size=(50, 7)) * 5
    s = ops.softmax_rows(Tensor(x)).data
    assert np.max(np.abs(s.sum(axis=1) - 1.0)) < 1e-12
    assert np.all(s > 0.0) and np.all(s < 1.0)


def test_silu_at_zero():
    assert ops.silu(Tensor([0.0])).data[0] == 0.0


def test_backprop_simple_analytic_cases():
    # f(w) = w^2 at w=3 -> grad 6
    w = Tensor(np.array([3.0]), requires_grad=True)
    out = ops.sum_(ops.square(w))
    w.zero_grad()
    backprop(out)
    assert np.allclose(w.grad, [6.0])
    # unused input keeps its exact-zero gradient
    u = Tensor(np.array([5.0]), requires_grad=True)
    u.zero_grad()
    const = ops.sum_(ops.square(Tensor(np.array([1.0]))))
    backprop(const)
    assert np.array_equal(u.grad, [0.0])


def test_backprop_softmax_composite_tight_tolerance():
    """A softmax-based composite must match finite differences to 1e-6 relative."""
    w0 = RNG.normal(size=(4, 3))

    def scalar(wa):
        wt = Tensor(wa)
        h = ops.softmax_rows(ops.matmul(Tensor(x0), wt))
        return float(ops.mean_(ops.square(ops.sub(h, Tensor(target)))).data)

    x0 = RNG.normal(size=(5, 4))
    target = RNG.uniform(0, 1, size=(5, 3))
    wt = Tensor(w0, requires_grad=True)
    h = ops.softmax_rows(ops.matmul(Tensor(x0), wt))
    loss = ops.mean_(ops.square(ops.sub(h, Tensor(target))))
    wt.zero_grad()
    backprop(loss)
    assert rel_err(wt.grad, fd_grad(scalar, w0)) < 1e-6


def test_backprop_seed_shape_error():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    out = ops.square(x)
    with pytest.raises(ShapeError):
        backprop(out, seed=np.ones((3, 3)))


def test_forward_determinism_bit_identical():
    x = RNG.normal(size=(6, 6))
    w = RNG.normal(size=(6, 6))

    def run():
        t = ops.gelu(ops.matmul(Tensor(x), Tensor(w)))
        t = ops.softmax_rows(t)
        return ops.layer_norm(t, Tensor(np.ones(6)), Tensor(np.zeros(6))).data

    first, second = run(), run()
    assert np.array_equal(first, second)


def test_deep_graph_backprop_is_iterative():
    # thousands of chained nodes must not hit the recursion limit
    x = Tensor(np.array([0.5]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = ops.mul(y, Tensor(np.array([1.0001])))
    out = ops.sum_(y)
    x.zero_grad()
    backprop(out)
    assert np.isfinite(x.grad[0])
