"""finite_diff_check: linear layer, vacuous case, and failure detection."""

import numpy as np

from geomanifold import Tensor, ops
from geomanifold.gradcheck import finite_diff_check

RNG = np.random.default_rng(7)


def test_linear_layer_mse_passes_tight():
    x = Tensor(RNG.normal(size=(6, 4)))
    target = Tensor(RNG.normal(size=(6, 2)))
    params = {
        "w": Tensor(RNG.normal(size=(4, 2)) * 0.3, requires_grad=True),
        "b": Tensor(np.zeros((1, 2)), requires_grad=True),
    }

    def loss():
        pred = ops.add(ops.matmul(x, params["w"]), params["b"])
        return ops.mean_(ops.square(ops.sub(pred, target)))

    report = finite_diff_check(loss, params, tolerance=1e-6)
    assert report.passed, str(report)
    assert report.n_checked == 10


def test_zero_parameter_fragment_vacuous_pass():
    def loss():
        return ops.sum_(ops.square(Tensor(np.array([1.0, 2.0]))))

    report = finite_diff_check(loss, {})
    assert report.passed
    assert report.n_checked == 0
    assert report.max_rel_err == 0.0


def test_detects_wrong_gradient():
    # A loss whose graph deliberately detaches the parameter: analytic grad is
    # zero, numeric is not, so the check must fail.
    p = Tensor(np.array([1.5]), requires_grad=True)

    def loss():
        return ops.sum_(ops.square(p.detach()))

    report = finite_diff_check(loss, {"p": p}, tolerance=1e-4)
    assert not report.passed
    assert report.failures
