"""AdamW: hand-evaluated first steps, decoupled decay, identity and error cases."""

import numpy as np
import pytest

from geomanifold import Tensor
from geomanifold.errors import TrainingError
from geomanifold.optim import AdamW, AdamWState, adamw_step


def test_zero_grad_zero_decay_is_identity():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    state = AdamWState.for_param(p, lr=0.1, weight_decay=0.0)
    before = p.data.copy()
    adamw_step("w", p, np.zeros(3), state)
    assert np.array_equal(p.data, before)
    assert state.t == 1


def test_first_step_hand_evaluated():
    # w=0.5, grad=1, lr=0.1, betas=(0.9, 0.999), eps=1e-8, decay=0:
    # bias-corrected moments are exactly (1, 1), so w -> 0.5 - 0.1/(1+1e-8)
    p = Tensor(np.array([0.5]), requires_grad=True)
    state = AdamWState.for_param(p, lr=0.1)
    adamw_step("w", p, np.array([1.0]), state)
    expected = 0.5 - 0.1 * (1.0 / (1.0 + 1e-8))
    assert abs(p.data[0] - expected) < 1e-15
    assert abs(p.data[0] - 0.4) < 1e-8


def test_decoupled_decay_formula():
    # decay multiplies the parameter, not the gradient: w = 1 - lr*decay*w
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamWState.for_param(p, lr=0.1, weight_decay=0.1)
    adamw_step("w", p, np.array([0.0]), state)
    assert abs(p.data[0] - 0.99) < 1e-15


def test_moment_invariants_track_gradient():
    p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    state = AdamWState.for_param(p, lr=1e-3)
    g = np.array([2.0, -3.0])
    for _ in range(5):
        adamw_step("w", p, g, state)
    assert state.t == 5
    assert np.all(state.v >= 0.0)
    assert state.m.shape == p.data.shape and state.v.shape == p.data.shape


def test_non_finite_gradient_names_parameter():
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamWState.for_param(p)
    with pytest.raises(TrainingError, match="vae.enc.w0"):
        adamw_step("vae.enc.w0", p, np.array([np.nan]), state)


def test_optimizer_over_param_dict():
    params = {
        "a": Tensor(np.ones(3), requires_grad=True),
        "b": Tensor(np.full(2, 2.0), requires_grad=True),
    }
    opt = AdamW(params, lr=0.05, weight_decay=0.0)
    opt.zero_grad()
    params["a"].grad = np.ones(3)
    # b keeps its zeroed grad: must stay identical
    before_b = params["b"].data.copy()
    opt.step()
    assert np.array_equal(params["b"].data, before_b)
    assert np.all(params["a"].data < 1.0)
