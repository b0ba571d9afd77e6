"""Geodesic attention, mixture-of-experts feed-forward, and the full stack."""

import numpy as np
import pytest

from geomanifold import Tensor, ops
from geomanifold import manifold as mf
from geomanifold import transformer as tfm
from geomanifold.errors import UsageError
from geomanifold.gradcheck import finite_diff_check
from geomanifold.rng import RngHub

RNG = np.random.default_rng(321)
SPHERE = mf.ManifoldKind(mf.HYPERSPHERE, 4)


def random_tokens(n, dim):
    return Tensor(RNG.normal(size=(n, dim)))


def sphere_points(n, dim=4):
    return Tensor(mf.random_points(mf.ManifoldKind(mf.HYPERSPHERE, dim), n, RNG))


# ---------------------------------------------------------------------------
# attention


def test_lambda_zero_equals_standard_attention():
    q, k, v = random_tokens(6, 8), random_tokens(6, 8), random_tokens(6, 8)
    z = sphere_points(6)
    geo, _ = tfm.geodesic_attention(q, k, v, z, SPHERE, lam=0.0, n_heads=2)
    std, _ = tfm.attention_core(q, k, v, n_heads=2)
    assert np.max(np.abs(geo.data - std.data)) < 1e-12


def test_two_token_hand_softmax():
    # flat scores, distances [[0, pi], [pi, 0]], lam=1:
    # row weights are [1, e^-pi] / (1 + e^-pi)
    q = Tensor(np.zeros((2, 2)))
    k = Tensor(np.zeros((2, 2)))
    v = Tensor(np.eye(2))
    z = Tensor(np.array([[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]]))
    out, weights = tfm.geodesic_attention(q, k, v, z, SPHERE, lam=1.0)
    w = weights[0].data
    expected_major = 1.0 / (1.0 + np.exp(-np.pi))
    # 1e-6 absorbs the graph-mode domain pad, which nudges the antipodal
    # distance off pi by ~1.4e-6
    assert abs(w[0, 0] - expected_major) < 1e-6
    assert abs(w[0, 1] - (1.0 - expected_major)) < 1e-6
    # the published 4-digit rounding of the same numbers
    assert abs(w[0, 0] - 0.9587) < 2e-4 and abs(w[0, 1] - 0.0413) < 2e-4


def test_single_token_attention():
    q, k = random_tokens(1, 4), random_tokens(1, 4)
    v = random_tokens(1, 4)
    z = sphere_points(1)
    out, weights = tfm.geodesic_attention(q, k, v, z, SPHERE, lam=0.7)
    assert np.allclose(weights[0].data, [[1.0]])
    assert np.allclose(out.data, v.data, atol=1e-15)


def test_negative_lambda_rejected():
    q = random_tokens(2, 4)
    with pytest.raises(UsageError):
        tfm.geodesic_attention(q, q, q, sphere_points(2), SPHERE, lam=-0.1)


def test_rows_sum_to_one_for_random_lambdas():
    for lam in (0.0, 0.3, 1.7, 10.0):
        q, k, v = random_tokens(7, 8), random_tokens(7, 8), random_tokens(7, 8)
        _, weights = tfm.geodesic_attention(q, k, v, sphere_points(7), SPHERE, lam, n_heads=2)
        for w in weights:
            assert np.max(np.abs(w.data.sum(axis=1) - 1.0)) < 1e-9


def test_weight_monotone_decreasing_in_distance():
    """Sweeping one distance entry upward strictly decreases that weight."""
    scores = RNG.normal(size=(3, 3))
    base_d = np.abs(RNG.normal(size=(3, 3)))
    base_d = 0.5 * (base_d + base_d.T)
    np.fill_diagonal(base_d, 0.0)
    lam = 1.0
    prev = None
    for step in range(100):
        d = base_d.copy()
        d[0, 1] = 0.01 + step * 0.03
        w = ops.softmax_rows(Tensor(scores - lam * d)).data
        if prev is not None:
            assert w[0, 1] < prev
        prev = w[0, 1]


# ---------------------------------------------------------------------------
# mixture of experts


def moe_cfg(top_k=1, hidden=6):
    return tfm.MoEConfig(n_experts=4, expert_kinds=("swiglu", "geglu", "swiglu", "geglu"),
                         hidden_dim=hidden, top_k=top_k)


def test_router_forced_selection():
    ffn = tfm.MoeFfn("m", dim=5, cfg=moe_cfg(), rng=RngHub(0).get("init"))
    x = Tensor(RNG.normal(size=(3, 5)))
    for j in range(4):
        ffn.router.w.data[:] = 0.0
        ffn.router.b.data[:] = 0.0
        ffn.router.b.data[0, j] = 1e9
        out = ffn(x)
        expert_only = ffn.experts[j](x)
        assert np.max(np.abs(out.data - expert_only.data)) < 1e-9


def test_zero_input_zero_output():
    ffn = tfm.MoeFfn("m", dim=5, cfg=moe_cfg(), rng=RngHub(1).get("init"))
    out = ffn(Tensor(np.zeros((4, 5))))
    assert np.max(np.abs(out.data)) < 1e-15


def test_identical_experts_convex_combination():
    cfg = moe_cfg(top_k=2)
    ffn = tfm.MoeFfn("m", dim=5, cfg=cfg, rng=RngHub(2).get("init"))
    # make every expert identical (kind differences removed by matching weights
    # only across same-kind pairs: copy expert 0 onto 2 and 1 onto 3, then route
    # within one kind by forcing logits)
    for src, dst in ((0, 2), (1, 3)):
        for a, b in zip(ffn.experts[src].params().values(), ffn.experts[dst].params().values()):
            b.data[:] = a.data
    ffn.router.w.data[:] = 0.0
    ffn.router.b.data[:] = np.array([[5.0, -1e9, 4.0, -1e9]])  # top-2 = experts 0 and 2
    x = Tensor(RNG.normal(size=(3, 5)))
    out = ffn(x)
    single = ffn.experts[0](x)
    assert np.max(np.abs(out.data - single.data)) < 1e-9


def test_expert_relabeling_invariance():
    cfg = moe_cfg(top_k=4)
    ffn = tfm.MoeFfn("m", dim=5, cfg=cfg, rng=RngHub(3).get("init"))
    x = Tensor(RNG.normal(size=(4, 5)))
    before = ffn(x).data.copy()
    # swap the two swiglu experts (0 and 2) together with their router columns
    for a, b in zip(ffn.experts[0].params().values(), ffn.experts[2].params().values()):
        tmp = a.data.copy()
        a.data[:] = b.data
        b.data[:] = tmp
    w = ffn.router.w.data
    w[:, [0, 2]] = w[:, [2, 0]]
    b = ffn.router.b.data
    b[:, [0, 2]] = b[:, [2, 0]]
    after = ffn(x).data
    assert np.max(np.abs(before - after)) < 1e-12


def test_moe_config_validation():
    with pytest.raises(UsageError):
        tfm.MoEConfig(n_experts=2, expert_kinds=("swiglu", "swiglu"), hidden_dim=8, top_k=1)
    with pytest.raises(UsageError):
        tfm.MoEConfig(n_experts=2, expert_kinds=("swiglu", "geglu"), hidden_dim=8, top_k=3)


# ---------------------------------------------------------------------------
# full stack


def small_stack(n_layers=2, lam=0.5):
    att = tfm.AttentionConfig(n_layers=n_layers, model_dim=8, n_heads=2, geo_weight=lam)
    return tfm.GeoTransformer(att, moe_cfg(), latent_dim=4, rng=RngHub(4).get("init"))


def test_zero_layer_identity_and_shapes():
    stack = small_stack(n_layers=0)
    x = random_tokens(5, 8)
    out = stack(x, SPHERE)
    assert out is x
    deep = small_stack(n_layers=3)
    assert deep(x, SPHERE).shape == (5, 8)


def test_permutation_equivariance():
    stack = small_stack()
    x = RNG.normal(size=(6, 8))
    perm = RNG.permutation(6)
    out = stack(Tensor(x), SPHERE).data
    out_perm = stack(Tensor(x[perm]), SPHERE).data
    assert np.max(np.abs(out[perm] - out_perm)) < 1e-10


def test_two_layer_gradient_matches_fd():
    stack = small_stack()
    x = Tensor(RNG.normal(size=(4, 8)))
    target = Tensor(RNG.normal(size=(4, 8)))

    def loss():
        return ops.mean_(ops.square(ops.sub(stack(x, SPHERE), target)))

    report = finite_diff_check(loss, stack.params(), tolerance=1e-4,
                               max_entries_per_param=4, rng=RNG)
    assert report.passed, str(report)


def test_block_masks():
    mask = tfm.block_diagonal_mask(2, 3)
    assert mask.shape == (6, 6)
    assert np.all(mask[:3, :3] == 0.0) and np.all(mask[:3, 3:] == -1e9)
    causal = tfm.causal_block_mask(1, 3)
    assert causal[0, 1] == -1e9 and causal[1, 0] == 0.0
