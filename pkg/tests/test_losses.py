"""Objectives and rigid alignment: hand-computed values, symmetry oracles,
planted-rotation recovery, and brute-force optimality checks."""

import numpy as np
import pytest

from geomanifold import Tensor, backprop, ops
from geomanifold import losses as ls
from geomanifold import manifold as mf
from geomanifold.errors import UsageError
from geomanifold.gradcheck import finite_diff_check

RNG = np.random.default_rng(2718)
SPHERE3 = mf.ManifoldKind(mf.HYPERSPHERE, 3)


# ---------------------------------------------------------------------------
# geometric consistency


def test_geo_loss_zero_on_scaled_isometric_embedding():
    # points along one great circle; input coords proportional to arc length
    theta = np.linspace(0.0, 1.4, 6)
    z = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=1)
    x = np.stack([5.0 * theta, np.ones_like(theta)], axis=1)
    loss = ls.geo_loss(Tensor(z), x, SPHERE3)
    assert loss.item() < 1e-12


def test_geo_loss_single_pair_arithmetic():
    # d_M = pi/2 would not be 1, so build points at geodesic distance exactly 1
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([np.cos(1.0), np.sin(1.0), 0.0])
    x = np.array([[0.0, 0.0], [3.0, 0.0]])  # input distance 3 under scale 1
    loss = ls.geo_loss(Tensor(np.stack([a, b])), x, SPHERE3, scale=1.0)
    assert abs(loss.item() - 4.0) < 1e-9  # (1 - 3)^2


def test_geo_loss_needs_two_points():
    with pytest.raises(UsageError):
        ls.geo_loss(Tensor(np.array([[1.0, 0.0, 0.0]])), np.zeros((1, 2)), SPHERE3)


def test_geo_loss_gradient_matches_fd():
    z0 = mf.random_points(SPHERE3, 5, RNG)
    x = RNG.normal(size=(5, 4))
    z = Tensor(z0.copy(), requires_grad=True)
    scale = ls.geo_scale(z0, x, SPHERE3)

    def loss():
        return ls.geo_loss(z, x, SPHERE3, scale=scale)

    report = finite_diff_check(loss, {"z": z}, tolerance=1e-4)
    assert report.passed, str(report)


# ---------------------------------------------------------------------------
# contrastive alignment


def test_align_loss_single_pair_is_zero():
    v = Tensor(RNG.normal(size=(1, 4)))
    w = Tensor(RNG.normal(size=(1, 4)))
    assert ls.align_loss(v, w, tau=0.5).item() == 0.0


def test_align_loss_two_pair_hand_value():
    # antipodal pair: sim(i, i) = 1, sim(i, j != i) = -1, tau = 1:
    # per-row loss = -log(e / (e + e^-1)) = log(1 + e^-2) ~= 0.126928
    v1 = Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    v2 = Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    loss = ls.align_loss(v1, v2, tau=1.0)
    expected = np.log(1.0 + np.exp(-2.0))
    assert abs(loss.item() - expected) < 1e-12
    assert abs(loss.item() - 0.1269) < 1e-4


def test_align_loss_joint_permutation_invariance():
    v1 = RNG.normal(size=(6, 5))
    v2 = RNG.normal(size=(6, 5))
    base = ls.align_loss(Tensor(v1), Tensor(v2), tau=0.3).item()
    perm = RNG.permutation(6)
    permuted = ls.align_loss(Tensor(v1[perm]), Tensor(v2[perm]), tau=0.3).item()
    assert abs(base - permuted) < 1e-12


def test_align_loss_decreases_with_matched_similarity():
    # orthogonal construction keeps every negative similarity fixed at 0
    d = 6
    eye = np.eye(d)
    prev = None
    for angle in np.linspace(1.2, 0.1, 8):
        v1 = eye[:3]
        v2 = np.cos(angle) * eye[:3] + np.sin(angle) * eye[3:]
        loss = ls.align_loss(Tensor(v1), Tensor(v2), tau=0.5).item()
        if prev is not None:
            assert loss < prev
        prev = loss


def test_align_loss_bad_temperature():
    v = Tensor(RNG.normal(size=(2, 3)))
    with pytest.raises(UsageError):
        ls.align_loss(v, v, tau=0.0)


# ---------------------------------------------------------------------------
# total loss


def test_total_loss_arithmetic():
    w = ls.LossWeights(alpha=0.5, beta=0.1)
    one = Tensor(np.array(1.0))
    two = Tensor(np.array(2.0))
    three = Tensor(np.array(3.0))
    assert abs(ls.total_loss(one, two, three, w).item() - 2.3) < 1e-15
    w0 = ls.LossWeights(alpha=0.0, beta=0.0)
    assert ls.total_loss(one, two, three, w0).item() == 1.0


def test_total_loss_gradient_linearity():
    """Gradient of the weighted sum equals the weighted sum of gradients."""
    z0 = mf.random_points(SPHERE3, 4, RNG)
    x = RNG.normal(size=(4, 3))
    w = ls.LossWeights(alpha=0.37, beta=0.59)
    scale = ls.geo_scale(z0, x, SPHERE3)

    def parts(zt):
        recon = ops.mean_(ops.square(zt))
        geo = ls.geo_loss(zt, x, SPHERE3, scale=scale)
        align = ls.align_loss(zt, Tensor(z0 + 0.05), tau=0.5)
        return recon, geo, align

    zt = Tensor(z0.copy(), requires_grad=True)
    zt.zero_grad()
    backprop(ls.total_loss(*parts(zt), w))
    combined = zt.grad.copy()

    separate = np.zeros_like(combined)
    for weight, idx in ((1.0, 0), (w.alpha, 1), (w.beta, 2)):
        zt = Tensor(z0.copy(), requires_grad=True)
        zt.zero_grad()
        backprop(parts(zt)[idx])
        separate += weight * zt.grad
    assert np.max(np.abs(combined - separate)) < 1e-10


# ---------------------------------------------------------------------------
# Kabsch alignment


def test_kabsch_identity():
    cloud = RNG.normal(size=(12, 3))
    amap = ls.kabsch_align(cloud, cloud)
    assert np.allclose(amap.rotation, np.eye(3), atol=1e-12)
    assert ls.alignment_residual(amap, cloud, cloud) < 1e-20


@pytest.mark.parametrize("d", [2, 3, 8, 128])
def test_kabsch_recovers_planted_rotation(d):
    rng = np.random.default_rng(d)
    source = rng.normal(size=(4 * d, d))
    planted = ls.random_rotation(d, rng)
    shift = rng.normal(size=d)
    target = source @ planted.T + shift
    amap = ls.kabsch_align(source, target)
    assert np.linalg.norm(amap.rotation - planted) < 1e-6
    assert abs(np.linalg.det(amap.rotation) - 1.0) < 1e-9


def test_kabsch_reflective_input_stays_proper():
    rng = np.random.default_rng(4)
    source = rng.normal(size=(40, 2))
    target = source.copy()
    target[:, 0] = -target[:, 0]  # reflection, not a rotation
    amap = ls.kabsch_align(source, target)
    assert abs(np.linalg.det(amap.rotation) - 1.0) < 1e-9
    res = ls.alignment_residual(amap, source, target)
    # brute force over 3600 proper rotations
    best = np.inf
    sc = source - source.mean(axis=0)
    tc = target - target.mean(axis=0)
    for ang in np.linspace(0, 2 * np.pi, 3600, endpoint=False):
        r = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        best = min(best, float(((sc @ r.T - tc) ** 2).sum()))
    assert res <= best + 1e-9


def test_kabsch_beats_random_rotations():
    rng = np.random.default_rng(8)
    source = rng.normal(size=(30, 5))
    target = source @ ls.random_rotation(5, rng).T + 0.05 * rng.normal(size=(30, 5))
    amap = ls.kabsch_align(source, target)
    res = ls.alignment_residual(amap, source, target)
    sc = source - source.mean(axis=0)
    tc = target - target.mean(axis=0)
    for _ in range(1000):
        r = ls.random_rotation(5, rng)
        assert res <= float(((sc @ r.T - tc) ** 2).sum()) + 1e-12


def test_kabsch_needs_enough_points():
    with pytest.raises(UsageError):
        ls.kabsch_align(RNG.normal(size=(3, 5)), RNG.normal(size=(3, 5)))


def test_apply_alignment_identity_and_isometry():
    m = SPHERE3
    pts = mf.random_points(m, 10, RNG)
    ident = ls.AlignmentMap.identity(3)
    out = ls.apply_alignment(ident, pts, m)
    assert np.max(np.abs(out - pts)) < 1e-9
    # before projection a rigid map preserves pairwise distances
    rng = np.random.default_rng(0)
    amap = ls.AlignmentMap(ls.random_rotation(3, rng), rng.normal(size=3), rng.normal(size=3))
    moved = ls.apply_alignment(amap, pts, None)
    d_before = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    d_after = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
    assert np.max(np.abs(d_before - d_after)) < 1e-9


def test_alignment_reduces_planted_rotation_distance():
    m = SPHERE3
    rng = np.random.default_rng(10)
    cloud_a = mf.random_points(m, 60, rng)
    planted = ls.random_rotation(3, rng)
    cloud_b = cloud_a @ planted.T
    before = np.mean(
        [
            mf.geodesic_distance(mf.ManifoldPoint(m, a), mf.ManifoldPoint(m, b))
            for a, b in zip(cloud_a, cloud_b)
        ]
    )
    amap = ls.kabsch_align(cloud_a, cloud_b)
    moved = ls.apply_alignment(amap, cloud_a, m)
    after = np.mean(
        [
            mf.geodesic_distance(mf.ManifoldPoint(m, a), mf.ManifoldPoint(m, b))
            for a, b in zip(moved, cloud_b)
        ]
    )
    assert after <= 0.5 * before


def test_alignment_map_io_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    amap = ls.AlignmentMap(ls.random_rotation(4, rng), rng.normal(size=4), rng.normal(size=4))
    path = tmp_path / "map.json"
    amap.save(path)
    back = ls.AlignmentMap.load(path)
    assert np.allclose(back.rotation, amap.rotation, atol=1e-15)
    assert np.allclose(back.source_centroid, amap.source_centroid, atol=1e-15)
