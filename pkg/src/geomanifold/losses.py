"""Training objectives and rigid cross-subject alignment.

The geometric-consistency term matches latent geodesic distances against
input-space Euclidean distances; because the two spaces have incommensurate
units, input distances are divided by a detached per-batch scale that equates
their means (an isometric-up-to-scale embedding therefore scores exactly 0).
The contrastive term is a temperature-scaled two-view softmax over cosine
similarities. Rigid alignment solves the orthogonal Procrustes problem in
closed form from the SVD of the cross-covariance, reflection-corrected to a
proper rotation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import manifold as mf
from . import ops
from .errors import UsageError
from .tensor import Tensor


@dataclass
class LossWeights:
    alpha: float = 0.1  # geometric consistency
    beta: float = 0.1  # contrastive alignment
    tau: float = 0.1  # contrastive temperature
    gamma: float = 1e-3  # KL weight inside the reconstruction term
    dyn: float = 1.0  # next-latent prediction

    def __post_init__(self):
        if self.tau <= 0:
            raise UsageError(f"temperature must be > 0, got {self.tau}")
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise UsageError("loss weights must be non-negative")


def pairwise_euclidean(x_rows: np.ndarray) -> np.ndarray:
    """Pairwise L2 distances of rows via the Gram expansion (no n*n*f temporary)."""
    sq = (x_rows * x_rows).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x_rows @ x_rows.T), 0.0)
    return np.sqrt(d2)


def geo_scale(z_rows: np.ndarray, x_rows: np.ndarray, m: mf.ManifoldKind,
              d_x: np.ndarray | None = None) -> float:
    """Detached batch scale equating mean input and mean latent distances."""
    d_z = mf.pairwise_geodesic_array(m, z_rows)
    n = z_rows.shape[0]
    iu = np.triu_indices(n, k=1)
    mean_z = float(d_z[iu].mean())
    if d_x is None:
        d_x = pairwise_euclidean(x_rows)
    mean_x = float(d_x[iu].mean())
    if mean_z < 1e-12:
        return 1.0
    return max(mean_x / mean_z, 1e-12)


def geo_loss(z: Tensor, x: np.ndarray, m: mf.ManifoldKind,
             scale: float | None = None) -> Tensor:
    """Sum over all in-batch pairs of (d_M(z_i, z_j) - |x_i - x_j| / s)^2."""
    n = z.shape[0]
    if n < 2:
        raise UsageError("geometric consistency needs at least 2 points")
    d_x = pairwise_euclidean(x)
    if scale is None:
        scale = geo_scale(z.data, x, m, d_x=d_x)
    d_z = mf.pairwise_geodesic_rows(m, z)
    target = d_x / scale
    diff = ops.sub(d_z, Tensor(target))
    upper = np.triu(np.ones((n, n)), k=1)
    return ops.sum_(ops.mul(ops.square(diff), Tensor(upper)))


def align_loss(view1: Tensor, view2: Tensor, tau: float) -> Tensor:
    """Two-view contrastive loss: mean over rows of the softmax cross-entropy
    between cosine similarities and the matched-pair diagonal."""
    if tau <= 0:
        raise UsageError(f"temperature must be > 0, got {tau}")
    if view1.shape != view2.shape:
        raise UsageError(f"view shapes disagree: {view1.shape} vs {view2.shape}")
    n = view1.shape[0]
    u1 = ops.div(view1, ops.clip(ops.norm(view1, axis=1, keepdims=True), 1e-12, None))
    u2 = ops.div(view2, ops.clip(ops.norm(view2, axis=1, keepdims=True), 1e-12, None))
    sim = ops.matmul(u1, ops.transpose(u2))
    log_probs = ops.log(ops.softmax_rows(ops.mul(sim, 1.0 / tau)))
    eye = Tensor(np.eye(n))
    return ops.mul(ops.sum_(ops.mul(log_probs, eye)), -1.0 / n)


def total_loss(l_recon: Tensor, l_geo: Tensor, l_align: Tensor,
               weights: LossWeights) -> Tensor:
    """recon + alpha * geo + beta * align (KL is already folded into recon)."""
    return ops.add(
        l_recon, ops.add(ops.mul(l_geo, weights.alpha), ops.mul(l_align, weights.beta))
    )


# ---------------------------------------------------------------------------
# rigid alignment


@dataclass
class AlignmentMap:
    """p -> R (p - source_centroid) + target_centroid, then re-projection."""

    rotation: np.ndarray
    source_centroid: np.ndarray
    target_centroid: np.ndarray

    def validate(self):
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(r.shape[0]), atol=1e-9):
            raise UsageError("alignment rotation is not orthogonal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise UsageError(f"alignment rotation has det {np.linalg.det(r)}")
        return self

    @classmethod
    def identity(cls, dim: int) -> "AlignmentMap":
        return cls(np.eye(dim), np.zeros(dim), np.zeros(dim))

    def save(self, path):
        payload = {
            "rotation": self.rotation.tolist(),
            "source_centroid": self.source_centroid.tolist(),
            "target_centroid": self.target_centroid.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path) -> "AlignmentMap":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            np.asarray(payload["rotation"], dtype=np.float64),
            np.asarray(payload["source_centroid"], dtype=np.float64),
            np.asarray(payload["target_centroid"], dtype=np.float64),
        )


def kabsch_align(source: np.ndarray, target: np.ndarray) -> AlignmentMap:
    """Best proper rotation (plus centroid shift) mapping matched source points
    onto target points, clouds given as (n, d) rows with n >= d.

    Cross-covariance H = Sc^T Tc is decomposed as U S V^T and the rotation is
    V diag(1, ..., det(V U^T)) U^T, which corrects reflections.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape:
        raise UsageError(f"cloud shapes disagree: {source.shape} vs {target.shape}")
    n, d = source.shape
    if n < d:
        raise UsageError(f"need at least d={d} matched points, got {n}")
    sc = source.mean(axis=0)
    tc = target.mean(axis=0)
    h = (source - sc).T @ (target - tc)
    u, s, vt = np.linalg.svd(h)
    if s[-1] < 1e-12 * max(s[0], 1.0):
        warnings.warn(
            "rank-deficient alignment: rotation about the null direction is "
            "ambiguous; smallest-singular-vector convention applied",
            RuntimeWarning,
            stacklevel=2,
        )
    v = vt.T
    correction = np.eye(d)
    correction[-1, -1] = np.sign(np.linalg.det(v @ u.T)) or 1.0
    rotation = v @ correction @ u.T
    return AlignmentMap(rotation, sc, tc).validate()


def alignment_residual(amap: AlignmentMap, source: np.ndarray, target: np.ndarray) -> float:
    moved = (source - amap.source_centroid) @ amap.rotation.T + amap.target_centroid
    return float(((moved - target) ** 2).sum())


def apply_alignment(amap: AlignmentMap, points: np.ndarray,
                    m: mf.ManifoldKind | None = None) -> np.ndarray:
    """Apply the rigid map to rows and project back onto the manifold."""
    points = np.asarray(points, dtype=np.float64)
    moved = (points - amap.source_centroid) @ amap.rotation.T + amap.target_centroid
    if m is None:
        return moved
    return np.stack([mf.project(m, row).coords for row in moved])


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Proper rotation sampled via QR with sign fixing."""
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
