"""Latent manifolds: unit hypersphere and Poincare ball (curvature -1).

Two API levels: plain numpy functions on `ManifoldPoint`s for data paths and
verification, and `*_rows` graph operations on Tensors (batches of points as
rows) for anything a gradient must flow through. A third kind, "euclidean",
backs the ablation that strips the manifold constraint: projection becomes the
identity and distances become plain L2, so the rest of the pipeline stays
well-defined on unconstrained latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import DegenerateInputError, SingularityError, UsageError
from .tensor import Tensor

HYPERSPHERE = "hypersphere"
POINCARE_BALL = "poincare_ball"
EUCLIDEAN = "euclidean"
_KINDS = (HYPERSPHERE, POINCARE_BALL, EUCLIDEAN)

# Dot products / arcosh arguments are clamped this far inside their domain in
# graph mode so gradients stay finite at near-coincident points.
_DOMAIN_PAD = 1e-12


@dataclass(frozen=True)
class ManifoldKind:
    kind: str
    dim: int
    boundary_margin: float = 1e-5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise UsageError(f"unknown manifold kind '{self.kind}'")
        if self.dim < 2:
            raise UsageError(f"manifold dim must be >= 2, got {self.dim}")
        if self.kind == POINCARE_BALL and not (0.0 < self.boundary_margin < 1e-2):
            raise UsageError(
                f"boundary margin must lie in (0, 1e-2), got {self.boundary_margin}"
            )


@dataclass
class ManifoldPoint:
    manifold: ManifoldKind
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.shape != (self.manifold.dim,):
            raise UsageError(
                f"point has {self.coords.shape} coords, manifold dim is {self.manifold.dim}"
            )

    def validate(self):
        n = float(np.linalg.norm(self.coords))
        if self.manifold.kind == HYPERSPHERE and abs(n - 1.0) > 1e-9:
            raise UsageError(f"hypersphere point has norm {n}")
        if self.manifold.kind == POINCARE_BALL and n > 1.0 - self.manifold.boundary_margin + 1e-12:
            raise UsageError(f"ball point has norm {n}, margin {self.manifold.boundary_margin}")
        return self


def _check_same(a: ManifoldPoint, b: ManifoldPoint):
    if a.manifold != b.manifold:
        raise UsageError(f"manifold mismatch: {a.manifold} vs {b.manifold}")


# ---------------------------------------------------------------------------
# numpy level


def project(m: ManifoldKind, v: np.ndarray) -> ManifoldPoint:
    """Constrain an ambient vector onto the manifold.

    Hypersphere: radial normalization (undefined for near-zero input).
    Ball: identity inside the margin, radial rescale onto it otherwise.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (m.dim,):
        raise UsageError(f"vector length {v.shape} does not match dim {m.dim}")
    if m.kind == HYPERSPHERE:
        n = float(np.sqrt((v * v).sum()))
        if n < 1e-12:
            raise DegenerateInputError("cannot project ~zero vector to the hypersphere")
        if abs(n - 1.0) <= 1e-9:
            # already on the sphere (within the point invariant): identity,
            # which makes repeated projection bit-exact
            return ManifoldPoint(m, v.copy())
        return ManifoldPoint(m, v / n)
    if m.kind == POINCARE_BALL:
        n = float(np.sqrt((v * v).sum()))
        limit = 1.0 - m.boundary_margin
        if n <= limit:
            return ManifoldPoint(m, v.copy())
        return ManifoldPoint(m, v * (limit / n))
    return ManifoldPoint(m, v.copy())


def geodesic_distance(a: ManifoldPoint, b: ManifoldPoint) -> float:
    _check_same(a, b)
    kind = a.manifold.kind
    if kind == HYPERSPHERE:
        if np.array_equal(a.coords, b.coords):
            return 0.0  # arccos of the rounded self-dot would give ~1e-8
        return float(np.arccos(np.clip(np.dot(a.coords, b.coords), -1.0, 1.0)))
    if kind == POINCARE_BALL:
        diff = a.coords - b.coords
        denom = (1.0 - np.dot(a.coords, a.coords)) * (1.0 - np.dot(b.coords, b.coords))
        arg = 1.0 + 2.0 * np.dot(diff, diff) / denom
        return float(np.arccosh(max(arg, 1.0)))
    return float(np.linalg.norm(a.coords - b.coords))


def exp_map(base: ManifoldPoint, tangent: np.ndarray) -> ManifoldPoint:
    """Follow the geodesic leaving `base` with the given tangent vector.

    Hypersphere tangents are orthogonalized against the base first (callers
    produce near-tangent vectors); ball tangents use the standard Mobius form.
    """
    t = np.asarray(tangent, dtype=np.float64)
    m = base.manifold
    if m.kind == HYPERSPHERE:
        t = t - np.dot(t, base.coords) * base.coords
        theta = float(np.linalg.norm(t))
        if theta < 1e-15:
            return ManifoldPoint(m, base.coords.copy())
        out = np.cos(theta) * base.coords + np.sin(theta) * (t / theta)
        return project(m, out)
    if m.kind == POINCARE_BALL:
        norm_t = float(np.linalg.norm(t))
        if norm_t < 1e-15:
            return ManifoldPoint(m, base.coords.copy())
        lam = 2.0 / (1.0 - np.dot(base.coords, base.coords))
        step = np.tanh(lam * norm_t / 2.0) * (t / norm_t)
        return project(m, _mobius_add(base.coords, step))
    return ManifoldPoint(m, base.coords + t)


def log_map(base: ManifoldPoint, target: ManifoldPoint) -> np.ndarray:
    """Inverse of exp_map: the tangent at `base` whose geodesic reaches `target`."""
    _check_same(base, target)
    m = base.manifold
    if m.kind == HYPERSPHERE:
        cos_d = float(np.clip(np.dot(base.coords, target.coords), -1.0, 1.0))
        if cos_d < -1.0 + 1e-9:
            raise SingularityError("log map undefined for antipodal points")
        u = target.coords - cos_d * base.coords
        norm_u = float(np.linalg.norm(u))
        if norm_u < 1e-15:
            return np.zeros(m.dim)
        return np.arccos(cos_d) * (u / norm_u)
    if m.kind == POINCARE_BALL:
        w = _mobius_add(-base.coords, target.coords)
        norm_w = float(np.linalg.norm(w))
        if norm_w < 1e-15:
            return np.zeros(m.dim)
        lam = 2.0 / (1.0 - np.dot(base.coords, base.coords))
        return (2.0 / lam) * np.arctanh(min(norm_w, 1.0 - 1e-15)) * (w / norm_w)
    return target.coords - base.coords


def tangent_norm(base: ManifoldPoint, tangent: np.ndarray) -> float:
    """Length of a tangent vector in the base point's Riemannian metric."""
    n = float(np.linalg.norm(tangent))
    if base.manifold.kind == POINCARE_BALL:
        return n * 2.0 / (1.0 - float(np.dot(base.coords, base.coords)))
    return n


def pairwise_geodesic(points: list[ManifoldPoint]) -> np.ndarray:
    if not points:
        raise UsageError("pairwise_geodesic needs at least one point")
    for p in points[1:]:
        _check_same(points[0], p)
    m = points[0].manifold
    coords = np.stack([p.coords for p in points])
    return pairwise_geodesic_array(m, coords)


def pairwise_geodesic_array(m: ManifoldKind, coords: np.ndarray) -> np.ndarray:
    """Vectorized pairwise distances for rows of `coords`; exact zero diagonal."""
    n = coords.shape[0]
    if m.kind == HYPERSPHERE:
        d = np.arccos(np.clip(coords @ coords.T, -1.0, 1.0))
    elif m.kind == POINCARE_BALL:
        sq = (coords * coords).sum(axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (coords @ coords.T), 0.0)
        arg = 1.0 + 2.0 * d2 / ((1.0 - sq[:, None]) * (1.0 - sq[None, :]))
        d = np.arccosh(np.maximum(arg, 1.0))
    else:
        sq = (coords * coords).sum(axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (coords @ coords.T), 0.0)
        d = np.sqrt(d2)
    d[np.arange(n), np.arange(n)] = 0.0
    return 0.5 * (d + d.T)


def _mobius_add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xy = float(np.dot(x, y))
    xx = float(np.dot(x, x))
    yy = float(np.dot(y, y))
    num = (1.0 + 2.0 * xy + yy) * x + (1.0 - xx) * y
    return num / (1.0 + 2.0 * xy + xx * yy)


def random_points(m: ManifoldKind, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly-directed random points, rows on the manifold."""
    v = rng.normal(size=(n, m.dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    if m.kind == HYPERSPHERE:
        return v
    if m.kind == POINCARE_BALL:
        radii = rng.uniform(0.0, 1.0 - m.boundary_margin, size=(n, 1)) * rng.uniform(
            0.3, 1.0, size=(n, 1)
        )
        return v * radii
    return v * rng.uniform(0.0, 2.0, size=(n, 1))


# ---------------------------------------------------------------------------
# graph level (rows of a Tensor are points)


def project_rows(m: ManifoldKind, z: Tensor) -> Tensor:
    """Row-wise projection inside the gradient graph."""
    if m.kind == HYPERSPHERE:
        norms = ops.norm(z, axis=1, keepdims=True)
        if np.any(norms.data < 1e-12):
            raise DegenerateInputError("cannot project ~zero row to the hypersphere")
        return ops.div(z, norms)
    if m.kind == POINCARE_BALL:
        norms = ops.norm(z, axis=1, keepdims=True)
        limit = 1.0 - m.boundary_margin
        scale = ops.clip(ops.div(float(limit), ops.clip(norms, 1e-300, None)), None, 1.0)
        return ops.mul(z, scale)
    return z


def pairwise_geodesic_rows(m: ManifoldKind, z: Tensor) -> Tensor:
    """Differentiable pairwise distance matrix; diagonal masked to exact zero.

    The self-distance is identically zero with zero derivative along the
    manifold, so the diagonal is excluded from the graph rather than pushed
    through arccos/arcosh at their domain boundary.
    """
    n = z.shape[0]
    off_diag = Tensor(1.0 - np.eye(n))
    if m.kind == HYPERSPHERE:
        gram = ops.matmul(z, ops.transpose(z))
        d = ops.arccos(ops.clip(gram, -1.0 + _DOMAIN_PAD, 1.0 - _DOMAIN_PAD))
        return ops.mul(d, off_diag)
    if m.kind == POINCARE_BALL:
        sq = ops.sum_(ops.square(z), axis=1, keepdims=True)
        d2 = _pairwise_sq_dist(z, sq)
        denom = ops.mul(
            ops.sub(1.0, sq), ops.transpose(ops.sub(1.0, sq))
        )
        arg = ops.add(1.0, ops.div(ops.mul(2.0, d2), denom))
        d = _arccosh(ops.clip(arg, 1.0 + _DOMAIN_PAD, None))
        return ops.mul(d, off_diag)
    sq = ops.sum_(ops.square(z), axis=1, keepdims=True)
    d2 = _pairwise_sq_dist(z, sq)
    d = ops.sqrt(ops.clip(d2, _DOMAIN_PAD, None))
    return ops.mul(d, off_diag)


def rowwise_geodesic(m: ManifoldKind, a: Tensor, b: Tensor) -> Tensor:
    """Distance between matched rows of two point batches, as an (n, 1) tensor."""
    if m.kind == HYPERSPHERE:
        dot = ops.sum_(ops.mul(a, b), axis=1, keepdims=True)
        return ops.arccos(ops.clip(dot, -1.0 + _DOMAIN_PAD, 1.0 - _DOMAIN_PAD))
    if m.kind == POINCARE_BALL:
        d2 = ops.sum_(ops.square(ops.sub(a, b)), axis=1, keepdims=True)
        sa = ops.sum_(ops.square(a), axis=1, keepdims=True)
        sb = ops.sum_(ops.square(b), axis=1, keepdims=True)
        arg = ops.add(1.0, ops.div(ops.mul(2.0, d2), ops.mul(ops.sub(1.0, sa), ops.sub(1.0, sb))))
        return _arccosh(ops.clip(arg, 1.0 + _DOMAIN_PAD, None))
    return ops.norm(ops.sub(a, b), axis=1, keepdims=True)


def _pairwise_sq_dist(z: Tensor, sq: Tensor) -> Tensor:
    gram = ops.matmul(z, ops.transpose(z))
    d2 = ops.sub(ops.add(sq, ops.transpose(sq)), ops.mul(2.0, gram))
    return ops.clip(d2, 0.0, None)


def _arccosh(w: Tensor) -> Tensor:
    return ops.log(ops.add(w, ops.sqrt(ops.sub(ops.square(w), 1.0))))
