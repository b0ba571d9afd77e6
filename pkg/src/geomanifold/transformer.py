"""Attention with a geodesic-distance penalty and a gated mixture-of-experts
feed-forward.

Attention logits are scaled dot products minus lam * D where D holds pairwise
geodesic distances between the tokens' manifold images; lam = 0 recovers
standard attention exactly. Token latents are produced per layer by a learned
linear map into the latent dimension followed by projection, which keeps the
distance penalty differentiable end to end. No positional encoding is added,
so the stack is permutation-equivariant; order information enters downstream
through the dynamics module's time features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import manifold as mf
from . import ops
from .errors import UsageError
from .layers import LayerNormParams, Linear, Mlp, collect_params
from .tensor import Tensor


@dataclass
class AttentionConfig:
    n_layers: int = 8
    model_dim: int = 256
    n_heads: int = 4
    geo_weight: float = 0.5

    def __post_init__(self):
        if self.model_dim % self.n_heads != 0:
            raise UsageError(
                f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.geo_weight < 0:
            raise UsageError(f"geodesic penalty weight must be >= 0, got {self.geo_weight}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads


@dataclass
class MoEConfig:
    n_experts: int = 4
    expert_kinds: tuple[str, ...] = ("swiglu", "geglu", "swiglu", "geglu")
    hidden_dim: int = 512
    top_k: int = 1

    def __post_init__(self):
        if self.n_experts < 2:
            raise UsageError(f"need at least 2 experts, got {self.n_experts}")
        if len(self.expert_kinds) != self.n_experts:
            raise UsageError("expert_kinds length must equal n_experts")
        for kind in self.expert_kinds:
            if kind not in ("swiglu", "geglu"):
                raise UsageError(f"unknown expert kind '{kind}'")
        if self.n_experts >= 2 and {"swiglu", "geglu"} - set(self.expert_kinds):
            raise UsageError("expert mix must include both swiglu and geglu kinds")
        if not (1 <= self.top_k <= self.n_experts):
            raise UsageError(f"top_k must be in [1, n_experts], got {self.top_k}")


def attention_core(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                   bias=None) -> tuple[Tensor, list[Tensor]]:
    """Multi-head scaled dot-product attention with an optional additive logit
    bias (geodesic penalty and/or masks). Returns (output, per-head weights)."""
    n, dim = q.shape
    if k.shape != q.shape or v.shape[0] != n:
        raise UsageError(f"attention operand shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    head_dim = dim // n_heads
    outs, weights = [], []
    for h in range(n_heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        scores = ops.mul(ops.matmul(qh, ops.transpose(kh)), 1.0 / np.sqrt(head_dim))
        if bias is not None:
            scores = ops.add(scores, bias)
        w = ops.softmax_rows(scores)
        weights.append(w)
        outs.append(ops.matmul(w, vh))
    return ops.concat(outs, axis=1) if n_heads > 1 else outs[0], weights


def geodesic_attention(q: Tensor, k: Tensor, v: Tensor, z_points: Tensor,
                       m: mf.ManifoldKind, lam: float, n_heads: int = 1,
                       mask: np.ndarray | None = None) -> tuple[Tensor, list[Tensor]]:
    """Attention penalized by pairwise geodesic distances between token latents.

    `z_points` holds the tokens' manifold images as rows; lam scales the
    penalty. An optional additive mask (e.g. block-diagonal or causal) is
    folded into the same logit bias.
    """
    if lam < 0:
        raise UsageError(f"geodesic penalty weight must be >= 0, got {lam}")
    bias = None
    if lam > 0:
        d_geo = mf.pairwise_geodesic_rows(m, z_points)
        bias = ops.mul(d_geo, -lam)
    if mask is not None:
        bias = Tensor(mask) if bias is None else ops.add(bias, Tensor(mask))
    return attention_core(q, k, v, n_heads, bias)


class GatedExpert:
    """Gated feed-forward unit: (act(x W1) * (x W2)) W3, act in {silu, gelu}."""

    def __init__(self, name: str, dim: int, hidden: int, kind: str, rng):
        self.kind = kind
        self.gate = Linear(f"{name}.gate", dim, hidden, rng, bias=False)
        self.value = Linear(f"{name}.value", dim, hidden, rng, bias=False)
        self.out = Linear(f"{name}.out", hidden, dim, rng, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        act = ops.silu if self.kind == "swiglu" else ops.gelu
        return self.out(ops.mul(act(self.gate(x)), self.value(x)))

    def params(self):
        return collect_params(self.gate, self.value, self.out)


class MoeFfn:
    """Router (linear + softmax) over gated experts, top-k with renormalization.

    Expert selection is a detached decision; gradients flow through the
    renormalized routing weights of the selected experts only.
    """

    def __init__(self, name: str, dim: int, cfg: MoEConfig, rng):
        self.cfg = cfg
        self.router = Linear(f"{name}.router", dim, cfg.n_experts, rng)
        self.experts = [
            GatedExpert(f"{name}.expert{i}", dim, cfg.hidden_dim, kind, rng)
            for i, kind in enumerate(cfg.expert_kinds)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        probs = ops.softmax_rows(self.router(x))
        if self.cfg.top_k >= self.cfg.n_experts:
            selected = np.ones_like(probs.data)
        else:
            # stable top-k: ties resolved by expert index
            order = np.argsort(-probs.data, axis=1, kind="stable")
            selected = np.zeros_like(probs.data)
            rows = np.arange(probs.data.shape[0])[:, None]
            selected[rows, order[:, : self.cfg.top_k]] = 1.0
        gated = ops.mul(probs, Tensor(selected))
        denom = ops.sum_(gated, axis=1, keepdims=True)
        out = None
        for i, expert in enumerate(self.experts):
            if not selected[:, i].any():
                continue
            weight = ops.div(gated[:, i : i + 1], denom)
            term = ops.mul(expert(x), weight)
            out = term if out is None else ops.add(out, term)
        return out

    def params(self):
        return collect_params(self.router, *self.experts)


class DenseFfn:
    """Plain two-layer GELU feed-forward (the non-MoE ablation)."""

    def __init__(self, name: str, dim: int, hidden: int, rng):
        self.net = Mlp(name, [dim, hidden, dim], rng, activation="gelu")

    def __call__(self, x: Tensor) -> Tensor:
        return self.net(x)

    def params(self):
        return self.net.params()


class TransformerLayer:
    """Pre-norm residual block: attention (optionally geodesic) then feed-forward."""

    def __init__(self, name: str, cfg: AttentionConfig, moe_cfg: MoEConfig,
                 latent_dim: int, rng, use_geo: bool = True, use_moe: bool = True):
        dim = cfg.model_dim
        self.cfg = cfg
        self.use_geo = use_geo
        self.ln1 = LayerNormParams(f"{name}.ln1", dim)
        self.wq = Linear(f"{name}.wq", dim, dim, rng, bias=False)
        self.wk = Linear(f"{name}.wk", dim, dim, rng, bias=False)
        self.wv = Linear(f"{name}.wv", dim, dim, rng, bias=False)
        self.wo = Linear(f"{name}.wo", dim, dim, rng, bias=False)
        self.geo_map = Linear(f"{name}.geo", dim, latent_dim, rng) if use_geo else None
        self.ln2 = LayerNormParams(f"{name}.ln2", dim)
        if use_moe:
            self.ffn = MoeFfn(f"{name}.moe", dim, moe_cfg, rng)
        else:
            self.ffn = DenseFfn(f"{name}.ffn", dim, moe_cfg.hidden_dim, rng)

    def __call__(self, x: Tensor, m: mf.ManifoldKind, lam: float,
                 mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        if self.use_geo and lam > 0:
            z = mf.project_rows(m, self.geo_map(h))
            attn, _ = geodesic_attention(
                self.wq(h), self.wk(h), self.wv(h), z, m, lam, self.cfg.n_heads, mask
            )
        else:
            bias = None if mask is None else Tensor(mask)
            attn, _ = attention_core(
                self.wq(h), self.wk(h), self.wv(h), self.cfg.n_heads, bias
            )
        x = ops.add(x, self.wo(attn))
        x = ops.add(x, self.ffn(self.ln2(x)))
        return x

    def params(self):
        parts = [self.ln1, self.wq, self.wk, self.wv, self.wo, self.ln2, self.ffn]
        if self.geo_map is not None:
            parts.append(self.geo_map)
        return collect_params(*parts)


class GeoTransformer:
    """Stack of pre-norm layers; 0 layers is the identity."""

    def __init__(self, cfg: AttentionConfig, moe_cfg: MoEConfig, latent_dim: int, rng,
                 use_geo: bool = True, use_moe: bool = True, name: str = "tf"):
        self.cfg = cfg
        self.layers = [
            TransformerLayer(f"{name}.layer{i}", cfg, moe_cfg, latent_dim, rng,
                             use_geo=use_geo, use_moe=use_moe)
            for i in range(cfg.n_layers)
        ]

    def __call__(self, tokens: Tensor, m: mf.ManifoldKind,
                 mask: np.ndarray | None = None, lam: float | None = None) -> Tensor:
        lam = self.cfg.geo_weight if lam is None else lam
        for layer in self.layers:
            tokens = layer(tokens, m, lam, mask)
        return tokens

    def params(self):
        return collect_params(*self.layers)


def block_diagonal_mask(n_blocks: int, block: int) -> np.ndarray:
    """Additive mask forbidding attention across segment boundaries."""
    n = n_blocks * block
    mask = np.full((n, n), -1e9)
    for b in range(n_blocks):
        mask[b * block : (b + 1) * block, b * block : (b + 1) * block] = 0.0
    return mask


def causal_block_mask(n_blocks: int, block: int) -> np.ndarray:
    """Block-diagonal plus causal-within-block additive mask."""
    mask = block_diagonal_mask(n_blocks, block)
    tri = np.triu(np.full((block, block), -1e9), k=1)
    for b in range(n_blocks):
        mask[b * block : (b + 1) * block, b * block : (b + 1) * block] += tri
    return mask
