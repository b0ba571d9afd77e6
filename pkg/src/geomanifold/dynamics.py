"""Latent dynamics: adaptive Dormand-Prince integration of a learned vector
field with manifold projection, plus prefix encoders and state fusion.

The integrator differentiates through its own arithmetic (discretize, then
differentiate): step-size control reads detached values, so only the accepted
step sequence enters the gradient graph. After every accepted step, and at the
endpoint, the state is projected back onto the manifold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import manifold as mf
from . import ops
from .errors import DivergenceError, UsageError
from .layers import Linear, Mlp, collect_params
from .tensor import Tensor

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_ERR = _DP_B5 - _DP_B4

_STEP_SHRINK = 0.2
_STEP_GROW = 5.0


@dataclass
class SolverConfig:
    rtol: float = 1e-5
    atol: float = 1e-6
    h0: float | None = None  # initial step; None means the full interval
    max_steps: int = 500
    safety: float = 0.9

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise UsageError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise UsageError("max_steps must be >= 1")


class FourierTimeContext:
    """Interleaved [sin, cos] features at octave-spaced frequencies of t."""

    def __init__(self, n_freqs: int = 4, base_freq: float = 1.0):
        if n_freqs < 1:
            raise UsageError(f"need at least one frequency, got {n_freqs}")
        self.n_freqs = n_freqs
        self.base_freq = base_freq

    @property
    def dim(self) -> int:
        return 2 * self.n_freqs

    def features(self, t) -> np.ndarray:
        """t scalar -> (2F,); t vector (n,) -> (n, 2F)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.empty((t_arr.size, 2 * self.n_freqs))
        for k in range(self.n_freqs):
            angle = 2.0 * np.pi * self.base_freq * (2.0**k) * t_arr
            out[:, 2 * k] = np.sin(angle)
            out[:, 2 * k + 1] = np.cos(angle)
        return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out


def context_features(t: float, n_freqs: int, base_freq: float) -> np.ndarray:
    return FourierTimeContext(n_freqs, base_freq).features(t)


class DynamicsField:
    """Perceptron from (state, time context) to a tangent vector of the same
    dimension as the state."""

    def __init__(self, latent_dim: int, hidden: tuple[int, ...], context: FourierTimeContext,
                 rng, name: str = "dyn.field"):
        self.latent_dim = latent_dim
        self.context = context
        dims = [latent_dim + context.dim] + list(hidden) + [latent_dim]
        self.net = Mlp(name, dims, rng, activation="tanh")

    def __call__(self, z: Tensor, t) -> Tensor:
        ctx = self.context.features(np.broadcast_to(np.asarray(t, float), (z.shape[0],)))
        return self.net(ops.concat([z, Tensor(ctx)], axis=1))

    def params(self):
        return self.net.params()


def _dp_stages(f, y: Tensor, t, h: float) -> list[Tensor]:
    ks = []
    for i in range(7):
        yi = y
        for j, a in enumerate(_DP_A[i]):
            if a != 0.0:
                yi = ops.add(yi, ops.mul(ks[j], a * h))
        ks.append(f(yi, t + _DP_C[i] * h))
    return ks


def _combine(y: Tensor, ks: list[Tensor], coeffs: np.ndarray, h: float) -> Tensor:
    out = y
    for k, c in zip(ks, coeffs):
        if c != 0.0:
            out = ops.add(out, ops.mul(k, c * h))
    return out


def dopri5(f, y0: Tensor, t0: float, t1: float, cfg: SolverConfig,
           project=None, t_offsets: np.ndarray | None = None) -> Tensor:
    """Adaptive 5(4) integration of dy/dt = f(y, t) from t0 to t1.

    `f` maps (state Tensor, time) to a Tensor of the same shape; when
    `t_offsets` is given, rows of the state evolve at per-row times
    t + t_offsets (shared step schedule, error pooled over all rows).
    `project` re-constrains the state after each accepted step.
    """
    if not t1 > t0:
        raise UsageError(f"need t1 > t0, got {t0} -> {t1}")

    def eval_f(y, t_local):
        t_eval = t_local if t_offsets is None else t_offsets + t_local
        return f(y, t_eval)

    t = t0
    y = y0
    h = cfg.h0 if cfg.h0 is not None else (t1 - t0)
    attempts = 0
    while t < t1 - 1e-14:
        h = min(h, t1 - t)
        if attempts >= cfg.max_steps:
            raise DivergenceError(
                f"exceeded {cfg.max_steps} step attempts", t_reached=t
            )
        attempts += 1
        ks = _dp_stages(eval_f, y, t, h)
        y5 = _combine(y, ks, _DP_B5, h)
        err_vec = _combine(Tensor(np.zeros_like(y.data)), ks, _DP_ERR, h)
        err = float(np.sqrt((err_vec.data**2).sum()))
        y_norm = float(np.sqrt((y.data**2).sum()))
        y5_norm = float(np.sqrt((y5.data**2).sum()))
        tol = cfg.atol + cfg.rtol * max(y_norm, y5_norm)
        ratio = err / tol if tol > 0 else np.inf
        if ratio <= 1.0:
            t = t + h
            y = y5 if project is None else project(y5)
        factor = _STEP_GROW if ratio == 0.0 else cfg.safety * ratio ** (-0.2)
        h = h * min(max(factor, _STEP_SHRINK), _STEP_GROW)
    return y


def dopri5_fixed(f, y0: Tensor, t0: float, t1: float, n_steps: int,
                 project=None, t_offsets: np.ndarray | None = None) -> Tensor:
    """Fixed-step variant (5th-order solution only), for convergence studies."""

    def eval_f(y, t_local):
        t_eval = t_local if t_offsets is None else t_offsets + t_local
        return f(y, t_eval)

    h = (t1 - t0) / n_steps
    y = y0
    for i in range(n_steps):
        t = t0 + i * h
        ks = _dp_stages(eval_f, y, t, h)
        y = _combine(y, ks, _DP_B5, h)
        if project is not None:
            y = project(y)
    return y


def dopri5_integrate(field, z0: mf.ManifoldPoint, t0: float, t1: float,
                     cfg: SolverConfig) -> mf.ManifoldPoint:
    """Single-trajectory surface over the batched core; returns a point on the
    same manifold (projected after accepted steps and at the endpoint)."""
    m = z0.manifold
    y0 = Tensor(z0.coords[None, :])
    out = dopri5(field, y0, t0, t1, cfg, project=lambda y: mf.project_rows(m, y))
    return mf.project(m, out.data[0])


class CausalSummaryEncoder:
    """Two pre-norm causal attention layers plus feed-forward; output at each
    position depends only on that position's prefix."""

    def __init__(self, dim: int, rng, n_layers: int = 2, name: str = "dyn.causal"):
        from .layers import LayerNormParams

        self.dim = dim
        self.blocks = []
        for i in range(n_layers):
            base = f"{name}.layer{i}"
            self.blocks.append(
                {
                    "ln1": LayerNormParams(f"{base}.ln1", dim),
                    "wq": Linear(f"{base}.wq", dim, dim, rng, bias=False),
                    "wk": Linear(f"{base}.wk", dim, dim, rng, bias=False),
                    "wv": Linear(f"{base}.wv", dim, dim, rng, bias=False),
                    "ln2": LayerNormParams(f"{base}.ln2", dim),
                    "ffn": Mlp(f"{base}.ffn", [dim, 2 * dim, dim], rng, activation="gelu"),
                }
            )

    def __call__(self, tokens: Tensor, mask: np.ndarray) -> Tensor:
        """`mask` must be causal (and may also be block-diagonal for batching)."""
        from .transformer import attention_core

        x = tokens
        for blk in self.blocks:
            h = blk["ln1"](x)
            attn, _ = attention_core(blk["wq"](h), blk["wk"](h), blk["wv"](h), 1, Tensor(mask))
            x = ops.add(x, attn)
            x = ops.add(x, blk["ffn"](blk["ln2"](x)))
        return x

    def summarize(self, sequence: Tensor) -> Tensor:
        """Spec surface: summary of a single (T, dim) prefix = last-position output."""
        n = sequence.shape[0]
        from .transformer import causal_block_mask

        out = self(sequence, causal_block_mask(1, n))
        return out[n - 1 : n, :]

    def params(self):
        out = {}
        for blk in self.blocks:
            for part in blk.values():
                out.update(part.params())
        return out


class BiRecurrentEncoder:
    """LSTM cell run over the sequence forward and backward with shared weights;
    the summary concatenates the two final hidden states."""

    def __init__(self, in_dim: int, hidden_dim: int, rng, name: str = "dyn.lstm"):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.wx = Linear(f"{name}.wx", in_dim, 4 * hidden_dim, rng, bias=False)
        self.wh = Linear(f"{name}.wh", hidden_dim, 4 * hidden_dim, rng, bias=False)
        self.b = Tensor(np.zeros((1, 4 * hidden_dim)), requires_grad=True)
        self._bias_name = f"{name}.b"

    def _cell(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        gates = ops.add(ops.add(self.wx(x), self.wh(h)), self.b)
        hd = self.hidden_dim
        i = ops.sigmoid(gates[:, 0 * hd : 1 * hd])
        f = ops.sigmoid(gates[:, 1 * hd : 2 * hd])
        g = ops.tanh(gates[:, 2 * hd : 3 * hd])
        o = ops.sigmoid(gates[:, 3 * hd : 4 * hd])
        c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
        h_new = ops.mul(o, ops.tanh(c_new))
        return h_new, c_new

    def _run(self, steps: list[Tensor]) -> Tensor:
        batch = steps[0].shape[0]
        h = Tensor(np.zeros((batch, self.hidden_dim)))
        c = Tensor(np.zeros((batch, self.hidden_dim)))
        for x in steps:
            h, c = self._cell(x, h, c)
        return h

    def summarize_steps(self, steps: list[Tensor]) -> Tensor:
        """steps: list of (batch, in_dim) tensors in time order."""
        fwd = self._run(steps)
        bwd = self._run(list(reversed(steps)))
        return ops.concat([fwd, bwd], axis=1)

    def summarize(self, sequence: Tensor) -> Tensor:
        """Spec surface for one (T, in_dim) sequence -> (1, 2*hidden)."""
        steps = [sequence[t : t + 1, :] for t in range(sequence.shape[0])]
        return self.summarize_steps(steps)

    def params(self):
        out = collect_params(self.wx, self.wh)
        out[self._bias_name] = self.b
        return out


class FusionHead:
    """Concatenate [ode state, causal summary, recurrent summary], map back to
    the latent dimension, and project onto the manifold."""

    def __init__(self, latent_dim: int, causal_dim: int, lstm_dim: int, rng,
                 name: str = "dyn.fuse"):
        self.latent_dim = latent_dim
        self.lin = Linear(name, latent_dim + causal_dim + 2 * lstm_dim, latent_dim, rng)

    def __call__(self, z_ode: Tensor, tf_summary: Tensor, lstm_summary: Tensor,
                 m: mf.ManifoldKind) -> Tensor:
        fused = ops.concat([z_ode, tf_summary, lstm_summary], axis=1)
        return mf.project_rows(m, self.lin(fused))

    def params(self):
        return self.lin.params()
