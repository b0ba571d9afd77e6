"""Variational encoder/decoder over temporal patches with manifold-constrained
latent sampling.

A (C, T) segment is split into P non-overlapping patches; each flattened patch
runs through a shared trunk and separate mean / log-variance heads, giving a
sequence of P latent tokens per segment. Sampling perturbs the mean with
scaled Gaussian noise and projects the result onto the latent manifold, so
gradients flow through the noise path and the projection alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import manifold as mf
from . import ops
from .errors import UsageError
from .layers import Linear, Mlp, collect_params
from .tensor import Tensor

LOG_VAR_RANGE = 10.0  # log-variance clamp, keeps exp() sane


@dataclass
class VAEConfig:
    latent_dim: int = 128
    hidden: tuple[int, ...] = (512, 256)
    patch_len: int = 100
    kl_weight: float = 1e-3

    def __post_init__(self):
        if self.latent_dim < 2:
            raise UsageError(f"latent_dim must be >= 2, got {self.latent_dim}")
        if not self.hidden:
            raise UsageError("encoder hidden widths must be nonempty")
        if self.patch_len < 1:
            raise UsageError("patch_len must be positive")


def n_patches(cfg: VAEConfig, n_samples: int) -> int:
    if n_samples % cfg.patch_len != 0:
        raise UsageError(
            f"segment length {n_samples} not divisible by patch length {cfg.patch_len}"
        )
    return n_samples // cfg.patch_len


def patchify(x: np.ndarray, patch_len: int) -> np.ndarray:
    """(B, C, T) -> (B*P, C*patch_len), patches in time order within each segment."""
    b, c, t = x.shape
    p = t // patch_len
    return (
        x.reshape(b, c, p, patch_len).transpose(0, 2, 1, 3).reshape(b * p, c * patch_len)
    )


def unpatchify_graph(x: Tensor, b: int, c: int, patch_len: int) -> Tensor:
    """Inverse of patchify inside the graph: (B*P, C*patch_len) -> (B, C, T)."""
    p = x.shape[0] // b
    x = ops.reshape(x, (b, p, c, patch_len))
    x = ops.transpose(x, (0, 2, 1, 3))
    return ops.reshape(x, (b, c, p * patch_len))


class VaeEncoder:
    """Shared trunk feeding separate mean and log-variance heads."""

    def __init__(self, cfg: VAEConfig, in_dim: int, rng):
        self.cfg = cfg
        self.trunk = Mlp("vae.enc.trunk", [in_dim] + list(cfg.hidden), rng)
        self.mu_head = Linear("vae.enc.mu", cfg.hidden[-1], cfg.latent_dim, rng)
        self.logvar_head = Linear("vae.enc.logvar", cfg.hidden[-1], cfg.latent_dim, rng)

    def __call__(self, patches: Tensor) -> tuple[Tensor, Tensor]:
        h = ops.gelu(self.trunk(patches))
        mu = self.mu_head(h)
        log_var = ops.clip(self.logvar_head(h), -LOG_VAR_RANGE, LOG_VAR_RANGE)
        return mu, log_var

    def params(self):
        return collect_params(self.trunk, self.mu_head, self.logvar_head)


class VaeDecoder:
    """Mirror of the encoder: latent token -> flattened patch."""

    def __init__(self, cfg: VAEConfig, out_dim: int, rng):
        self.cfg = cfg
        dims = [cfg.latent_dim] + list(reversed(cfg.hidden)) + [out_dim]
        self.net = Mlp("vae.dec", dims, rng)

    def __call__(self, z: Tensor) -> Tensor:
        return self.net(z)

    def params(self):
        return self.net.params()


def reparameterize(mu: Tensor, log_var: Tensor, eps: np.ndarray | None,
                   m: mf.ManifoldKind) -> Tensor:
    """Project mu + eps * exp(log_var / 2) onto the manifold; eps=None means
    deterministic inference (exactly the projected mean)."""
    if eps is None:
        return mf.project_rows(m, mu)
    scale = ops.exp(ops.mul(log_var, 0.5))
    return mf.project_rows(m, ops.add(mu, ops.mul(Tensor(eps), scale)))


def kl_standard_normal(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL( N(mu, diag(exp(log_var))) || N(0, I) ), summed over all rows and dims."""
    term = ops.sub(ops.add(ops.exp(log_var), ops.square(mu)), ops.add(1.0, log_var))
    return ops.mul(0.5, ops.sum_(term))


def vae_loss(x: Tensor, x_hat: Tensor, mu: Tensor, log_var: Tensor,
             gamma: float, batch_size: int) -> Tensor:
    """Mean-squared reconstruction error plus gamma * KL (summed over patches,
    averaged over the batch)."""
    recon = ops.mean_(ops.square(ops.sub(x_hat, x)))
    if gamma == 0.0:
        return recon
    return ops.add(recon, ops.mul(gamma / batch_size, kl_standard_normal(mu, log_var)))
