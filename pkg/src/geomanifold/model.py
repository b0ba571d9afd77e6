"""Full model assembly: variational patch encoder, geodesic transformer over
latent tokens, ODE dynamics with fused summaries, and a linear classifier on
pooled fused states.

Row layout conventions: patch tokens live in (batch * P, dim) tensors with the
patch index minor (row b*P + t); dynamics rows are transition-major (row
t*batch + b for the step t -> t+1). Every component draws its initial weights
from its own named stream, so ablated variants share initializations for the
components they keep.
"""

from __future__ import annotations

import numpy as np

from . import manifold as mf
from . import ops
from .config import TrainConfig
from .dynamics import (
    BiRecurrentEncoder,
    CausalSummaryEncoder,
    DynamicsField,
    FourierTimeContext,
    FusionHead,
    dopri5,
)
from .errors import UsageError
from .layers import Linear
from .rng import RngHub
from .rvae import VaeDecoder, VaeEncoder, n_patches, patchify, reparameterize
from .tensor import Tensor
from .transformer import GeoTransformer, block_diagonal_mask, causal_block_mask


class SequenceModel:
    """Everything trainable, plus the forward passes the stages compose."""

    def __init__(self, cfg: TrainConfig, n_channels: int, n_samples: int, hub: RngHub):
        cfg.model_n_channels = n_channels
        cfg.model_n_samples = n_samples
        self.cfg = cfg
        self.manifold = cfg.manifold()
        self.vae_cfg = cfg.vae()
        self.n_channels = n_channels
        self.n_samples = n_samples
        self.n_patches = n_patches(self.vae_cfg, n_samples)
        self.patch_dim = n_channels * self.vae_cfg.patch_len
        d = self.vae_cfg.latent_dim

        self.encoder = VaeEncoder(self.vae_cfg, self.patch_dim, hub.get("init.vae.enc"))
        self.decoder = VaeDecoder(self.vae_cfg, self.patch_dim, hub.get("init.vae.dec"))

        att = cfg.attention()
        self.embed = Linear("embed", d, att.model_dim, hub.get("init.embed"))
        self.transformer = GeoTransformer(
            att,
            cfg.moe(),
            latent_dim=d,
            rng=hub.get("init.tf"),
            use_geo=not cfg.ablate_geo_transformer,
            use_moe=not cfg.ablate_geo_transformer,
        )
        self.readout = Linear("readout", att.model_dim, d, hub.get("init.readout"))

        self.use_dynamics = not cfg.ablate_dynamics
        if self.use_dynamics:
            ctx = FourierTimeContext(cfg.dyn_fourier_freqs, cfg.dyn_fourier_base)
            self.field = DynamicsField(d, cfg.dyn_hidden, ctx, hub.get("init.dyn.field"))
            self.causal = CausalSummaryEncoder(d, hub.get("init.dyn.causal"))
            lstm_hidden = cfg.dyn_lstm_hidden or d
            self.lstm = BiRecurrentEncoder(d, lstm_hidden, hub.get("init.dyn.lstm"))
            self.fusion = FusionHead(d, d, lstm_hidden, hub.get("init.dyn.fuse"))
        self.solver = cfg.solver()
        # token times: patch start instants at the preprocessed rate
        self.token_dt = self.vae_cfg.patch_len / cfg.prep_rate_hz

        self.head: Linear | None = None
        self._head_rng = hub.get("init.head")
        if cfg.model_n_classes > 0:
            self.ensure_head(cfg.model_n_classes)

    # --- parameters ---------------------------------------------------------

    def ensure_head(self, n_classes: int):
        if n_classes < 2:
            raise UsageError(f"need at least 2 classes, got {n_classes}")
        if self.head is None:
            self.head = Linear("head", self.vae_cfg.latent_dim, n_classes, self._head_rng)
            self.cfg.model_n_classes = n_classes
        elif self.head.w.shape[1] != n_classes:
            raise UsageError(
                f"weights were trained for {self.head.w.shape[1]} classes, data has {n_classes}"
            )

    def components(self) -> dict[str, dict[str, Tensor]]:
        out = {
            "encoder": self.encoder.params(),
            "decoder": self.decoder.params(),
            "embed": self.embed.params(),
            "transformer": self.transformer.params(),
            "readout": self.readout.params(),
        }
        if self.use_dynamics:
            out["dynamics"] = {
                **self.field.params(),
                **self.causal.params(),
                **self.lstm.params(),
                **self.fusion.params(),
            }
        if self.head is not None:
            out["head"] = self.head.params()
        return out

    def params(self) -> dict[str, Tensor]:
        flat: dict[str, Tensor] = {}
        for group in self.components().values():
            for name, tensor in group.items():
                if name in flat:
                    raise UsageError(f"duplicate parameter name '{name}'")
                flat[name] = tensor
        return flat

    def set_trainable(self, frozen_prefixes=()):
        for name, p in self.params().items():
            p.requires_grad = not any(name.startswith(pre) for pre in frozen_prefixes)

    # --- forward pieces -------------------------------------------------------

    def encode(self, x: np.ndarray, eps: np.ndarray | None):
        """x: (B, C, T) float. Returns (patches, mu, log_var, z) with token rows
        (B * P, .); eps=None gives the deterministic projected mean."""
        patches = patchify(x, self.vae_cfg.patch_len)
        patches_t = Tensor(patches)
        mu, log_var = self.encoder(patches_t)
        z = reparameterize(mu, log_var, eps, self.manifold)
        return patches_t, mu, log_var, z

    def transform(self, z: Tensor, batch: int) -> Tensor:
        """Latent tokens -> refined latent tokens on the manifold."""
        mask = None
        if batch > 1:
            mask = block_diagonal_mask(batch, self.n_patches)
        tokens = self.embed(z)
        tokens = self.transformer(tokens, self.manifold, mask=mask)
        return mf.project_rows(self.manifold, self.readout(tokens))

    def token_blocks(self, tokens: Tensor, batch: int) -> list[Tensor]:
        """Split (B*P, d) token rows into per-position blocks [(B, d)] * P."""
        d = tokens.shape[1]
        cube = ops.reshape(tokens, (batch, self.n_patches, d))
        return [
            ops.reshape(cube[:, t, :], (batch, d)) for t in range(self.n_patches)
        ]

    def dynamics_forward(self, z_tilde: Tensor, targets: Tensor, batch: int):
        """Predict each next latent from its prefix; returns (fused, matched
        targets), both transition-major (B*(P-1), d)."""
        p = self.n_patches
        blocks = self.token_blocks(z_tilde, batch)
        target_blocks = self.token_blocks(targets, batch)

        # ODE evolution of every transition at once; rows share the local step
        # schedule but feel their own absolute time
        starts = ops.concat(blocks[: p - 1], axis=0)
        t_offsets = np.repeat(np.arange(p - 1) * self.token_dt, batch)
        z_ode = dopri5(
            self.field,
            starts,
            0.0,
            self.token_dt,
            self.solver,
            project=lambda y: mf.project_rows(self.manifold, y),
            t_offsets=t_offsets,
        )

        # causal prefix summaries from one masked pass: position t attends to <= t
        causal_out = self.causal(z_tilde, causal_block_mask(batch, p))
        causal_blocks = self.token_blocks(causal_out, batch)
        tf_summary = ops.concat(causal_blocks[: p - 1], axis=0)

        # bidirectional recurrent prefix summaries, one prefix end at a time
        lstm_parts = [self.lstm.summarize_steps(blocks[: t + 1]) for t in range(p - 1)]
        lstm_summary = ops.concat(lstm_parts, axis=0)

        fused = self.fusion(z_ode, tf_summary, lstm_summary, self.manifold)
        matched = ops.concat(target_blocks[1:], axis=0)
        return fused, matched

    def pooled_features(self, z_tilde: Tensor, batch: int,
                        fused: Tensor | None = None) -> Tensor:
        """Mean-pooled per-segment features feeding the classifier head."""
        if fused is not None:
            d = fused.shape[1]
            cube = ops.reshape(fused, (self.n_patches - 1, batch, d))
            return ops.mean_(ops.transpose(cube, (1, 0, 2)), axis=1)
        d = z_tilde.shape[1]
        cube = ops.reshape(z_tilde, (batch, self.n_patches, d))
        return ops.mean_(cube, axis=1)

    def forward_features(self, x: np.ndarray, align_map=None) -> Tensor:
        """Deterministic features for classification (no sampling)."""
        batch = x.shape[0]
        _, _, _, z = self.encode(x, None)
        if align_map is not None:
            from .losses import apply_alignment

            z = Tensor(apply_alignment(align_map, z.data, self.manifold))
        z_tilde = self.transform(z, batch)
        if self.use_dynamics:
            fused, _ = self.dynamics_forward(z_tilde, z, batch)
            return self.pooled_features(z_tilde, batch, fused)
        return self.pooled_features(z_tilde, batch)

    def predict_logits(self, x: np.ndarray, align_map=None) -> np.ndarray:
        if self.head is None:
            raise UsageError("model has no classification head; run the finetune stage")
        return self.head(self.forward_features(x, align_map)).data

    def latent_tokens(self, x: np.ndarray) -> np.ndarray:
        """Deterministic per-patch latents, shape (B, P, d)."""
        batch = x.shape[0]
        _, _, _, z = self.encode(x, None)
        return z.data.reshape(batch, self.n_patches, -1)

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """Decode the deterministic latents back to (B, C, T) signals."""
        from .rvae import unpatchify_graph

        batch = x.shape[0]
        _, _, _, z = self.encode(x, None)
        x_hat = self.decoder(z)
        return unpatchify_graph(
            x_hat, batch, self.n_channels, self.vae_cfg.patch_len
        ).data


def build_model(cfg: TrainConfig, n_channels: int, n_samples: int) -> SequenceModel:
    return SequenceModel(cfg, n_channels, n_samples, RngHub(cfg.seed))
