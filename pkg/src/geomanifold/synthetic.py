"""Synthetic multichannel dataset whose class structure lives in latent
geodesic flows.

Each class k traces a great-circle rotation on the unit hypersphere in its own
coordinate plane at its own angular rate. Every subject applies a fixed random
proper rotation to the latent trajectory before a shared full-rank matrix
mixes it into channel space, so subjects differ by exactly a planted latent
rotation. Segment phases depend only on (class, segment index), which makes
segments correspond across subjects for alignment experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eeg import EEGRecording, SegmentSet
from .errors import UsageError
from .rng import RngHub


@dataclass
class GeneratorConfig:
    n_subjects: int = 8
    n_classes: int = 2
    segments_per_class: int = 12  # per subject
    n_channels: int = 16
    duration_s: float = 4.0
    rate_hz: float = 200.0
    noise_std: float = 0.1
    latent_dim: int = 8
    base_rate_hz: float = 1.0  # class k rotates at base * (k + 1)

    def __post_init__(self):
        if self.n_classes not in (2, 3, 4):
            raise UsageError(f"n_classes must be 2, 3 or 4, got {self.n_classes}")
        if self.latent_dim < 3:
            raise UsageError(f"latent_dim must be >= 3, got {self.latent_dim}")
        if self.n_channels < self.latent_dim:
            raise UsageError(
                f"need n_channels >= latent_dim for full-rank mixing, got "
                f"{self.n_channels} < {self.latent_dim}"
            )
        if self.n_subjects < 1 or self.segments_per_class < 1:
            raise UsageError("n_subjects and segments_per_class must be positive")

    def class_rate(self, k: int) -> float:
        return self.base_rate_hz * (k + 1)

    def class_plane(self, k: int) -> tuple[int, int]:
        return (2 * k) % self.latent_dim, (2 * k + 1) % self.latent_dim


def _random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish proper rotation via QR with a deterministic sign convention."""
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def subject_rotations(cfg: GeneratorConfig, seed: int) -> list[np.ndarray]:
    rng = RngHub(seed).get("synth.rotations")
    return [_random_rotation(cfg.latent_dim, rng) for _ in range(cfg.n_subjects)]


def latent_trajectory(cfg: GeneratorConfig, k: int, phase: float, times: np.ndarray) -> np.ndarray:
    """Class-k great-circle flow sampled at `times`, shape (len(times), d)."""
    i, j = cfg.class_plane(k)
    theta = 2.0 * np.pi * cfg.class_rate(k) * times + phase
    z = np.zeros((times.size, cfg.latent_dim))
    z[:, i] = np.cos(theta)
    z[:, j] = np.sin(theta)
    return z


def synthesize(cfg: GeneratorConfig, seed: int) -> SegmentSet:
    return synthesize_with_latents(cfg, seed)[0]


def synthesize_with_latents(
    cfg: GeneratorConfig, seed: int, n_anchor_times: int = 8
) -> tuple[SegmentSet, np.ndarray]:
    """Generate segments plus the true latent states at evenly spaced anchor times.

    Returns (segments, latents) with latents of shape
    (n_segments, n_anchor_times, latent_dim); latent rows are unit vectors.
    """
    hub = RngHub(seed)
    n = int(round(cfg.duration_s * cfg.rate_hz))
    times = np.arange(n) / cfg.rate_hz
    anchor_times = (np.arange(n_anchor_times) * (n // n_anchor_times)) / cfg.rate_hz

    # shared across subjects so segments correspond one-to-one between them
    phases = hub.get("synth.phases").uniform(
        0.0, 2.0 * np.pi, size=(cfg.n_classes, cfg.segments_per_class)
    )
    mixing = hub.get("synth.mixing").normal(size=(cfg.n_channels, cfg.latent_dim)) / np.sqrt(
        cfg.latent_dim
    )
    if np.linalg.matrix_rank(mixing) < cfg.latent_dim:
        raise UsageError("mixing matrix is rank-deficient; change the seed")
    rotations = subject_rotations(cfg, seed)
    noise_rng = hub.get("synth.noise")

    segments: list[EEGRecording] = []
    latents: list[np.ndarray] = []
    for s in range(cfg.n_subjects):
        for k in range(cfg.n_classes):
            for i in range(cfg.segments_per_class):
                z = latent_trajectory(cfg, k, phases[k, i], times)  # (n, d)
                z_subj = z @ rotations[s].T
                x = z_subj @ mixing.T  # (n, C)
                if cfg.noise_std > 0:
                    x = x + cfg.noise_std * noise_rng.normal(size=x.shape)
                segments.append(
                    EEGRecording(
                        data=x.T.astype(np.float32),
                        rate_hz=cfg.rate_hz,
                        subject_id=s,
                        label=k,
                    )
                )
                z_anchor = latent_trajectory(cfg, k, phases[k, i], anchor_times)
                latents.append(z_anchor @ rotations[s].T)
    return SegmentSet(segments), np.stack(latents)
