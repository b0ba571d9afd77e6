"""Run configuration: dotted `key = value` text files with typed, validated keys.

Unknown keys are errors. `to_text` emits a canonical snapshot of every key
(including defaults and ablation flags) that is embedded into weights files,
so a model can always be rebuilt from its own snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .dynamics import SolverConfig
from .eeg import FilterSpec
from .errors import UsageError
from .losses import LossWeights
from .manifold import ManifoldKind
from .rvae import VAEConfig
from .synthetic import GeneratorConfig
from .transformer import AttentionConfig, MoEConfig

ABLATION_FLAGS = (
    "disable_rvae_manifold",
    "disable_geo_transformer",
    "disable_dynamics",
    "disable_geo_attention",
    "disable_procrustes",
)


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise UsageError(f"expected a boolean, got '{s}'")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(part) for part in s.split(",") if part.strip())


def _parse_str_list(s: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in s.split(",") if part.strip())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class TrainConfig:
    """Every knob of the pipeline; field names double as config keys
    (underscores map to dots at the first underscore group boundary below)."""

    seed: int = 42
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01

    epochs_pretrain: int = 50
    epochs_transformer: int = 100
    epochs_finetune: int = 50

    loss_alpha: float = 0.1
    loss_beta: float = 0.1
    loss_tau: float = 0.1
    loss_gamma: float = 1e-3
    loss_dyn: float = 1.0

    manifold_kind: str = "hypersphere"
    manifold_boundary_margin: float = 1e-5

    vae_latent_dim: int = 128
    vae_hidden: tuple[int, ...] = (512, 256)
    vae_patch_len: int = 100

    tf_n_layers: int = 8
    tf_model_dim: int = 256
    tf_n_heads: int = 4
    tf_geo_weight: float = 0.5

    moe_n_experts: int = 4
    moe_expert_kinds: tuple[str, ...] = ("swiglu", "geglu", "swiglu", "geglu")
    moe_hidden_dim: int = 512
    moe_top_k: int = 1

    dyn_hidden: tuple[int, ...] = (64,)
    dyn_fourier_freqs: int = 4
    dyn_fourier_base: float = 1.0
    dyn_lstm_hidden: int = 0  # 0 means: use the latent dimension

    ode_rtol: float = 1e-5
    ode_atol: float = 1e-6
    ode_max_steps: int = 500
    ode_safety: float = 0.9

    gen_n_subjects: int = 8
    gen_n_classes: int = 2
    gen_segments_per_class: int = 12
    gen_n_channels: int = 16
    gen_duration_s: float = 4.0
    gen_rate_hz: float = 200.0
    gen_noise_std: float = 0.1
    gen_latent_dim: int = 8
    gen_base_rate_hz: float = 1.0

    prep_rate_hz: float = 200.0
    prep_band_low: float = 0.5
    prep_band_high: float = 45.0
    prep_order: int = 12
    prep_window_s: float = 4.0

    eval_folds: int = 5
    # held-out alignment must cut the anchor distance by at least this fraction
    # before the map is applied; below it the subject is treated as already
    # aligned (the encoder often is subject-invariant by itself)
    eval_min_align_gain: float = 0.5

    ablate_rvae_manifold: bool = False
    ablate_geo_transformer: bool = False
    ablate_dynamics: bool = False
    ablate_geo_attention: bool = False
    ablate_procrustes: bool = False

    # structural facts recorded when a model is built, so weights files are
    # self-describing
    model_n_channels: int = 0
    model_n_samples: int = 0
    model_n_classes: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise UsageError(f"learning rate must be positive, got {self.lr}")
        for stage in ("epochs_pretrain", "epochs_transformer", "epochs_finetune"):
            if getattr(self, stage) < 1:
                raise UsageError(f"{stage} must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")

    # --- sub-config builders -------------------------------------------------

    def manifold(self) -> ManifoldKind:
        kind = "euclidean" if self.ablate_rvae_manifold else self.manifold_kind
        return ManifoldKind(kind, self.vae_latent_dim, self.manifold_boundary_margin)

    def vae(self) -> VAEConfig:
        return VAEConfig(
            latent_dim=self.vae_latent_dim,
            hidden=self.vae_hidden,
            patch_len=self.vae_patch_len,
            kl_weight=self.loss_gamma,
        )

    def attention(self) -> AttentionConfig:
        return AttentionConfig(
            n_layers=self.tf_n_layers,
            model_dim=self.tf_model_dim,
            n_heads=self.tf_n_heads,
            geo_weight=0.0 if self.ablate_geo_attention else self.tf_geo_weight,
        )

    def moe(self) -> MoEConfig:
        return MoEConfig(
            n_experts=self.moe_n_experts,
            expert_kinds=self.moe_expert_kinds,
            hidden_dim=self.moe_hidden_dim,
            top_k=self.moe_top_k,
        )

    def solver(self) -> SolverConfig:
        return SolverConfig(
            rtol=self.ode_rtol,
            atol=self.ode_atol,
            max_steps=self.ode_max_steps,
            safety=self.ode_safety,
        )

    def weights(self) -> LossWeights:
        return LossWeights(
            alpha=self.loss_alpha,
            beta=self.loss_beta,
            tau=self.loss_tau,
            gamma=self.loss_gamma,
            dyn=self.loss_dyn,
        )

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(
            n_subjects=self.gen_n_subjects,
            n_classes=self.gen_n_classes,
            segments_per_class=self.gen_segments_per_class,
            n_channels=self.gen_n_channels,
            duration_s=self.gen_duration_s,
            rate_hz=self.gen_rate_hz,
            noise_std=self.gen_noise_std,
            latent_dim=self.gen_latent_dim,
            base_rate_hz=self.gen_base_rate_hz,
        )

    def filter_spec(self) -> FilterSpec:
        return FilterSpec(
            low_hz=self.prep_band_low, high_hz=self.prep_band_high, order=self.prep_order
        )

    def set_ablations(self, names: list[str]):
        for name in names:
            if name not in ABLATION_FLAGS:
                raise UsageError(
                    f"unknown ablation flag '{name}'; known: {', '.join(ABLATION_FLAGS)}"
                )
            setattr(self, "ablate_" + name.removeprefix("disable_"), True)

    def ablations(self) -> list[str]:
        return [
            flag
            for flag in ABLATION_FLAGS
            if getattr(self, "ablate_" + flag.removeprefix("disable_"))
        ]


# dotted keys scope fields by module: "vae.latent_dim" <-> field "vae_latent_dim";
# ungrouped keys (seed, batch_size, lr, weight_decay) map verbatim
_GROUPS = (
    "epochs", "loss", "manifold", "vae", "tf", "moe", "dyn", "ode", "gen",
    "prep", "eval", "ablate", "model",
)
_FIELD_TYPES = {f.name: f for f in fields(TrainConfig)}


def _key_to_field(key: str) -> str:
    head, dot, rest = key.partition(".")
    if dot and head in _GROUPS:
        return f"{head}_{rest.replace('.', '_')}"
    return key


def _field_to_key(name: str) -> str:
    head, _, rest = name.partition("_")
    if head in _GROUPS and rest:
        return f"{head}.{rest}"
    return name


def _convert(field_obj, raw: str):
    text = raw.strip()
    tp = field_obj.type
    if tp in ("int", int):
        return int(text)
    if tp in ("float", float):
        return float(text)
    if tp in ("bool", bool):
        return _parse_bool(text)
    if tp in ("str", str):
        return text
    if "tuple[int" in str(tp):
        return _parse_int_list(text)
    if "tuple[str" in str(tp):
        return _parse_str_list(text)
    raise UsageError(f"unhandled config type {tp}")


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base or TrainConfig()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {line_no}: expected 'key = value', got '{raw_line}'")
        key, _, value = line.partition("=")
        field_name = _key_to_field(key.strip())
        if field_name not in _FIELD_TYPES:
            raise UsageError(f"config line {line_no}: unknown key '{key.strip()}'")
        setattr(cfg, field_name, _convert(_FIELD_TYPES[field_name], value))
    cfg.__post_init__()
    return cfg


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def to_text(cfg: TrainConfig) -> str:
    """Canonical snapshot: every key, sorted, one per line."""
    lines = []
    for f in sorted(fields(TrainConfig), key=lambda f: f.name):
        lines.append(f"{_field_to_key(f.name)} = {_fmt(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> TrainConfig:
    return parse_config_text(text)
