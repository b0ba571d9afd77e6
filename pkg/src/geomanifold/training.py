"""Three-stage training, evaluation with subject-independent folds, and
evaluation-time rigid alignment of held-out subjects.

Stage 1 trains the variational encoder/decoder on reconstruction (+KL) plus
the geometric-consistency term. Stage 2 freezes the encoder and trains the
transformer, dynamics and decoder on the full objective plus next-latent
prediction. Stage 3 unfreezes everything, attaches a linear head on pooled
fused states, and trains cross-entropy plus the contrastive term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import losses as ls
from . import manifold as mf
from . import ops
from .config import TrainConfig
from .eeg import SegmentSet
from .errors import DataError, TrainingError, UsageError
from .model import SequenceModel, build_model
from .metrics import Metrics, confusion_matrix
from .optim import AdamW
from .rng import RngHub
from .rvae import patchify, vae_loss
from .tensor import Tensor, backprop


def segments_to_arrays(segs: SegmentSet):
    x = np.stack([s.data.astype(np.float64) for s in segs.segments])
    labels = np.array(
        [-1 if s.label is None else s.label for s in segs.segments], dtype=int
    )
    subjects = np.array([s.subject_id for s in segs.segments], dtype=int)
    return x, labels, subjects


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _check_finite(value: float, stage: str, epoch: int, step: int):
    if not np.isfinite(value):
        raise TrainingError(
            f"non-finite loss in {stage} at epoch {epoch}, step {step}: {value}"
        )


def write_csv(path, rows: list[dict]):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def augment_batch(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Second contrastive view: per-segment amplitude scale U(0.8, 1.2) plus
    Gaussian noise at 5% of the segment's standard deviation."""
    scale = rng.uniform(0.8, 1.2, size=(x.shape[0], 1, 1))
    sigma = 0.05 * x.std(axis=(1, 2), keepdims=True)
    return x * scale + sigma * rng.normal(size=x.shape)


def _pooled_latents(model: SequenceModel, z_tilde: Tensor, batch: int) -> Tensor:
    return mf.project_rows(model.manifold, model.pooled_features(z_tilde, batch))


@dataclass
class StageResult:
    rows: list[dict]

    @property
    def first(self) -> float:
        return self.rows[0]["loss"]

    @property
    def last(self) -> float:
        return self.rows[-1]["loss"]


def train_pretrain(model: SequenceModel, segs: SegmentSet, cfg: TrainConfig,
                   hub: RngHub) -> StageResult:
    """Stage 1: encoder + decoder on reconstruction (+KL) + geometric consistency."""
    x_all, _, _ = segments_to_arrays(segs)
    model.set_trainable()
    params = {
        **model.components()["encoder"],
        **model.components()["decoder"],
    }
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    eps_rng = hub.get("stage1.eps")
    batch_rng = hub.get("stage1.batches")
    weights = cfg.weights()
    rows = []
    for epoch in range(cfg.epochs_pretrain):
        epoch_losses = []
        for step, idx in enumerate(_batches(len(x_all), cfg.batch_size, batch_rng)):
            x = x_all[idx]
            eps = eps_rng.normal(size=(x.shape[0] * model.n_patches, model.vae_cfg.latent_dim))
            patches, mu, log_var, z = model.encode(x, eps)
            x_hat = model.decoder(z)
            recon = vae_loss(patches, x_hat, mu, log_var, weights.gamma, x.shape[0])
            geo = ls.geo_loss(z, patches.data, model.manifold)
            loss = ops.add(recon, ops.mul(geo, weights.alpha))
            _check_finite(loss.item(), "pretrain", epoch, step)
            opt.zero_grad()
            backprop(loss)
            opt.step()
            epoch_losses.append(loss.item())
        rows.append({"epoch": epoch, "loss": float(np.mean(epoch_losses))})
    return StageResult(rows)


def train_transformer(model: SequenceModel, segs: SegmentSet, cfg: TrainConfig,
                      hub: RngHub) -> StageResult:
    """Stage 2: freeze the encoder; train transformer + dynamics + decoder on the
    full objective plus next-latent prediction."""
    x_all, _, _ = segments_to_arrays(segs)
    model.set_trainable(frozen_prefixes=("vae.enc",))
    components = model.components()
    params = {}
    for group in ("decoder", "embed", "transformer", "readout", "dynamics"):
        params.update(components.get(group, {}))
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    batch_rng = hub.get("stage2.batches")
    aug_rng = hub.get("stage2.augment")
    weights = cfg.weights()
    rows = []
    for epoch in range(cfg.epochs_transformer):
        sums = {"loss": 0.0, "recon": 0.0, "geo": 0.0, "align": 0.0, "dyn": 0.0}
        n_steps = 0
        for step, idx in enumerate(_batches(len(x_all), cfg.batch_size, batch_rng)):
            x = x_all[idx]
            batch = x.shape[0]
            patches, mu, log_var, z = model.encode(x, None)
            x_hat = model.decoder(z)
            recon = vae_loss(patches, x_hat, mu, log_var, weights.gamma, batch)
            z_tilde = model.transform(z, batch)
            geo = ls.geo_loss(z_tilde, patches.data, model.manifold)
            if weights.beta > 0:
                x2 = augment_batch(x, aug_rng)
                _, _, _, z2 = model.encode(x2, None)
                z2_tilde = model.transform(z2, batch)
                align = ls.align_loss(
                    _pooled_latents(model, z_tilde, batch),
                    _pooled_latents(model, z2_tilde, batch),
                    weights.tau,
                )
            else:
                align = Tensor(np.array(0.0))
            total = ls.total_loss(recon, geo, align, weights)
            if model.use_dynamics:
                fused, matched = model.dynamics_forward(z_tilde, z, batch)
                dyn = ops.mean_(
                    ops.square(mf.rowwise_geodesic(model.manifold, fused, matched))
                )
                total = ops.add(total, ops.mul(dyn, weights.dyn))
            else:
                dyn = Tensor(np.array(0.0))
            _check_finite(total.item(), "transformer", epoch, step)
            opt.zero_grad()
            backprop(total)
            opt.step()
            for key, val in (
                ("loss", total), ("recon", recon), ("geo", geo),
                ("align", align), ("dyn", dyn),
            ):
                sums[key] += val.item()
            n_steps += 1
        rows.append({"epoch": epoch, **{k: v / n_steps for k, v in sums.items()}})
    return StageResult(rows)


def train_finetune(model: SequenceModel, segs: SegmentSet, cfg: TrainConfig,
                   hub: RngHub) -> StageResult:
    """Stage 3: unfreeze everything, attach the linear head, train cross-entropy
    plus the contrastive term."""
    x_all, labels, _ = segments_to_arrays(segs)
    if np.any(labels < 0):
        raise DataError("finetuning needs labels on every segment")
    n_classes = int(labels.max()) + 1
    model.ensure_head(n_classes)
    model.set_trainable()
    opt = AdamW(model.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    batch_rng = hub.get("stage3.batches")
    aug_rng = hub.get("stage3.augment")
    weights = cfg.weights()
    rows = []
    for epoch in range(cfg.epochs_finetune):
        sums = {"loss": 0.0, "ce": 0.0, "align": 0.0}
        correct = 0
        n_steps = 0
        for step, idx in enumerate(_batches(len(x_all), cfg.batch_size, batch_rng)):
            x = x_all[idx]
            y = labels[idx]
            batch = x.shape[0]
            _, _, _, z = model.encode(x, None)
            z_tilde = model.transform(z, batch)
            if model.use_dynamics:
                fused, _ = model.dynamics_forward(z_tilde, z, batch)
                feats = model.pooled_features(z_tilde, batch, fused)
            else:
                feats = model.pooled_features(z_tilde, batch)
            logits = model.head(feats)
            ce = cross_entropy(logits, y)
            if weights.beta > 0:
                x2 = augment_batch(x, aug_rng)
                _, _, _, z2 = model.encode(x2, None)
                z2_tilde = model.transform(z2, batch)
                align = ls.align_loss(
                    _pooled_latents(model, z_tilde, batch),
                    _pooled_latents(model, z2_tilde, batch),
                    weights.tau,
                )
            else:
                align = Tensor(np.array(0.0))
            loss = ops.add(ce, ops.mul(align, weights.beta))
            _check_finite(loss.item(), "finetune", epoch, step)
            opt.zero_grad()
            backprop(loss)
            opt.step()
            correct += int((logits.data.argmax(axis=1) == y).sum())
            sums["loss"] += loss.item()
            sums["ce"] += ce.item()
            sums["align"] += align.item()
            n_steps += 1
        rows.append(
            {
                "epoch": epoch,
                **{k: v / n_steps for k, v in sums.items()},
                "train_accuracy": correct / len(x_all),
            }
        )
    return StageResult(rows)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    n, k = logits.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    log_probs = ops.log(ops.clip(ops.softmax_rows(logits), 1e-300, None))
    return ops.mul(ops.sum_(ops.mul(log_probs, Tensor(onehot))), -1.0 / n)


# ---------------------------------------------------------------------------
# evaluation-time alignment and scoring


def ordinal_anchor_latents(model: SequenceModel, x: np.ndarray,
                           subjects: np.ndarray) -> dict[int, np.ndarray]:
    """Per-subject anchor clouds matched by (within-subject segment ordinal,
    patch position); labels are never read."""
    anchors: dict[int, list[np.ndarray]] = {}
    for sid in np.unique(subjects):
        rows = np.where(subjects == sid)[0]
        latents = model.latent_tokens(x[rows])  # (n_i, P, d)
        anchors[int(sid)] = latents.reshape(-1, latents.shape[-1])
    return anchors


def centroid_anchor_cloud(model: SequenceModel, x: np.ndarray,
                          subjects: np.ndarray) -> np.ndarray:
    """Training-side anchor target: per-(ordinal, patch) centroid over subjects,
    projected back onto the manifold."""
    per_subject = ordinal_anchor_latents(model, x, subjects)
    n_min = min(a.shape[0] for a in per_subject.values())
    stacked = np.stack([a[:n_min] for a in per_subject.values()])
    mean = stacked.mean(axis=0)
    m = model.manifold
    return np.stack([mf.project(m, row).coords for row in mean])


def fit_subject_alignment(model: SequenceModel, train_anchor: np.ndarray,
                          subject_anchor: np.ndarray,
                          min_gain: float) -> ls.AlignmentMap | None:
    """Kabsch from the subject's anchor cloud onto the training anchor cloud;
    applied only when it reduces the anchor geodesic distance by `min_gain`."""
    n = min(len(train_anchor), len(subject_anchor))
    d = train_anchor.shape[1]
    if n < d:
        return None
    source = subject_anchor[:n]
    target = train_anchor[:n]
    amap = ls.kabsch_align(source, target)
    m = model.manifold
    before = np.mean(
        [
            mf.geodesic_distance(mf.ManifoldPoint(m, a), mf.ManifoldPoint(m, b))
            for a, b in zip(source, target)
        ]
    )
    moved = ls.apply_alignment(amap, source, m)
    after = np.mean(
        [
            mf.geodesic_distance(mf.ManifoldPoint(m, a), mf.ManifoldPoint(m, b))
            for a, b in zip(moved, target)
        ]
    )
    if before <= 1e-12 or after > (1.0 - min_gain) * before:
        return None
    return amap


def evaluate_model(model: SequenceModel, segs: SegmentSet, cfg: TrainConfig,
                   train_segs: SegmentSet | None = None,
                   batch_size: int = 64) -> np.ndarray:
    """Predicted labels for every segment; held-out subjects are rigidly
    aligned onto the training latent cloud first unless ablated."""
    x, _, subjects = segments_to_arrays(segs)
    maps: dict[int, ls.AlignmentMap | None] = {}
    if train_segs is not None and not cfg.ablate_procrustes:
        x_train, _, train_subjects = segments_to_arrays(train_segs)
        train_anchor = centroid_anchor_cloud(model, x_train, train_subjects)
        for sid, anchor in ordinal_anchor_latents(model, x, subjects).items():
            maps[sid] = fit_subject_alignment(
                model, train_anchor, anchor, cfg.eval_min_align_gain
            )
    preds = np.empty(len(segs), dtype=int)
    for sid in np.unique(subjects):
        rows = np.where(subjects == sid)[0]
        amap = maps.get(int(sid))
        for start in range(0, len(rows), batch_size):
            chunk = rows[start : start + batch_size]
            logits = model.predict_logits(x[chunk], align_map=amap)
            preds[chunk] = logits.argmax(axis=1)
    return preds


def assign_subject_folds(subjects: np.ndarray, k: int, rng: np.random.Generator) -> dict[int, int]:
    unique = np.array(sorted(set(int(s) for s in subjects)))
    if len(unique) < k:
        raise UsageError(f"{len(unique)} subjects cannot fill {k} folds")
    shuffled = unique[rng.permutation(len(unique))]
    return {int(sid): i % k for i, sid in enumerate(shuffled)}


def run_stages(segs: SegmentSet, cfg: TrainConfig,
               log_prefix=None) -> tuple[SequenceModel, dict[str, StageResult]]:
    """All three stages on one training set; optionally logs per-stage CSVs."""
    x, _, _ = segments_to_arrays(segs)
    model = build_model(cfg, x.shape[1], x.shape[2])
    hub = RngHub(cfg.seed)
    results = {}
    results["pretrain"] = train_pretrain(model, segs, cfg, hub)
    results["transformer"] = train_transformer(model, segs, cfg, hub)
    results["finetune"] = train_finetune(model, segs, cfg, hub)
    if log_prefix is not None:
        for stage, res in results.items():
            write_csv(f"{log_prefix}.{stage}.csv", res.rows)
    return model, results


def cross_validate(segs: SegmentSet, cfg: TrainConfig, k: int,
                   log_prefix=None) -> Metrics:
    """Subject-independent k-fold: train the three stages per fold, score the
    held-out subjects."""
    x, labels, subjects = segments_to_arrays(segs)
    if np.any(labels < 0):
        raise DataError("evaluation needs labels on every segment")
    fold_of = assign_subject_folds(subjects, k, RngHub(cfg.seed).get("folds"))
    segs.folds = [fold_of[int(s)] for s in subjects]
    segs.check_subject_independent()
    n_classes = int(labels.max()) + 1
    metrics = Metrics()
    for fold in range(k):
        test_rows = [i for i, f in enumerate(segs.folds) if f == fold]
        train_rows = [i for i, f in enumerate(segs.folds) if f != fold]
        train_set = SegmentSet([segs.segments[i] for i in train_rows])
        test_set = SegmentSet([segs.segments[i] for i in test_rows])
        fold_cfg = from_config_with_seed(cfg, cfg.seed + 1000 * fold)
        model, results = run_stages(
            train_set, fold_cfg,
            log_prefix=None if log_prefix is None else f"{log_prefix}.fold{fold}",
        )
        preds = evaluate_model(model, test_set, fold_cfg, train_segs=train_set)
        conf = confusion_matrix(labels[test_rows], preds, n_classes)
        metrics.add_fold(conf)
    return metrics


def from_config_with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    from .config import from_text, to_text

    out = from_text(to_text(cfg))
    out.seed = seed
    return out
