"""Command-line surface.

    geomanifold gen       --config C --seed N --out data.eegb
    geomanifold prep      --data in.eegb --out segs.eegb [--config C]
    geomanifold pretrain  --data segs.eegb --out s1.mfw [--config C]
    geomanifold train     --data segs.eegb --weights s1.mfw --out s2.mfw
    geomanifold finetune  --data segs.eegb --weights s2.mfw --out s3.mfw
    geomanifold eval      --data segs.eegb --out metrics.csv
                          [--weights s3.mfw --train-data train.eegb --folds K]
    geomanifold embed     --data segs.eegb --weights s?.mfw --out latents.csv
    geomanifold align     --source a.csv --target b.csv --out map.json

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
Each training command writes a per-epoch loss log next to its output weights
(<out>.loss.csv). `embed` also writes <out stem>.recon.csv with reconstructed
signals (one row per segment, C*T columns).
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import losses as ls
from . import manifold as mf
from .config import TrainConfig, load_config, to_text
from .eeg import preprocess, read_eegb, read_segments, write_segments
from .errors import DataError, FormatError, NumericalError, UsageError
from .metrics import Metrics, confusion_matrix
from .model import build_model
from .rng import RngHub
from .state import load_state, require_stage, restore_model, save_model
from .synthetic import synthesize
from .training import (
    cross_validate,
    evaluate_model,
    run_stages,
    segments_to_arrays,
    train_finetune,
    train_pretrain,
    train_transformer,
    write_csv,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="geomanifold", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "prep", "pretrain", "train", "finetune", "eval", "embed", "align"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--data", default=None, help="input EEGB file")
        p.add_argument("--weights", default=None, help="input MFW1 weights file")
        p.add_argument("--out", default=None, help="output path")
        p.add_argument("--ablate", default=None,
                       help="comma-separated ablation flags (disable_*)")
        if name == "eval":
            p.add_argument("--folds", type=int, default=None)
            p.add_argument("--train-data", default=None,
                           help="reference EEGB for alignment anchors (weights mode)")
        if name == "align":
            p.add_argument("--source", default=None, help="source latent CSV")
            p.add_argument("--target", default=None, help="target latent CSV")
    return parser


def _effective_config(args, base_text: str | None = None) -> TrainConfig:
    from .config import from_text

    cfg = from_text(base_text) if base_text else TrainConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.ablate:
        cfg.set_ablations([f.strip() for f in args.ablate.split(",") if f.strip()])
    return cfg


def _require(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise UsageError(f"--{name} is required for this command")


def cmd_gen(args) -> int:
    _require(args, "out")
    cfg = _effective_config(args)
    segs = synthesize(cfg.generator(), cfg.seed)
    write_segments(args.out, segs)
    counts: dict[int, int] = {}
    for seg in segs.segments:
        counts[seg.label] = counts.get(seg.label, 0) + 1
    for label in sorted(counts):
        print(f"class {label}: {counts[label]} segments")
    print(f"wrote {len(segs)} segments to {args.out}")
    return 0


def cmd_prep(args) -> int:
    _require(args, "data", "out")
    cfg = _effective_config(args)
    recordings = read_eegb(args.data)
    segs = preprocess(
        recordings,
        target_hz=cfg.prep_rate_hz,
        spec=cfg.filter_spec(),
        window_s=cfg.prep_window_s,
    )
    write_segments(args.out, segs)
    print(f"wrote {len(segs)} segments of "
          f"{segs.segments[0].n_samples if len(segs) else 0} samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    _require(args, "data", "out")
    cfg = _effective_config(args)
    segs = read_segments(args.data)
    x, _, _ = segments_to_arrays(segs)
    model = build_model(cfg, x.shape[1], x.shape[2])
    result = train_pretrain(model, segs, cfg, RngHub(cfg.seed))
    if result.last > result.first:
        print(f"warning: loss rose over the stage ({result.first:.4g} -> {result.last:.4g})",
              file=sys.stderr)
    save_model(args.out, model, stage=1)
    write_csv(f"{args.out}.loss.csv", result.rows)
    print(f"stage 1 done: loss {result.first:.5g} -> {result.last:.5g}; wrote {args.out}")
    return 0


def _load_for_stage(args, expected_stage: int, command: str):
    _require(args, "data", "weights", "out")
    state = load_state(args.weights)
    require_stage(state, expected_stage, command)
    cfg = _effective_config(args, base_text=state.config_text)
    # rebuild under the effective config so overrides apply; parameter names and
    # dims must still match the stored tensors
    from .state import ModelState

    model = restore_model(ModelState(state.params, to_text(cfg), state.stage))
    segs = read_segments(args.data)
    return model, segs, cfg


def cmd_train(args) -> int:
    model, segs, cfg = _load_for_stage(args, 1, "train")
    result = train_transformer(model, segs, cfg, RngHub(cfg.seed))
    save_model(args.out, model, stage=2)
    write_csv(f"{args.out}.loss.csv", result.rows)
    print(f"stage 2 done: loss {result.first:.5g} -> {result.last:.5g}; wrote {args.out}")
    return 0


def cmd_finetune(args) -> int:
    model, segs, cfg = _load_for_stage(args, 2, "finetune")
    result = train_finetune(model, segs, cfg, RngHub(cfg.seed))
    save_model(args.out, model, stage=3)
    write_csv(f"{args.out}.loss.csv", result.rows)
    print(
        f"stage 3 done: loss {result.first:.5g} -> {result.last:.5g}, "
        f"final train accuracy {result.rows[-1]['train_accuracy']:.3f}; wrote {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    _require(args, "data", "out")
    segs = read_segments(args.data)
    x, labels, subjects = segments_to_arrays(segs)
    if np.any(labels < 0):
        raise DataError("evaluation needs labels on every segment")
    if args.weights:
        state = load_state(args.weights)
        require_stage(state, 3, "eval with --weights")
        cfg = _effective_config(args, base_text=state.config_text)
        folds = args.folds if args.folds is not None else 1
        model = restore_model(state)
        train_segs = read_segments(args.train_data) if args.train_data else None
        from .training import assign_subject_folds

        fold_of = assign_subject_folds(subjects, folds, RngHub(cfg.seed).get("folds"))
        segs.folds = [fold_of[int(s)] for s in subjects]
        segs.check_subject_independent()
        n_classes = int(labels.max()) + 1
        metrics = Metrics()
        preds = evaluate_model(model, segs, cfg, train_segs=train_segs)
        for fold in range(folds):
            rows = [i for i, f in enumerate(segs.folds) if f == fold]
            metrics.add_fold(confusion_matrix(labels[rows], preds[rows], n_classes))
    else:
        cfg = _effective_config(args)
        folds = args.folds if args.folds is not None else cfg.eval_folds
        metrics = cross_validate(segs, cfg, folds)
    write_csv(args.out, metrics.rows())
    print(
        f"accuracy {metrics.mean_accuracy:.4f} +/- {metrics.std_accuracy:.4f}, "
        f"kappa {metrics.mean_kappa:.4f} +/- {metrics.std_kappa:.4f} "
        f"({len(metrics.fold_accuracy)} folds)"
    )
    return 0


def cmd_embed(args) -> int:
    _require(args, "data", "weights", "out")
    state = load_state(args.weights)
    model = restore_model(state)
    segs = read_segments(args.data)
    x, labels, subjects = segments_to_arrays(segs)
    latents = model.latent_tokens(x)  # (N, P, d)
    n, p, d = latents.shape
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "patch", "subject", "label"] + [f"z{i}" for i in range(d)])
        for seg_i in range(n):
            for patch_i in range(p):
                writer.writerow(
                    [seg_i, patch_i, int(subjects[seg_i]), int(labels[seg_i])]
                    + [repr(float(v)) for v in latents[seg_i, patch_i]]
                )
    recon_path = _recon_path(args.out)
    recon = model.reconstruct(x)
    with open(recon_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(recon.shape[1] * recon.shape[2])])
        for seg_i in range(n):
            writer.writerow([repr(float(v)) for v in recon[seg_i].reshape(-1)])
    print(f"wrote {n * p} latent rows to {args.out} and reconstructions to {recon_path}")
    return 0


def _recon_path(out: str) -> str:
    return (out[: -len(".csv")] if out.endswith(".csv") else out) + ".recon.csv"


def read_latent_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        z_cols = [i for i, name in enumerate(header) if name.startswith("z")]
        if not z_cols:
            raise FormatError(f"{path} has no z* latent columns", offset=0)
        rows = [[float(row[i]) for i in z_cols] for row in reader]
    if not rows:
        raise DataError(f"{path} contains no latent rows")
    return np.asarray(rows, dtype=np.float64)


def _infer_manifold(points: np.ndarray) -> mf.ManifoldKind:
    norms = np.linalg.norm(points, axis=1)
    d = points.shape[1]
    if np.all(np.abs(norms - 1.0) < 1e-6):
        return mf.ManifoldKind(mf.HYPERSPHERE, d)
    if np.all(norms < 1.0):
        return mf.ManifoldKind(mf.POINCARE_BALL, d)
    return mf.ManifoldKind(mf.EUCLIDEAN, d)


def cmd_align(args) -> int:
    _require(args, "source", "target", "out")
    cfg = _effective_config(args)
    source = read_latent_csv(args.source)
    target = read_latent_csv(args.target)
    if source.shape != target.shape:
        raise DataError(
            f"anchor clouds disagree: {source.shape} vs {target.shape}"
        )
    m = _infer_manifold(np.vstack([source, target]))

    def mean_geodesic(a, b):
        return float(
            np.mean(
                [
                    mf.geodesic_distance(mf.ManifoldPoint(m, pa), mf.ManifoldPoint(m, pb))
                    for pa, pb in zip(a, b)
                ]
            )
        )

    before = mean_geodesic(source, target)
    if cfg.ablate_procrustes:
        amap = ls.AlignmentMap.identity(source.shape[1])
        print("alignment disabled (disable_procrustes): identity map")
    else:
        amap = ls.kabsch_align(source, target)
    moved = ls.apply_alignment(amap, source, m)
    after = mean_geodesic(moved, target)
    amap.save(args.out)
    det = float(np.linalg.det(amap.rotation))
    reduction = 0.0 if before == 0 else 100.0 * (1.0 - after / before)
    print(f"manifold: {m.kind} (dim {m.dim})")
    print(f"det(R) = {det:.9f}")
    print(f"mean geodesic distance: {before:.6f} -> {after:.6f} ({reduction:.1f}% reduction)")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "prep": cmd_prep,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "align": cmd_align,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (FormatError, DataError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
