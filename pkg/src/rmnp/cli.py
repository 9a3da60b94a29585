"""Command-line entry point: synth, train, eval, perturb, report.

Every command is deterministic given its flags and seed; primary outputs
(dataset directories, checkpoints, metric and histogram CSVs) are
byte-reproducible.  Exit codes: 0 success, 2 usage or validation error,
3 numerical failure during training or inference.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import pipeline as pl
from .dataset import (
    MODALITIES,
    DatasetError,
    SynthConfig,
    generate_synthetic,
    inject_camouflage_edges,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .numerics import Rng

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

_SPLIT_CHOICES = ("train", "val", "test", "all")


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(p) for p in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one batch size")
    return values


def _write_csv(path: str | None, header: list[str], rows: list[list]) -> None:
    """Plain CSV with full-precision float repr; stdout when path is None."""
    text_rows = [",".join(header)]
    for row in rows:
        text_rows.append(",".join(repr(c) if isinstance(c, float) else str(c) for c in row))
    payload = "\n".join(text_rows) + "\n"
    if path is None:
        sys.stdout.write(payload)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(payload)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_accounts=args.n,
        bot_fraction=args.bot_frac,
        d_text=args.d_text,
        class_separation=args.sep,
        edge_homophily=args.homophily,
        camouflage_fraction=args.camouflage_frac,
        camouflaged_modality=args.camouflage_modality,
        seed=args.seed,
        avg_degree=args.avg_degree,
        n_relations=args.relations,
        feature_shift=args.shift,
    )
    ds = generate_synthetic(cfg)
    ds = split_dataset(ds, args.split, Rng(cfg.seed).child(5))
    save_dataset(ds, args.out)
    n_bots = int((ds.labels == 1).sum())
    print(f"wrote {args.out}: {cfg.n_accounts} accounts ({n_bots} bots)")
    for name, count in zip(ds.graph.relation_names, ds.graph.edge_counts()):
        print(f"  relation {name}: {count} edges")
    for tag in ("train", "val", "test"):
        print(f"  split {tag}: {ds.split_indices(tag).size}")
    if all(s == 0.0 for s in cfg.class_separation):
        print("  note: zero-signal configuration (class separation 0,0,0)")
    if cfg.camouflage_fraction > 0.0:
        print(f"  camouflaged bots: {0 if ds.camouflaged is None else ds.camouflaged.size}"
              f" ({cfg.camouflaged_modality} modality, not persisted)")
    if cfg.feature_shift != 0.0:
        print(f"  note: all modality means shifted by {cfg.feature_shift} within-class stds")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    hp = pl.Hyperparams(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        d_s=args.d,
        d_e=args.d,
        d_h=args.d,
        n_z_samples=args.z_samples,
        n_context=args.n_context,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        tau=args.tau,
        n_layers=args.layers,
        seed=args.seed,
    )
    log_path = args.log if args.log else args.out + ".log"
    model, records = pl.train(ds, hp, ablations=tuple(args.ablate), log_path=log_path)
    pl.save_checkpoint(model, args.out)
    best = min(records, key=lambda r: r["val_nll_x100"])
    print(f"wrote {args.out} (log: {log_path})")
    print(f"  mode: {model.fusion_mode}, ablations: {','.join(args.ablate) or 'none'}")
    print(f"  best epoch {best['epoch']}: val_acc {best['val_acc']:.4f}, "
          f"val_nll_x100 {best['val_nll_x100']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    model = pl.load_checkpoint(args.ckpt)
    if args.split == "all":
        indices = np.flatnonzero(ds.labels >= 0)
    else:
        indices = ds.split_indices(args.split)
    if indices.size == 0:
        raise DatasetError(f"no labeled accounts in split {args.split!r}")
    report = pl.predict_report(model, ds, indices, Rng(args.seed))
    if report.metrics is None:
        raise DatasetError("selected accounts carry no labels")
    header = ["accuracy", "f1", "nll_x100", "brier", "ece", "mean_entropy"]
    _write_csv(args.out, header, [[report.metrics[k] for k in header]])
    if args.per_account:
        columns = ["index", "label", "p_human", "p_bot"]
        for m in MODALITIES:
            columns += [f"p_bot_{m}"]
        if report.belief is not None:
            columns += [f"b_{m}" for m in MODALITIES] + ["eta"]
        columns += ["entropy"]
        rows = []
        for i, account in enumerate(report.indices):
            row = [int(account), int(ds.labels[account]),
                   float(report.joint_probs[i, 0]), float(report.joint_probs[i, 1])]
            row += [float(report.unimodal_probs[m, i, 1]) for m in range(len(MODALITIES))]
            if report.belief is not None:
                row += [float(b) for b in report.belief[i]] + [float(report.eta[i])]
            row.append(float(report.entropy[i]))
            rows.append(row)
        _write_csv(args.per_account, columns, rows)
        print(f"wrote per-account table: {args.per_account}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    ds = load_dataset(args.data)
    if np.any(ds.labels < 0):
        raise DatasetError("perturbation requires a label for every account")
    graph = inject_camouflage_edges(ds.graph, ds.labels, args.proportion, Rng(args.seed))
    save_dataset(replace(ds, graph=graph), args.out)
    print(f"wrote {args.out} (proportion {args.proportion})")
    for name, before, after in zip(ds.graph.relation_names, ds.graph.edge_counts(),
                                   graph.edge_counts()):
        print(f"  relation {name}: {before} -> {after} edges")
    return EXIT_OK


def cmd_report(args) -> int:
    model = pl.load_checkpoint(args.ckpt)
    datasets = [load_dataset(path) for path in args.data]
    os.makedirs(args.out_dir, exist_ok=True)
    reports = pl.entropy_report(model, datasets, Rng(args.seed))
    summary_rows = []
    for path, rep in zip(args.data, reports):
        base = os.path.basename(os.path.normpath(path))
        out = os.path.join(args.out_dir, f"entropy_{base}.csv")
        rows = [
            [float(rep["edges"][i]), float(rep["edges"][i + 1]), int(rep["counts"][i])]
            for i in range(len(rep["counts"]))
        ]
        _write_csv(out, ["bin_left", "bin_right", "count"], rows)
        summary_rows.append([base, rep["n_accounts"], rep["mean"], rep["std"]])
        print(f"wrote {out} (mean entropy {rep['mean']:.4f})")
    _write_csv(os.path.join(args.out_dir, "entropy_summary.csv"),
               ["dataset", "n_accounts", "mean_entropy", "std_entropy"], summary_rows)
    if not args.no_timing:
        rows = pl.timing_probe(model, datasets[0], batch_sizes=args.batch_sizes,
                               repeats=args.repeats)
        timing = [[r["batch_size"], r["median_s"], r["mean_s"], r["std_s"]] for r in rows]
        _write_csv(os.path.join(args.out_dir, "timing.csv"),
                   ["batch_size", "median_s", "mean_s", "std_s"], timing)
        print(f"wrote {os.path.join(args.out_dir, 'timing.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmnp",
        description="Uncertainty-aware multi-modal bot detection on synthetic cohorts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--n", type=int, default=1000, help="number of accounts")
    p.add_argument("--bot-frac", type=float, default=0.3)
    p.add_argument("--sep", type=_triple, default=(4.0, 4.0, 4.0),
                   help="per-modality class separation, e.g. 4,4,4")
    p.add_argument("--d-text", type=int, default=32)
    p.add_argument("--homophily", type=float, default=0.9)
    p.add_argument("--camouflage-frac", type=float, default=0.0)
    p.add_argument("--camouflage-modality", choices=MODALITIES, default="text")
    p.add_argument("--shift", type=float, default=0.0,
                   help="translate all modality means by this many within-class stds")
    p.add_argument("--avg-degree", type=float, default=10.0)
    p.add_argument("--relations", type=int, default=2)
    p.add_argument("--split", type=_triple, default=(0.7, 0.2, 0.1))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="epoch log path (default: OUT.log)")
    p.add_argument("--ablate", action="append", default=[],
                   choices=pl.ABLATIONS, help="repeatable ablation switch")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=3e-5)
    p.add_argument("--d", type=int, default=128, help="model width (d_s = d_e = d_h)")
    p.add_argument("--z-samples", type=int, default=10)
    p.add_argument("--n-context", type=int, default=100)
    p.add_argument("--lambda1", type=float, default=0.2)
    p.add_argument("--lambda2", type=float, default=0.01)
    p.add_argument("--tau", type=float, default=20.0)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=_SPLIT_CHOICES, default="test")
    p.add_argument("--out", default=None, help="metrics CSV (default: stdout)")
    p.add_argument("--per-account", default=None, help="per-account CSV dump")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb", help="inject human-to-bot camouflage edges")
    p.add_argument("--data", required=True)
    p.add_argument("--proportion", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("report", help="entropy histograms and timing table")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", action="append", required=True,
                   help="dataset directory (repeatable)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-sizes", type=_int_list, default=pl.DEFAULT_BATCH_SIZES)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except pl.NumericalFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, pl.CheckpointError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
