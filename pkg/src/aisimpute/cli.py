"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 IO or parse failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import evaluation
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .checks import end_to_end_gradcheck
from .config import ConfigError, RunConfig, load_config
from .core import N_ATTRS, TAXONOMY, taxonomy, validate
from .corruption import corrupt_dataset
from .ingest import (CSV_COLUMNS, Dataset, IngestError, RowValidationError, SchemaConfig,
                     format_value, read_grid, ingest_files, load_dataset, save_dataset)
from .model import impute_sequences
from .training import TrainingError, fit, model_from_checkpoint

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
GRADCHECK_TOL = 1e-3
_COL_ATTR = {s.column: s.id for s in TAXONOMY}


class ValidationFailure(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if args.seed is not None:
        cfg.ingest.seed = args.seed
        cfg.model.seed = args.seed
        cfg.model.reservoir_seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def _print_config(args, cfg: RunConfig) -> None:
    print(f"# command: {args.command}")
    for k, v in sorted(vars(args).items()):
        if k not in ("command", "func"):
            print(f"# arg.{k} = {v}")
    sys.stdout.write(cfg.render())
    sys.stdout.flush()


def _check_dataset(ds: Dataset, source) -> None:
    problems = []
    specs = taxonomy(ds.category_counts)
    for s in ds.sequences:
        rep = validate(s, specs)
        for v in rep.violations:
            problems.append(f"{source}: sequence {s.key}: t={v.t}: {v.attribute}: {v.rule}")
    if problems:
        raise ValidationFailure("\n".join(problems[:20]) + (f"\n... and {len(problems) - 20} more"
                                                             if len(problems) > 20 else ""))


def _select(ds: Dataset, part: str) -> list[int]:
    if part == "all":
        return list(range(len(ds.sequences)))
    return ds.indices(part)


def write_completed(path, ds: Dataset, idx: list[int], grids, holes) -> None:
    """One row per record with the completed values and the imputed column names."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "split"] + CSV_COLUMNS + ["imputed"])
        for i, grid, hole in zip(idx, grids, holes):
            s = ds.sequences[i]
            for t in range(s.T):
                filled = [c for c in CSV_COLUMNS[1:] if hole[t, _COL_ATTR[c]] and not np.isnan(grid[t, _COL_ATTR[c]])]
                w.writerow([s.key, ds.split[i], s.vessel_id]
                           + [format_value(grid[t, _COL_ATTR[c]]) for c in CSV_COLUMNS[1:]] + [";".join(filled)])


# ---------------------------------------------------------------- subcommands

def cmd_ingest(args, cfg: RunConfig) -> int:
    schema = SchemaConfig(drop_bad_rows=cfg.ingest.drop_bad_rows,
                          category_counts=cfg.model.category_counts)
    ds, errors, report = ingest_files(args.csv, schema, cfg.ingest.gap_seconds, cfg.ingest.seed)
    for e in errors:
        print(f"dropped: {e}", file=sys.stderr)
    save_dataset(ds, args.out)
    print(f"sequences: {len(ds.sequences)} (train {len(ds.indices('train'))}, "
          f"val {len(ds.indices('val'))}, test {len(ds.indices('test'))})")
    print(f"duplicates skipped: {len(report.duplicates)}; rows without time: {len(report.missing_time)}; "
          f"short segments dropped: {report.dropped_short}")
    return EXIT_OK


def cmd_corrupt(args, cfg: RunConfig) -> int:
    if args.mask_ratio is not None:
        cfg.corrupt.mask_ratio = args.mask_ratio
    if args.noise is not None:
        cfg.corrupt.noise = args.noise
    cfg.validate()
    ds = load_dataset(args.dataset)
    _check_dataset(ds, args.dataset)
    seed = cfg.ingest.seed
    out = corrupt_dataset(ds, cfg.mask_config(seed), cfg.noise_config(seed))
    save_dataset(out, args.out)
    n = sum(int(s.target_mask.sum()) for s in out.sequences)
    print(f"target cells: {n}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    _check_dataset(ds, args.dataset)
    if ds.category_counts:
        for a, c in ds.category_counts.items():
            setattr(cfg.model, f"{TAXONOMY[a].name}_classes", int(c))

    def progress(row):
        print(f"epoch {row.epoch} train {row.train_loss:.6f} val {row.val_loss:.6f}", flush=True)

    res = fit(ds, cfg.model, cfg.train, progress=progress)
    save_checkpoint(res.checkpoint, args.out)
    hist = args.history or f"{args.out}.history.csv"
    res.write_history(hist)
    print(f"best epoch {res.best_epoch}; checkpoint {args.out}; history {hist}")
    return EXIT_OK


def cmd_impute(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    _check_dataset(ds, args.dataset)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    idx = _select(ds, args.part)
    res = impute_sequences(model, [ds.sequences[i] for i in idx], [ds.inputs[i] for i in idx],
                           mode=args.mode or cfg.eval.impute_mode, seed=cfg.ingest.seed)
    write_completed(args.out, ds, idx, [g for g, _ in res], [h for _, h in res])
    print(f"imputed {len(idx)} sequence(s) -> {args.out}")
    return EXIT_OK


def cmd_baseline(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    _check_dataset(ds, args.dataset)
    idx = _select(ds, args.part)
    seqs = [ds.sequences[i] for i in idx]
    grids = evaluation.run_baseline(args.method, seqs, [ds.inputs[i] for i in idx], k=cfg.eval.knn_k)
    holes = [~s.visible_mask for s in seqs]
    write_completed(args.out, ds, idx, grids, holes)
    print(f"{args.method} baseline for {len(idx)} sequence(s) -> {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    grids = read_grid(Path(args.imputed))
    by_key = {s.key: i for i, s in enumerate(ds.sequences)}
    completed, seqs = [], []
    for key, (_, _, grid) in grids.items():
        if key not in by_key:
            raise ValidationFailure(f"{args.imputed}: sequence {key!r} is not in {args.dataset}")
        i = by_key[key]
        if args.part != "all" and ds.split[i] != args.part:
            continue
        s = ds.sequences[i]
        if grid.shape != (s.T, N_ATTRS):
            raise ValidationFailure(f"{args.imputed}: sequence {key!r} has {len(grid)} rows, expected {s.T}")
        completed.append(grid)
        seqs.append(s)
    rep = evaluation.evaluate(completed, seqs, method=args.method or Path(args.imputed).stem)
    text = rep.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(rep.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    res = end_to_end_gradcheck(seed=cfg.model.seed, n_coords=args.coords)
    name, idx = res.result.worst
    print(f"terms: " + ", ".join(f"{k}={v:.6g}" for k, v in res.terms.items()))
    print(f"checked {res.result.n_checked} of {res.n_params} coordinates; worst {name}{list(idx)}")
    print(f"max relative error: {res.max_rel_error:.3e}")
    return EXIT_OK if res.max_rel_error < GRADCHECK_TOL else EXIT_INVALID


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, default=None, help="seed for every random stream")
    common.add_argument("--threads", type=int, default=1, help="cap on numeric library threads")

    p = argparse.ArgumentParser(prog="aisimpute", description="AIS heterogeneous-attribute imputation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse CSVs into a dataset directory")
    s.add_argument("csv", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("corrupt", parents=[common], help="add targets and input noise")
    s.add_argument("dataset")
    s.add_argument("--mask-ratio", type=float, default=None)
    s.add_argument("--noise", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("train", parents=[common], help="fit a model and write a checkpoint")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--history", default=None, help="history CSV (default: <out>.history.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("impute", parents=[common], help="fill hidden cells with a trained model")
    s.add_argument("dataset")
    s.add_argument("checkpoint")
    s.add_argument("--mode", choices=("expected", "sample"), default=None)
    s.add_argument("--part", choices=("all", "train", "val", "test"), default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_impute)

    s = sub.add_parser("eval", parents=[common], help="score completed values against ground truth")
    s.add_argument("imputed")
    s.add_argument("dataset")
    s.add_argument("--part", choices=("all", "train", "val", "test"), default="all")
    s.add_argument("--method", default=None, help="label for the report")
    s.add_argument("--out", default=None, help="report CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", parents=[common], help="statistical baseline imputation")
    s.add_argument("dataset")
    s.add_argument("--method", choices=sorted(evaluation.BASELINES), required=True)
    s.add_argument("--part", choices=("all", "train", "val", "test"), default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("gradcheck", parents=[common], help="end-to-end finite-difference check")
    s.add_argument("--coords", type=int, default=200)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    _print_config(args, cfg)
    try:
        with threadpool_limits(max(1, args.threads)):
            return args.func(args, cfg)
    except (RowValidationError, ValidationFailure, TrainingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (IngestError, CheckpointError, ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
