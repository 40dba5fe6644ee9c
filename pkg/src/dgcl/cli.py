"""``dgcl`` command line: train, eval, ablate, sweep, export-figures.

CSV schemas (``CSV_SCHEMA_VERSION`` = 1)

ablation.csv
    ``arm, recall@10, ndcg@10, recall@20, ndcg@20`` (one row per arm; metric
    columns follow ``cutoffs``; values are medians over ``--seeds``).
sweep.csv
    ``param, value, lambda, diff-steps, layers, beta-schedule, <metrics>``
    (one row per grid cell).
figures_long.csv
    ``schema, source, param, value, metric, score`` (one row per cell and
    metric; ``param`` is ``arm`` for ablation rows).
"""

import argparse
import csv
import itertools
import json
import logging
import os
import sys

import numpy as np

from . import trainer
from .config import ABLATIONS, load_config, parse_set_args
from .errors import DGCLError

CSV_SCHEMA_VERSION = 1

SWEEP_GRID = {
    "lambda": ("lambda", (0.1, 0.2, 0.3)),
    "T": ("diff-steps", (10, 20, 30, 50)),
    "L": ("layers", (1, 2, 3)),
    "schedule": ("beta-schedule", ("linear", "quadratic", "sigmoid")),
}


def metric_names(cutoffs):
    return [f"{m}@{k}" for k in sorted(cutoffs) for m in ("recall", "ndcg")]


def _base_config(args, extra=None):
    overrides = parse_set_args(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    overrides.update(extra or {})
    return load_config(args.config, overrides)


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _print_json(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_train(args):
    cfg = _base_config(args)
    out = _out_dir(args)
    report, model = trainer.train(cfg)
    ckpt = os.path.join(out, "checkpoint.json")
    trainer.save_checkpoint(ckpt, model, report)
    with open(os.path.join(out, "report.jsonl"), "w", encoding="utf-8") as fh:
        if report.epochs:
            fh.write(report.to_jsonl() + "\n")
    _print_json({"checkpoint": ckpt, "best_epoch": report.best_epoch, "metrics": report.final})
    return 0


def cmd_eval(args):
    path = args.checkpoint or os.path.join(args.out, "checkpoint.json")
    result = trainer.evaluate_model(path)
    _print_json(result.as_dict())
    return 0


def _run_cell(cfg):
    report, _ = trainer.train(cfg)
    return report.final


def cmd_ablate(args):
    base = _base_config(args)
    out = _out_dir(args)
    seeds = args.seeds or [base.seed]
    names = metric_names(base.cutoffs)
    rows = []
    for arm in ABLATIONS:
        finals = [_run_cell(base.replace(ablation=arm, seed=s)) for s in seeds]
        rows.append([arm] + [float(np.median([f[m] for f in finals])) for m in names])
    path = os.path.join(out, "ablation.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["arm"] + names)
        w.writerows(rows)
    _print_json({"csv": path, "arms": [r[0] for r in rows]})
    return 0


def sweep_cells(param):
    """Grid cells as ``(param label, value label, overrides)`` tuples."""
    if param == "grid":
        keys = list(SWEEP_GRID)
        for combo in itertools.product(*(SWEEP_GRID[k][1] for k in keys)):
            overrides = {SWEEP_GRID[k][0]: v for k, v in zip(keys, combo)}
            yield "grid", "/".join(str(v) for v in combo), overrides
        return
    params = list(SWEEP_GRID) if param == "all" else [param]
    for p in params:
        key, values = SWEEP_GRID[p]
        for v in values:
            yield p, str(v), {key: v}


def cmd_sweep(args):
    base = _base_config(args)
    out = _out_dir(args)
    names = metric_names(base.cutoffs)
    path = os.path.join(out, "sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "lambda", "diff-steps", "layers", "beta-schedule"] + names)
        count = 0
        for label, value, overrides in sweep_cells(args.param):
            cfg = base
            if "diff-steps" in overrides and cfg.t_start > overrides["diff-steps"]:
                cfg = cfg.replace(t_start=0)
            cfg = trainer.TrainConfig.from_dict({**cfg.to_dict(), **overrides})
            final = _run_cell(cfg)
            w.writerow([label, value, cfg.lam, cfg.diff_steps, cfg.layers, cfg.beta_schedule]
                       + [final[m] for m in names])
            count += 1
    _print_json({"csv": path, "cells": count})
    return 0


def export_long(paths):
    """Long-format rows from sweep / ablation CSVs."""
    rows = []
    for path in paths:
        source = os.path.splitext(os.path.basename(path))[0]
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            metric_cols = [c for c in reader.fieldnames if "@" in c]
            for rec in reader:
                if "arm" in rec:
                    param, value = "arm", rec["arm"]
                else:
                    param, value = rec["param"], rec["value"]
                for m in metric_cols:
                    rows.append([CSV_SCHEMA_VERSION, source, param, value, m, rec[m]])
    return rows


def cmd_export_figures(args):
    out = _out_dir(args)
    inputs = args.inputs or [p for p in (os.path.join(out, "sweep.csv"), os.path.join(out, "ablation.csv"))
                             if os.path.exists(p)]
    if not inputs:
        raise DGCLError(f"no sweep/ablation CSVs given and none found in {out}")
    for p in inputs:
        if not os.path.exists(p):
            raise DGCLError(f"input CSV not found: {p}")
    path = os.path.join(out, "figures_long.csv")
    rows = export_long(inputs)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["schema", "source", "param", "value", "metric", "score"])
        w.writerows(rows)
    _print_json({"csv": path, "rows": len(rows)})
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (INI-style key = value)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dgcl", description="Diffusion-augmented graph contrastive CF")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.json)")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("ablate", parents=[common], help="run every ablation arm")
    p.add_argument("--seeds", type=int, nargs="+", help="seeds to take the median over")
    p.set_defaults(func=cmd_ablate)
    p = sub.add_parser("sweep", parents=[common], help="hyperparameter sweep")
    p.add_argument("--param", choices=sorted(SWEEP_GRID) + ["all", "grid"], default="all",
                   help="one axis, every axis in turn (all), or the full product (grid)")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("export-figures", parents=[common], help="sweep/ablation CSVs to long format")
    p.add_argument("inputs", nargs="*", help="CSV files (default: OUT/sweep.csv and OUT/ablation.csv)")
    p.set_defaults(func=cmd_export_figures)
    return parser


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DGCLError as exc:
        print(f"dgcl {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
