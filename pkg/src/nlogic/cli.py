"""Command-line front end: ``simgen``, ``train``, ``sweep``, ``export-embeddings``.

Configuration precedence, lowest to highest: built-in defaults, the JSON
document given with ``--config``, explicit flags, then ``NLOGIC_SEED`` (which
replaces the seed list with that one seed).

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime or numeric error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import metrics as M
from .experiment import (
    CURVE_COLUMNS, EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_RUNTIME, RESULT_COLUMNS,
    SWEEP_GRID, TASKS, DataError, ExperimentConfig, _header, _result_rows,
    _write_csv, read_assignment, read_csv, run_experiment, summarize, write_assignment,
)
from .logic_ast import ExprSyntaxError, GenConfig, GenConfigError, VariableRangeError, generate_dataset, write_expressions
from .nln_model import load_checkpoint
from .rec_pipeline import RatingFormatError
from .training import ConfigError, config_hash

SWEEP_COLUMNS = ["param", "grid_value", "seed", "metric", "value"]
SWEEP_SUMMARY_COLUMNS = ["param", "grid_value", "metric", "mean", "stderr"]


# ---------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment document")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--model", choices=("nln", "biasedmf"))
    p.add_argument("--data", help="expression file (sim) or ratings file (rec tasks)")
    p.add_argument("--data-format", choices=("ml100k", "amazon-csv"))
    p.add_argument("--max-users", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--id", help="experiment id used in results rows")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--epochs", type=int, dest="max_epochs")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lambda-l", type=float)
    p.add_argument("--lambda-len", type=float)
    p.add_argument("--lambda-theta", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int, help="variables when generating sim data inline")
    p.add_argument("--m", type=int, help="expressions when generating sim data inline")
    p.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel")


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _env_seed() -> int | None:
    raw = os.environ.get("NLOGIC_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"NLOGIC_SEED must be an integer, got {raw!r}") from None


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    doc = _load_json(args.config) if args.config else {}
    for k in ("task", "model", "data", "data_format", "max_users", "out", "id"):
        v = getattr(args, k, None)
        if v is not None:
            doc[k] = v
    train = dict(doc.get("train", {}))
    for k in ("max_epochs", "lr", "batch_size", "patience", "dropout"):
        v = getattr(args, k, None)
        if v is not None:
            train[k] = v
    if args.seeds is not None:
        train["seeds"] = args.seeds
    env = _env_seed()
    if env is not None:
        train["seeds"] = [env]
    reg = dict(train.get("reg_weights", {}))
    for k in ("lambda_l", "lambda_len", "lambda_theta"):
        v = getattr(args, k, None)
        if v is not None:
            reg[k] = v
    if reg:
        train["reg_weights"] = reg
    doc["train"] = train
    if args.d is not None:
        doc["nln"] = {**doc.get("nln", {}), "d": args.d}
    gen = dict(doc.get("gen", {}))
    for k in ("n", "m"):
        v = getattr(args, k, None)
        if v is not None:
            gen[k] = v
    if gen:
        doc["gen"] = gen
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simgen(args) -> int:
    full = _load_json(args.config) if args.config else {}
    doc = dict(full.get("gen", {}))
    out = args.out or full.get("data")
    if not out:
        raise ConfigError("simgen needs --out or a 'data' path in the config")
    for k in ("n", "m", "seed"):
        v = getattr(args, k)
        if v is not None:
            doc[k] = v
    for k in ("clauses", "literals"):
        v = getattr(args, k)
        if v is not None:
            doc[k] = v
    env = _env_seed()
    if env is not None:
        doc["seed"] = env
    for k in ("clauses", "literals"):
        if k in doc:
            doc[k] = tuple(doc[k])
    try:
        cfg = GenConfig(**doc)
        cfg.validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    truth, data = generate_dataset(cfg)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    chash = config_hash(asdict(cfg))
    header = (_header(None, [cfg.seed], chash) + f"\nn_vars: {cfg.n}\nm: {cfg.m}\n"
              f"clauses: {cfg.clauses[0]}-{cfg.clauses[1]}\n"
              f"literals: {cfg.literals[0]}-{cfg.literals[1]}")
    write_expressions(out, data, header)
    write_assignment(str(out) + ".assignment", truth, _header(None, [cfg.seed], chash))
    rate = float(np.mean([x.label for x in data]))
    print(f"wrote {len(data)} expressions to {out}; label base rate {rate:.4f}")
    return EXIT_OK


def _progress(exp: ExperimentConfig):
    def cb(st):
        val = st.metric.get("valid", float("nan"))
        print(f"  epoch {st.epoch:3d}  valid {exp.train.eval_metric} {val:.4f}", flush=True)
    return cb


def cmd_train(args) -> int:
    exp = build_config(args)
    out = Path(exp.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(exp.to_dict(), indent=2, sort_keys=True))
    print(f"experiment {exp.id} ({exp.task}, {exp.model}) config {exp.hash()} -> {out}")
    runs = run_experiment(exp, out, args.jobs, _progress(exp))
    header = _header(exp, exp.train.seeds)
    _write_csv(out / "curves.csv", header, CURVE_COLUMNS, [row for r in runs for row in r.curves])
    _write_csv(out / "results.csv", header, RESULT_COLUMNS, _result_rows(exp.id, runs))
    for k, (mean, se) in sorted(summarize(runs).items()):
        print(f"{k:>12s}  {mean:.4f} +- {se:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = build_config(args)
    grid = args.grid if args.grid else list(SWEEP_GRID)
    if not grid:
        raise ConfigError("sweep grid is empty")
    out = Path(base.out)
    rows, summary = [], []
    for value in grid:
        reg = replace(base.train.reg_weights, **{args.param: value})
        exp = replace(base, train=replace(base.train, reg_weights=reg), id=f"{args.param}={value:g}")
        print(f"{exp.id}: config {exp.hash()}", flush=True)
        runs = run_experiment(exp, None, args.jobs)
        metric = exp.train.eval_metric
        for r in runs:
            rows.append({"param": args.param, "grid_value": value, "seed": r.seed,
                         "metric": metric, "value": r.metrics[metric]})
        mean, se = summarize(runs)[metric]
        summary.append({"param": args.param, "grid_value": value, "metric": metric,
                        "mean": mean, "stderr": se})
        print(f"  {metric} {mean:.4f} +- {se:.4f}", flush=True)
    header = _header(base, base.train.seeds)
    _write_csv(out / "sweep.csv", header, SWEEP_COLUMNS, rows)
    _write_csv(out / "sweep-summary.csv", header, SWEEP_SUMMARY_COLUMNS, summary)
    return EXIT_OK


def export_embeddings(checkpoint, out, truth=None) -> M.ClusterDiag | None:
    """Write one checkpoint's variable embeddings; returns the cluster diagnostic if truth is known."""
    try:
        model, extra = load_checkpoint(checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {checkpoint}: {exc}") from exc
    if truth is None and "truth" in extra:
        truth = extra["truth"].astype(bool)
    if truth is None:
        sidecar = Path(checkpoint).parent / "assignment.txt"
        if sidecar.exists():
            truth = read_assignment(sidecar)
    emb = model.embeddings.data
    if truth is not None and len(truth) != len(emb):
        raise DataError(f"truth has {len(truth)} entries for {len(emb)} embeddings")
    chash = bytes(extra["config_hash"]).decode() if "config_hash" in extra else "none"
    d = emb.shape[1]
    cols = ["var_id", "truth"] + [f"x_{j}" for j in range(1, d + 1)]
    rows = []
    for i, vec in enumerate(emb):
        row = {"var_id": i, "truth": "" if truth is None else int(truth[i])}
        row.update({f"x_{j + 1}": float(x) for j, x in enumerate(vec)})
        rows.append(row)
    header = _header(None, [model.seed], chash)
    diag = None
    if truth is not None:
        diag = M.cluster_variables(emb, truth)
        header += f"\npurity: {diag.purity:.6f}\ncluster_sizes: {diag.sizes[0]},{diag.sizes[1]}"
    _write_csv(Path(out), header, cols, rows)
    if diag is not None:
        Path(str(out) + ".cluster.json").write_text(json.dumps(asdict(diag)))
    return diag


def read_embeddings(path) -> np.ndarray:
    rows = read_csv(path)
    keys = [k for k in rows[0] if k.startswith("x_")]
    return np.array([[float(r[k]) for k in keys] for r in rows])


def cmd_export(args) -> int:
    truth = read_assignment(args.truth) if args.truth else None
    src = Path(args.checkpoint)
    if src.is_dir():
        ckpts = sorted(src.glob("ckpt-*.npz"), key=lambda p: int(p.stem.split("-")[1]))
        if not ckpts:
            raise DataError(f"no ckpt-<epoch>.npz files in {src}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        targets = [(c, out / f"embeddings-epoch{c.stem.split('-')[1]}.csv") for c in ckpts]
    else:
        if not src.exists():
            raise DataError(f"checkpoint not found: {src}")
        targets = [(src, Path(args.out))]
    for ckpt, dest in targets:
        diag = export_embeddings(ckpt, dest, truth)
        msg = f"wrote {dest}"
        if diag is not None:
            msg += f"; 2-means purity {diag.purity:.4f}, sizes {diag.sizes}"
        print(msg)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nlogic", description="Neural logic network experiments.")
    p.add_argument("--version", action="version", version=f"nlogic {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("simgen", help="generate a simulated DNF expression file")
    g.add_argument("--config", help="JSON document; its 'gen' object is used")
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--clauses", type=int, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--literals", type=int, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="expression file; defaults to the config's 'data' path")
    g.set_defaults(func=cmd_simgen)

    t = sub.add_parser("train", help="train every seed; write curves.csv and results.csv")
    _add_experiment_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="grid over one regularizer weight; write sweep.csv")
    _add_experiment_flags(s)
    s.add_argument("--param", choices=("lambda_l", "lambda_len"), default="lambda_l")
    s.add_argument("--grid", type=float, nargs="+")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("export-embeddings", help="dump variable embeddings (and 2-means purity)")
    e.add_argument("--checkpoint", required=True, help="checkpoint file, or a directory of ckpt-*.npz")
    e.add_argument("--out", required=True)
    e.add_argument("--truth", help="assignment file (one 0/1 per variable)")
    e.set_defaults(func=cmd_export)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GenConfigError) as exc:
        print(f"nlogic: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, RatingFormatError, ExprSyntaxError, VariableRangeError) as exc:
        print(f"nlogic: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - top-level boundary maps everything else to 3
        print(f"nlogic: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
