"""Experiment core shared by the CLI, the demos and the acceptance suite.

An :class:`ExperimentConfig` names a task, model and hyperparameters;
:func:`run_seed` trains one seed of it and :func:`run_experiment` runs the
seed list. Output files all start with a ``#`` header carrying the tool
version, config hash and seeds.
"""
from __future__ import annotations

import csv
import functools
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import autodiff as ad
from .baseline_mf import train_mf
from .logic_ast import GenConfig, LabeledExpr, generate_dataset, read_expressions, split_dataset, variables
from .nln_model import NlnConfig, init_model, save_checkpoint
from .rec_pipeline import RatingFormatError, load_ratings, prepare
from .training import (
    SPLITS, ConfigError, TrainConfig, aggregate, config_hash, rank_cases, train_pairwise,
    train_pointwise,
)

TASKS = ("sim", "rec-preference", "rec-topk")
TASK_METRIC = {"sim": "accuracy", "rec-preference": "auc", "rec-topk": "ndcg@10"}
SWEEP_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "sim"
    model: str = "nln"                # nln | biasedmf
    data: str | None = None           # expression file (sim) or ratings file (rec)
    data_format: str = "ml100k"
    max_users: int | None = None
    gen: GenConfig = field(default_factory=GenConfig)
    nln: NlnConfig = field(default_factory=NlnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mf_l2: float = 1e-5
    candidates: int = 100
    out: str = "runs/default"
    id: str = "exp"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.model not in ("nln", "biasedmf"):
            raise ConfigError(f"model must be nln or biasedmf, got {self.model!r}")
        if self.task == "sim" and self.model != "nln":
            raise ConfigError("the simulated task trains the NLN only")
        if self.task != "sim" and not self.data:
            raise ConfigError(f"task {self.task} needs a ratings file (data)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen"]["clauses"] = list(self.gen.clauses)
        d["gen"]["literals"] = list(self.gen.literals)
        d["train"] = self.train.to_dict()
        return d

    def hash(self) -> str:
        """Identifies the experiment; the output directory is left out."""
        d = self.to_dict()
        d.pop("out")
        return config_hash(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            if "gen" in d:
                g = dict(d["gen"])
                for k in ("clauses", "literals"):
                    if k in g:
                        g[k] = tuple(g[k])
                d["gen"] = GenConfig(**g)
            if "nln" in d:
                d["nln"] = NlnConfig(**d["nln"])
            train = dict(d.get("train", {}))
            if "eval_metric" not in train:
                train["eval_metric"] = TASK_METRIC.get(d.get("task", "sim"), "accuracy")
            d["train"] = TrainConfig.from_dict(train)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**d)


# ---------------------------------------------------------------------------
# experiment core (shared by train, sweep and the acceptance suite)


@dataclass
class SeedRun:
    seed: int
    metrics: dict          # test-split metrics at the best epoch, plus best_epoch
    curves: list           # rows for curves.csv
    model: object = None
    truth: np.ndarray | None = None


@functools.lru_cache(maxsize=4)
def _rec_data(path: str, fmt: str, max_users):
    try:
        return prepare(load_ratings(path, fmt), max_users)
    except FileNotFoundError as exc:
        raise DataError(f"ratings file not found: {path}") from exc
    except RatingFormatError as exc:
        raise DataError(str(exc)) from exc


def _expr_file_meta(path: str) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, val = line[1:].strip().partition(":")
            meta[key.strip()] = val.strip()
    return meta


def _sim_data(exp: ExperimentConfig, seed: int):
    """(n_vars, labeled expressions, truth or None) for one seed."""
    if exp.data is None:
        truth, data = generate_dataset(replace(exp.gen, seed=seed))
        return exp.gen.n, data, truth
    try:
        meta = _expr_file_meta(exp.data)
        n_vars = int(meta["n_vars"]) if "n_vars" in meta else None
        data = read_expressions(exp.data, n_vars)
    except FileNotFoundError as exc:
        raise DataError(f"expression file not found: {exp.data}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if not data:
        raise DataError(f"{exp.data}: no expressions")
    if n_vars is None:
        n_vars = 1 + max(max(variables(x.expr)) for x in data)
    truth_path = Path(exp.data + ".assignment")
    truth = read_assignment(truth_path) if truth_path.exists() else None
    return n_vars, data, truth


def _curve_rows(seed: int, stats) -> list[dict]:
    rows = []
    for st in stats:
        reg = st.report.as_row()
        for split in SPLITS:
            rows.append({
                "seed": seed, "epoch": st.epoch, "split": split,
                "loss": st.loss.get(split, float("nan")),
                "metric": st.metric.get(split, float("nan")),
                **reg,
                "rmse": st.extra.get(split, {}).get("rmse", float("nan")),
            })
    return rows


def _best_metrics(stats, best_epoch: int) -> dict:
    st = next(s for s in stats if s.epoch == best_epoch)
    out = {k: float(v) for k, v in st.extra["test"].items()}
    out["best_epoch"] = float(best_epoch)
    return out


def run_seed(exp: ExperimentConfig, seed: int, out_dir=None, on_epoch=None) -> SeedRun:
    """Train one seed of ``exp``; writes checkpoints under ``out_dir`` when given."""
    seed_dir = None if out_dir is None else Path(out_dir) / f"seed-{seed}"
    if seed_dir is not None:
        seed_dir.mkdir(parents=True, exist_ok=True)
    cfg = exp.train
    init_rng = ad.make_rng(seed, "init")
    nln_cfg = replace(exp.nln, dropout=cfg.dropout)
    truth = None
    if exp.task == "sim":
        n_vars, data, truth = _sim_data(exp, seed)
        train, valid, test = split_dataset(data, seed=seed)
        model = init_model(nln_cfg, n_vars, init_rng, seed)
        res = train_pointwise(train, valid, test, model, cfg, seed,
                              checkpoint_dir=seed_dir, on_epoch=on_epoch)
    else:
        data = _rec_data(exp.data, exp.data_format, exp.max_users)
        if exp.task == "rec-preference":
            split = {k: [LabeledExpr(data.expr(r), r.label) for r in getattr(data, k)]
                     for k in SPLITS}
            if exp.model == "nln":
                model = init_model(nln_cfg, data.n_items, init_rng, seed)
                res = train_pointwise(split["train"], split["valid"], split["test"], model, cfg,
                                      seed, checkpoint_dir=seed_dir, on_epoch=on_epoch)
            else:
                res = train_mf(data, "preference", cfg, seed, exp.nln.d, exp.mf_l2,
                               on_epoch=on_epoch, checkpoint_dir=seed_dir)
        else:
            # candidate sets depend only on the seed, so NLN and MF rank identical lists
            eval_rng = ad.make_rng(seed, "eval")
            valid_cases = rank_cases(data.valid, data, eval_rng, exp.candidates)
            test_cases = rank_cases(data.test, data, eval_rng, exp.candidates)
            if exp.model == "nln":
                model = init_model(nln_cfg, data.n_items, init_rng, seed)
                pos = [r for r in data.train if r.label]
                res = train_pairwise(pos, valid_cases, test_cases, model, cfg, seed, data,
                                     checkpoint_dir=seed_dir, on_epoch=on_epoch)
            else:
                res = train_mf(data, "topk", cfg, seed, exp.nln.d, exp.mf_l2,
                               valid_cases=valid_cases, test_cases=test_cases,
                               on_epoch=on_epoch, checkpoint_dir=seed_dir)
    for st in res.stats:
        if not np.isfinite(st.metric["valid"]):
            raise FloatingPointError(f"non-finite validation metric at epoch {st.epoch}")
    if seed_dir is not None:
        if exp.model == "nln":
            extra = {"config_hash": np.frombuffer(exp.hash().encode(), np.uint8)}
            if truth is not None:
                extra["truth"] = truth
                write_assignment(seed_dir / "assignment.txt", truth, _header(exp, [seed]))
            save_checkpoint(seed_dir / "best.npz", res.model, **extra)
        else:
            np.savez(seed_dir / "best-mf.npz",
                     **{k: getattr(res.model, k).data for k in ("mu", "b_u", "b_i", "P", "Q")})
    return SeedRun(seed, _best_metrics(res.stats, res.best_epoch),
                   _curve_rows(seed, res.stats), res.model, truth)


def run_experiment(exp: ExperimentConfig, out_dir=None, jobs: int = 1,
                   on_epoch=None) -> list[SeedRun]:
    """All seeds of ``exp``, returned in seed-list order whatever ``jobs`` is."""
    seeds = list(exp.train.seeds)
    if jobs > 1 and len(seeds) > 1:
        from joblib import Parallel, delayed

        runs = Parallel(n_jobs=jobs)(delayed(run_seed)(exp, s, out_dir) for s in seeds)
    else:
        runs = [run_seed(exp, s, out_dir, on_epoch) for s in seeds]
    return sorted(runs, key=lambda r: seeds.index(r.seed))


def summarize(runs: Sequence[SeedRun]) -> dict[str, tuple[float, float]]:
    """Mean and standard error per metric; a single seed reports NaN error."""
    per_seed = [r.metrics for r in runs]
    if len(per_seed) == 1:
        return {k: (v, float("nan")) for k, v in per_seed[0].items()}
    return aggregate(per_seed)


# ---------------------------------------------------------------------------
# files


def _header(exp: ExperimentConfig | None, seeds, chash: str | None = None) -> str:
    chash = chash or (exp.hash() if exp is not None else "none")
    return (f"nlogic {__version__}\nconfig_hash: {chash}\n"
            f"seeds: {','.join(str(s) for s in seeds)}")


def _write_csv(path: Path, header: str, columns: Sequence[str], rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path) -> list[dict]:
    """Rows of a CSV written by this tool (comment header skipped)."""
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def write_assignment(path, truth, header: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        fh.writelines(f"{int(t)}\n" for t in truth)


def read_assignment(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        vals = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if any(v not in ("0", "1") for v in vals):
        raise DataError(f"{path}: assignment entries must be 0 or 1")
    return np.array([v == "1" for v in vals], dtype=bool)


CURVE_COLUMNS = ["seed", "epoch", "split", "loss", "metric"] + [f"r{i}" for i in range(1, 11)] + [
    "length", "param", "rmse"]
RESULT_COLUMNS = ["experiment", "seed", "metric", "value", "stderr"]


def _result_rows(exp_id: str, runs: Sequence[SeedRun]) -> list[dict]:
    rows = []
    for r in runs:
        for k, v in sorted(r.metrics.items()):
            rows.append({"experiment": exp_id, "seed": r.seed, "metric": k, "value": v, "stderr": ""})
    for k, (mean, se) in sorted(summarize(runs).items()):
        rows.append({"experiment": exp_id, "seed": "all", "metric": k, "value": mean, "stderr": se})
    return rows
