"""Point-wise and pair-wise training loops, early stopping and seed aggregation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from . import metrics as M
from .autodiff import AdamState, Tape, Value
from .nln_model import NLN, build_batch, predict, save_checkpoint, load_checkpoint, score_with_targets
from .regularizers import RegReport, RegWeights, total_loss

PROB_EPS = 1e-7
HIGHER_IS_BETTER = {"accuracy": True, "auc": True, "ndcg@10": True, "rmse": False}
SPLITS = ("train", "valid", "test")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    dropout: float = 0.2
    reg_weights: RegWeights = field(default_factory=RegWeights)
    seeds: tuple = (0, 1, 2, 3, 4)
    eval_metric: str = "accuracy"

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigError("batch_size and patience must be >= 1")
        if self.eval_metric not in HIGHER_IS_BETTER:
            raise ConfigError(f"unknown eval metric {self.eval_metric!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("reg_weights"), dict):
            d["reg_weights"] = RegWeights(**d["reg_weights"])
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)


def config_hash(*parts) -> str:
    blob = json.dumps([p.to_dict() if hasattr(p, "to_dict") else p for p in parts],
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class EpochStats:
    epoch: int
    loss: dict          # split -> task loss
    metric: dict        # split -> value of the configured eval metric
    extra: dict = field(default_factory=dict)  # split -> {metric name: value}
    report: RegReport = field(default_factory=RegReport)
    skipped: int = 0


class TrainResult(NamedTuple):
    model: object
    stats: list
    best_epoch: int


# ---------------------------------------------------------------------------
# losses


def cross_entropy(p: Value, y) -> Value:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(y, dtype=np.float64).reshape(p.data.shape)
    pc = ad.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    ll = ad.mul(ad.log(pc), y) + ad.mul(ad.log(1.0 - pc), 1.0 - y)
    return -ad.mean(ll)


def pairwise_loss(p_pos: Value, p_neg: Value) -> Value:
    """Mean of ``-ln sigmoid(p_pos - p_neg)``."""
    return -ad.mean(ad.log_sigmoid(p_pos - p_neg))


def _np_cross_entropy(p, y) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


# ---------------------------------------------------------------------------
# shared epoch loop


class Session:
    """Everything that evolves during training: parameters, Adam moments, RNG streams."""

    def __init__(self, params: Sequence[Value], seed: int):
        self.params = list(params)
        self.adam = AdamState.for_params(self.params)
        self.seed = seed
        self.rng_shuffle = ad.make_rng(seed, "shuffle")
        self.rng_dropout = ad.make_rng(seed, "dropout")
        self.rng_neg = ad.make_rng(seed, "negative-sampling")
        self.epoch = 0

    def _rngs(self):
        return {"shuffle": self.rng_shuffle, "dropout": self.rng_dropout, "neg": self.rng_neg}

    def state_arrays(self) -> dict:
        out = {f"adam_m{i}": m for i, m in enumerate(self.adam.m)}
        out.update({f"adam_v{i}": v for i, v in enumerate(self.adam.v)})
        out["adam_t"] = self.adam.t
        out["epoch"] = self.epoch
        rng_state = {k: r.bit_generator.state for k, r in self._rngs().items()}
        out["rng"] = np.frombuffer(json.dumps(rng_state).encode(), dtype=np.uint8)
        return out

    def load_state_arrays(self, extra: dict) -> None:
        self.adam.m = [extra[f"adam_m{i}"].copy() for i in range(len(self.params))]
        self.adam.v = [extra[f"adam_v{i}"].copy() for i in range(len(self.params))]
        self.adam.t = int(extra["adam_t"])
        self.epoch = int(extra["epoch"])
        states = json.loads(bytes(extra["rng"]).decode())
        for k, r in self._rngs().items():
            r.bit_generator.state = states[k]

    def step(self, loss: Value, tape: Tape, lr: float) -> None:
        ad.backward(loss, tape)
        tape.release()
        ad.adam_step(self.params, [p.grad for p in self.params], self.adam, lr)
        ad.zero_grad(self.params)


def _mean_reports(reports: list[RegReport]) -> RegReport:
    if not reports:
        return RegReport()
    return RegReport(
        r=np.mean([r.r for r in reports], axis=0),
        length=float(np.mean([r.length for r in reports])),
        param=float(np.mean([r.param for r in reports])),
        degenerate=int(sum(r.degenerate for r in reports)),
    )


def fit(session: Session, cfg: TrainConfig, n_train: int,
        batch_loss: Callable[[np.ndarray], tuple[Value, RegReport, int]],
        evaluate: Callable[[], tuple[dict, dict, dict]],
        checkpoint: Callable[[Path], None] | None = None,
        checkpoint_dir=None, on_epoch: Callable[[EpochStats], None] | None = None) -> tuple[list, int]:
    """Mini-batch Adam with early stopping; leaves the best parameters in place.

    ``batch_loss(indices)`` returns (loss node, report, skipped count) and must be
    called inside the tape opened here; ``evaluate()`` returns loss/metric/extra
    dicts keyed by split.
    """
    if n_train == 0:
        raise ConfigError("empty training split")
    higher = HIGHER_IS_BETTER[cfg.eval_metric]
    stats: list[EpochStats] = []

    def record(reports, skipped):
        loss, metric, extra = evaluate()
        st = EpochStats(session.epoch, loss, metric, extra, _mean_reports(reports), skipped)
        stats.append(st)
        if on_epoch:
            on_epoch(st)
        return st

    st = record([], 0)
    best_val, best_epoch = st.metric["valid"], session.epoch
    best = [p.data.copy() for p in session.params]
    bad = 0
    save = checkpoint is not None and checkpoint_dir is not None
    if save and session.epoch == 0:
        checkpoint(Path(checkpoint_dir) / "ckpt-0.npz")
    while session.epoch < cfg.max_epochs:
        order = session.rng_shuffle.permutation(n_train)
        reports, skipped = [], 0
        for i in range(0, n_train, cfg.batch_size):
            with Tape() as tape:
                loss, report, k = batch_loss(order[i : i + cfg.batch_size])
            skipped += k
            if loss is None:
                continue
            session.step(loss, tape, cfg.lr)
            reports.append(report)
        session.epoch += 1
        st = record(reports, skipped)
        val = st.metric["valid"]
        if (val > best_val) if higher else (val < best_val):
            best_val, best_epoch, bad = val, session.epoch, 0
            best = [p.data.copy() for p in session.params]
            if save:
                checkpoint(Path(checkpoint_dir) / f"ckpt-{session.epoch}.npz")
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    for p, b in zip(session.params, best):
        p.data[...] = b
    return stats, best_epoch


def _nln_checkpointer(model: NLN, session: Session, cfg: TrainConfig):
    def save(path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, model, config_hash=np.frombuffer(config_hash(cfg).encode(), np.uint8),
                        **session.state_arrays())
    return save


def _resume(model: NLN, session: Session, path) -> None:
    saved, extra = load_checkpoint(path)
    model.load_state(saved)
    session.load_state_arrays(extra)


# ---------------------------------------------------------------------------
# point-wise (cross-entropy)


def _split_eval(model: NLN, exprs, labels) -> tuple[float, dict]:
    p = predict(list(exprs), model)
    y = np.asarray(labels, dtype=bool)
    extra = {"accuracy": M.accuracy(p, y), "rmse": M.rmse(p, y)}
    if y.any() and not y.all():
        extra["auc"] = M.auc(p, y)
    else:
        extra["auc"] = float("nan")
    return _np_cross_entropy(p, y), extra


def train_pointwise(train, valid, test, model: NLN, cfg: TrainConfig, seed: int,
                    checkpoint_dir=None, on_epoch=None, resume=None) -> TrainResult:
    """Cross-entropy training on items with ``.expr`` and ``.label``."""
    for name, split in (("train", train), ("valid", valid), ("test", test)):
        if not split:
            raise ConfigError(f"empty {name} split")
    data = {"train": train, "valid": valid, "test": test}
    exprs = {k: [x.expr for x in v] for k, v in data.items()}
    labels = {k: np.array([x.label for x in v], dtype=bool) for k, v in data.items()}
    model.cfg = replace(model.cfg, dropout=cfg.dropout)
    session = Session(model.trainable(), seed)
    if resume is not None:
        _resume(model, session, resume)

    def batch_loss(idx):
        g = build_batch([exprs["train"][i] for i in idx], model, True,
                        session.rng_shuffle, session.rng_dropout)
        p, bad = model.sim_rows(g.roots, ad.repeat_row(model.anchor, len(idx)))
        task = cross_entropy(p, labels["train"][idx])
        loss, report = total_loss(task, g.w, model, cfg.reg_weights, True, session.rng_dropout)
        report.degenerate += bad
        return loss, report, 0

    def evaluate():
        loss, metric, extra = {}, {}, {}
        for k in SPLITS:
            loss[k], extra[k] = _split_eval(model, exprs[k], labels[k])
            metric[k] = extra[k][cfg.eval_metric]
        return loss, metric, extra

    stats, best = fit(session, cfg, len(train), batch_loss, evaluate,
                      _nln_checkpointer(model, session, cfg), checkpoint_dir, on_epoch)
    return TrainResult(model, stats, best)


# ---------------------------------------------------------------------------
# pair-wise (top-K)


@dataclass
class RankCase:
    """One leave-one-out test case: a shared prefix and candidate items (positive first)."""
    prefix: object
    items: np.ndarray
    user: int = -1


def rank_cases(exprs, data, rng, k: int = 100) -> list[RankCase]:
    """Leave-one-out candidate sets for the positive expressions in ``exprs``."""
    from .rec_pipeline import history_node, leave_one_out_candidates

    cases = []
    for r in exprs:
        if not r.label:
            continue
        cands = leave_one_out_candidates(r, data.sampler, rng, k)
        items = np.array([data.item_index[c.target] for c in cands], dtype=np.intp)
        cases.append(RankCase(history_node(r, data.item_index), items, r.user))
    return cases


def nln_ranks(model: NLN, cases: Sequence[RankCase]) -> np.ndarray:
    scores = score_with_targets([c.prefix for c in cases], [c.items for c in cases], model)
    return np.array([M.rank_candidates(s, 0) for s in scores])


def train_pairwise(train, valid_cases: Sequence[RankCase], test_cases: Sequence[RankCase],
                   model: NLN, cfg: TrainConfig, seed: int, data,
                   checkpoint_dir=None, on_epoch=None, resume=None) -> TrainResult:
    """BPR-style training on positive-target expressions with one fresh negative each.

    ``data`` is the :class:`~nlogic.rec_pipeline.RecData` supplying the item map
    and the negative sampler. Validation uses nDCG@10 on ``valid_cases``.
    """
    from .rec_pipeline import with_target

    pos = [r for r in train if r.label]
    if len(pos) != len(train):
        raise ConfigError("pairwise training takes positive-target expressions only")
    if not pos or not valid_cases or not test_cases:
        raise ConfigError("empty split")
    model.cfg = replace(model.cfg, dropout=cfg.dropout)
    session = Session(model.trainable(), seed)
    if resume is not None:
        _resume(model, session, resume)

    def batch_loss(idx):
        plus, minus = [], []
        skipped = 0
        for i in idx:
            neg = data.sampler.sample(pos[i].user, session.rng_neg)
            if neg is None:
                skipped += 1
                continue
            plus.append(data.expr(pos[i]))
            minus.append(data.expr(with_target(pos[i], neg)))
        if not plus:
            return None, None, skipped
        g = build_batch(plus + minus, model, True, session.rng_shuffle, session.rng_dropout)
        p, bad = model.sim_rows(g.roots, ad.repeat_row(model.anchor, len(plus) + len(minus)))
        n = len(plus)
        task = pairwise_loss(ad.slice_rows(p, 0, n), ad.slice_rows(p, n, 2 * n))
        loss, report = total_loss(task, g.w, model, cfg.reg_weights, True, session.rng_dropout)
        report.degenerate += bad
        return loss, report, skipped

    def evaluate():
        loss, metric, extra = {"train": float("nan")}, {"train": float("nan")}, {"train": {}}
        for k, cases in (("valid", valid_cases), ("test", test_cases)):
            ranks = nln_ranks(model, cases)
            metric[k] = M.mean_ndcg(ranks, 10)
            loss[k] = float("nan")
            extra[k] = {"ndcg@10": metric[k], "mean_rank": float(np.mean(ranks))}
        return loss, metric, extra

    stats, best = fit(session, cfg, len(pos), batch_loss, evaluate,
                      _nln_checkpointer(model, session, cfg), checkpoint_dir, on_epoch)
    return TrainResult(model, stats, best)


# ---------------------------------------------------------------------------
# seeds


def aggregate(per_seed: Sequence[dict]) -> dict[str, tuple[float, float]]:
    """Mean and standard error (sample std / sqrt k) of every metric across seeds."""
    if len(per_seed) < 2:
        raise ConfigError("need at least two seeds to report a standard error")
    keys = sorted(set().union(*per_seed))
    out = {}
    for k in keys:
        vals = np.array([d[k] for d in per_seed], dtype=np.float64)
        out[k] = (float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals))))
    return out


def run_seeds(cfg: TrainConfig, experiment: Callable[[int], dict], jobs: int = 1) -> tuple[dict, list]:
    """Run ``experiment(seed)`` for every configured seed; returns (aggregate, per-seed)."""
    seeds = list(cfg.seeds)
    if jobs > 1:
        from joblib import Parallel, delayed

        per_seed = Parallel(n_jobs=jobs)(delayed(experiment)(s) for s in seeds)
    else:
        per_seed = [experiment(s) for s in seeds]
    return aggregate(per_seed), per_seed
