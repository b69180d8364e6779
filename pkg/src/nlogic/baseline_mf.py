"""Biased matrix factorisation baseline on the same targets as the NLN.

MF ignores the history part of each expression and scores only (user, target).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import metrics as M
from .autodiff import Value
from .training import (
    ConfigError, RankCase, Session, TrainConfig, TrainResult, _np_cross_entropy,
    config_hash, cross_entropy, fit, pairwise_loss,
)
from .regularizers import RegReport

INIT_STD = 0.01


@dataclass
class MfParams:
    mu: Value   # shape (1,)
    b_u: Value
    b_i: Value
    P: Value
    Q: Value

    @property
    def d(self) -> int:
        return self.P.data.shape[1]

    def all(self) -> list[Value]:
        return [self.mu, self.b_u, self.b_i, self.P, self.Q]


def init_mf(n_users: int, n_items: int, d: int, rng: np.random.Generator) -> MfParams:
    return MfParams(
        mu=Value(np.zeros(1)),
        b_u=Value(np.zeros(n_users)),
        b_i=Value(np.zeros(n_items)),
        P=Value(rng.normal(0.0, INIT_STD, (n_users, d))),
        Q=Value(rng.normal(0.0, INIT_STD, (n_items, d))),
    )


def mf_score(u, i, params: MfParams):
    """``mu + b_u[u] + b_i[i] + P[u] . Q[i]`` for scalar or array ids (numpy, no graph)."""
    u = np.asarray(u, dtype=np.intp)
    i = np.asarray(i, dtype=np.intp)
    for ids, n, name in ((u, len(params.b_u.data), "user"), (i, len(params.b_i.data), "item")):
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"{name} id out of range [0, {n})")
    s = (params.mu.data[0] + params.b_u.data[u] + params.b_i.data[i]
         + np.sum(params.P.data[u] * params.Q.data[i], axis=-1))
    return float(s) if s.ndim == 0 else s


def mf_score_node(u: np.ndarray, i: np.ndarray, params: MfParams) -> Value:
    """Differentiable batch version of :func:`mf_score`."""
    n = len(u)
    dot = ad.row_sum(ad.mul(ad.take(params.P, u), ad.take(params.Q, i)))
    mu = ad.take(params.mu, np.zeros(n, dtype=np.intp))
    return dot + ad.take(params.b_u, u) + ad.take(params.b_i, i) + mu


def _l2(params: MfParams) -> Value:
    out = ad.l2_norm_sq(params.mu)
    for p in params.all()[1:]:
        out = out + ad.l2_norm_sq(p)
    return out


def user_index(data) -> dict[int, int]:
    users = sorted({r.user for split in (data.train, data.valid, data.test) for r in split})
    return {u: j for j, u in enumerate(users)}


def mf_ranks(params: MfParams, cases: Sequence[RankCase], users: dict[int, int]) -> np.ndarray:
    out = []
    for c in cases:
        s = mf_score(np.full(len(c.items), users[c.user]), c.items, params)
        out.append(M.rank_candidates(s, 0))
    return np.array(out)


def train_mf(data, task: str, cfg: TrainConfig, seed: int, d: int = 64, l2: float = 1e-5,
             valid_cases: Sequence[RankCase] = (), test_cases: Sequence[RankCase] = (),
             on_epoch=None, checkpoint_dir=None) -> TrainResult:
    """Fit BiasedMF on ``data`` (a prepared rec dataset).

    ``task`` is ``"preference"`` (cross-entropy on sigmoid(score), all train
    targets, selected by ``cfg.eval_metric``) or ``"topk"`` (pair-wise against
    one sampled negative per positive, selected by nDCG@10 on ``valid_cases``).
    ``l2`` weights the summed squares of every parameter.
    """
    if task not in ("preference", "topk"):
        raise ConfigError(f"unknown MF task {task!r}")
    users = user_index(data)
    params = init_mf(len(users), data.n_items, d, ad.make_rng(seed, "init"))
    session = Session(params.all(), seed)

    def ids(rs, targets=None):
        u = np.array([users[r.user] for r in rs], dtype=np.intp)
        t = targets if targets is not None else [r.target for r in rs]
        return u, np.array([data.item_index[x] for x in t], dtype=np.intp)

    if task == "preference":
        train = list(data.train)
        u_tr, i_tr = ids(train)
        y_tr = np.array([r.label for r in train], dtype=bool)
        split_ids = {k: ids(v) + (np.array([r.label for r in v], dtype=bool),)
                     for k, v in (("train", data.train), ("valid", data.valid), ("test", data.test))}

        def batch_loss(idx):
            p = ad.sigmoid(mf_score_node(u_tr[idx], i_tr[idx], params))
            loss = cross_entropy(p, y_tr[idx]) + _l2(params) * l2
            return loss, RegReport(), 0

        def evaluate():
            loss, metric, extra = {}, {}, {}
            for k, (u, i, y) in split_ids.items():
                p = 1.0 / (1.0 + np.exp(-mf_score(u, i, params)))
                extra[k] = {"accuracy": M.accuracy(p, y), "rmse": M.rmse(p, y),
                            "auc": M.auc(p, y) if y.any() and not y.all() else float("nan")}
                loss[k] = _np_cross_entropy(p, y)
                metric[k] = extra[k][cfg.eval_metric]
            return loss, metric, extra

        n_train = len(train)
    else:
        pos = [r for r in data.train if r.label]
        if not pos or not valid_cases or not test_cases:
            raise ConfigError("empty split")
        u_tr, i_tr = ids(pos)

        def batch_loss(idx):
            keep, negs = [], []
            for j in idx:
                neg = data.sampler.sample(pos[j].user, session.rng_neg)
                if neg is not None:
                    keep.append(j)
                    negs.append(data.item_index[neg])
            if not keep:
                return None, None, len(idx)
            keep = np.array(keep, dtype=np.intp)
            s_pos = mf_score_node(u_tr[keep], i_tr[keep], params)
            s_neg = mf_score_node(u_tr[keep], np.array(negs, dtype=np.intp), params)
            loss = pairwise_loss(s_pos, s_neg) + _l2(params) * l2
            return loss, RegReport(), len(idx) - len(keep)

        def evaluate():
            loss, metric, extra = {"train": float("nan")}, {"train": float("nan")}, {"train": {}}
            for k, cases in (("valid", valid_cases), ("test", test_cases)):
                ranks = mf_ranks(params, cases, users)
                metric[k] = M.mean_ndcg(ranks, 10)
                loss[k] = float("nan")
                extra[k] = {"ndcg@10": metric[k], "mean_rank": float(np.mean(ranks))}
            return loss, metric, extra

        n_train = len(pos)

    def checkpoint(path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {k: getattr(params, k).data for k in ("mu", "b_u", "b_i", "P", "Q")}
        arrays["config_hash"] = np.frombuffer(config_hash(cfg).encode(), np.uint8)
        np.savez(path, **arrays, **session.state_arrays())

    stats, best = fit(session, cfg, n_train, batch_loss, evaluate, checkpoint,
                      checkpoint_dir, on_epoch)
    return TrainResult(params, stats, best)
