"""Evaluation metrics and the embedding-clustering diagnostic."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata
from sklearn.cluster import KMeans


class UndefinedMetricError(ValueError):
    pass


def _pair(preds, labels):
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise ValueError(f"preds {p.shape} and labels {y.shape} differ in length")
    if not p.size:
        raise ValueError("empty input")
    return p, y


def accuracy(preds, labels) -> float:
    """Fraction with ``(p >= 0.5) == label``; exactly 0.5 counts as predicted true."""
    p, y = _pair(preds, labels)
    return float(np.mean((p >= 0.5) == y.astype(bool)))


def rmse(preds, labels) -> float:
    p, y = _pair(preds, labels)
    return float(np.sqrt(np.mean((p - y.astype(np.float64)) ** 2)))


def auc(preds, labels) -> float:
    """Mann-Whitney AUC over all positive/negative pairs, ties counting one half."""
    p, y = _pair(preds, labels)
    y = y.astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(p)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rank_candidates(scores, positive_index: int = 0) -> int:
    """1-based rank of the positive; negatives tying with it rank above it."""
    s = np.asarray(scores, dtype=np.float64)
    neg = np.delete(s, positive_index)
    return int(1 + np.sum(neg >= s[positive_index]))


def ndcg_at_k(rank: int, k: int = 10) -> float:
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return float(1.0 / np.log2(rank + 1)) if rank <= k else 0.0


def mean_ndcg(ranks, k: int = 10) -> float:
    return float(np.mean([ndcg_at_k(r, k) for r in ranks]))


@dataclass
class ClusterDiag:
    purity: float
    sizes: tuple
    iterations: int


def cluster_variables(embeddings, truth, restarts: int = 20, seed: int = 0) -> ClusterDiag:
    """2-means on embedding rows; purity under the better of the two label mappings."""
    x = np.asarray(embeddings, dtype=np.float64)
    t = np.asarray(truth).astype(bool)
    if x.shape[0] < 2 or x.shape[0] != t.shape[0]:
        raise ValueError("need >= 2 embeddings, one truth value each")
    if t.all() or not t.any():
        raise UndefinedMetricError("all variables share one truth value")
    km = KMeans(n_clusters=2, n_init=restarts, random_state=seed).fit(x)
    agree = np.mean(km.labels_.astype(bool) == t)
    return ClusterDiag(
        purity=float(max(agree, 1.0 - agree)),
        sizes=tuple(int(c) for c in np.bincount(km.labels_, minlength=2)),
        iterations=int(km.n_iter_),
    )
