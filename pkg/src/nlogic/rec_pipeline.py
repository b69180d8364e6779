"""Ratings to implication expressions, the per-user split and negative sampling.

Each interaction after a user's first becomes ``~(h1 & h2 & ...) | target``
where the ``h`` literals are the (at most ten) preceding interactions, negated
when the user disliked that item.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .logic_ast import And, Expr, Not, Or, Var

MAX_HISTORY = 10
FORCED_TRAIN = 5
LIKE_THRESHOLD = 4


class RatingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    rating: int
    timestamp: int


@dataclass(frozen=True)
class RecExpr:
    user: int
    history: tuple  # ((item, liked), ...), oldest first
    target: int
    label: bool
    position: int  # 1-based index of the target in the user's timeline


def _rating(raw: str) -> int:
    value = float(raw)
    if value != int(value) or not 1 <= value <= 5:
        raise ValueError(f"rating {raw!r} not an integer in 1..5")
    return int(value)


def load_ratings(path, fmt: str = "ml100k") -> list[Interaction]:
    """Read ``u.data`` (tab separated ints) or an Amazon ``user,item,rating,ts`` CSV.

    Amazon string ids are mapped to dense ints in order of first appearance and
    the mapping is written next to the input as ``<name>.ids.tsv``.
    """
    path = Path(path)
    out: list[Interaction] = []
    if fmt == "ml100k":
        with open(path, encoding="latin-1") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.split()
                try:
                    if len(parts) != 4:
                        raise ValueError(f"expected 4 fields, got {len(parts)}")
                    u, i, r, t = parts
                    out.append(Interaction(int(u), int(i), _rating(r), int(float(t))))
                except ValueError as exc:
                    raise RatingFormatError(f"{path}:{lineno}: {exc}") from None
        return out
    if fmt == "amazon-csv":
        users: dict[str, int] = {}
        items: dict[str, int] = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row:
                    continue
                if lineno == 1 and row[0].strip().lower() in ("user", "user_id", "userid"):
                    continue
                try:
                    if len(row) != 4:
                        raise ValueError(f"expected 4 fields, got {len(row)}")
                    u = users.setdefault(row[0], len(users))
                    i = items.setdefault(row[1], len(items))
                    out.append(Interaction(u, i, _rating(row[2]), int(float(row[3]))))
                except ValueError as exc:
                    raise RatingFormatError(f"{path}:{lineno}: {exc}") from None
        with open(path.with_name(path.name + ".ids.tsv"), "w", encoding="utf-8") as fh:
            for raw, dense in users.items():
                fh.write(f"u:{raw}\t{dense}\n")
            for raw, dense in items.items():
                fh.write(f"i:{raw}\t{dense}\n")
        return out
    raise ValueError(f"unknown ratings format {fmt!r}")


def binarize(rating: int) -> bool:
    if not 1 <= rating <= 5:
        raise ValueError(f"rating {rating} outside 1..5")
    return rating >= LIKE_THRESHOLD


def group_by_user(interactions: Iterable[Interaction]) -> dict[int, list[Interaction]]:
    """Per-user timelines sorted by timestamp (file order breaks ties).

    Repeated (user, item) pairs keep only the latest rating.
    """
    latest: dict[tuple, tuple] = {}
    for n, it in enumerate(interactions):
        key = (it.user, it.item)
        if key not in latest or (it.timestamp, n) >= (latest[key][0].timestamp, latest[key][1]):
            latest[key] = (it, n)
    users: dict[int, list] = defaultdict(list)
    for it, n in latest.values():
        users[it.user].append((it.timestamp, n, it))
    return {u: [it for _, _, it in sorted(v, key=lambda x: (x[0], x[1]))] for u, v in sorted(users.items())}


def build_expressions(timeline: Sequence[Interaction], max_hist: int = MAX_HISTORY) -> list[RecExpr]:
    out = []
    liked = [binarize(it.rating) for it in timeline]
    for k in range(1, len(timeline)):
        lo = max(0, k - max_hist)
        hist = tuple((timeline[j].item, liked[j]) for j in range(lo, k))
        out.append(RecExpr(timeline[k].user, hist, timeline[k].item, liked[k], k + 1))
    return out


def history_node(r: RecExpr, item_index: dict[int, int]) -> Expr:
    """``~(h1 & ...)``: the part of the expression shared by every candidate target."""
    lits = [Var(item_index[i]) if like else Not(Var(item_index[i])) for i, like in r.history]
    return Not(lits[0] if len(lits) == 1 else And(tuple(lits)))


def to_expr_node(r: RecExpr, item_index: dict[int, int]) -> Expr:
    return Or((history_node(r, item_index), Var(item_index[r.target])))


def with_target(r: RecExpr, item: int, label: bool = False) -> RecExpr:
    return RecExpr(r.user, r.history, item, label, r.position)


def split_rec(per_user: dict[int, list[RecExpr]]) -> dict[int, list[str]]:
    """Tag each user's expressions ``train``/``valid``/``test``.

    Targets among the first five interactions always train; of the rest the
    last goes to test and the one before it to valid.
    """
    tags = {}
    for u, exprs in per_user.items():
        t = ["train"] * len(exprs)
        rest = [j for j, e in enumerate(exprs) if e.position > FORCED_TRAIN]
        if rest:
            t[rest[-1]] = "test"
        if len(rest) >= 2:
            t[rest[-2]] = "valid"
        tags[u] = t
    return tags


# ---------------------------------------------------------------------------
# sampling


class NegSampler:
    """Uniform draws from the items a user has not liked.

    ``items`` is the candidate universe (raw ids); ``liked`` maps user -> raw ids.
    """

    def __init__(self, items: Sequence[int], liked: dict[int, set]):
        self.items = np.asarray(items)
        self.liked = liked
        self._pools: dict[int, np.ndarray] = {}

    @classmethod
    def from_timelines(cls, timelines: dict[int, list[Interaction]], items: Sequence[int]) -> "NegSampler":
        liked = {u: {it.item for it in tl if binarize(it.rating)} for u, tl in timelines.items()}
        return cls(items, liked)

    def pool(self, user: int) -> np.ndarray:
        if user not in self._pools:
            liked = self.liked.get(user, set())
            self._pools[user] = np.array([i for i in self.items if i not in liked], dtype=self.items.dtype)
        return self._pools[user]

    def sample(self, user: int, rng: np.random.Generator):
        """One negative item, or ``None`` when the user has liked everything."""
        liked = self.liked.get(user, set())
        if 2 * len(liked) < len(self.items):
            # rejection sampling is uniform over the pool and avoids building it
            while True:
                item = int(self.items[rng.integers(len(self.items))])
                if item not in liked:
                    return item
        p = self.pool(user)
        return None if not len(p) else int(p[rng.integers(len(p))])

    def sample_distinct(self, user: int, k: int, rng: np.random.Generator) -> np.ndarray:
        p = self.pool(user)
        if len(p) < k:
            raise ValueError(
                f"user {user} has only {len(p)} candidate negatives; reduce k below {k}"
            )
        return p[rng.choice(len(p), size=k, replace=False)]


def sample_negative(user: int, sampler: NegSampler, rng: np.random.Generator):
    return sampler.sample(user, rng)


def leave_one_out_candidates(r: RecExpr, sampler: NegSampler, rng: np.random.Generator,
                             k: int = 100) -> list[RecExpr]:
    """The positive followed by ``k`` distinct sampled negatives, all sharing its history."""
    negs = sampler.sample_distinct(r.user, k, rng)
    return [r] + [with_target(r, int(i), False) for i in negs]


# ---------------------------------------------------------------------------
# whole-dataset preparation


@dataclass
class RecData:
    train: list[RecExpr]
    valid: list[RecExpr]
    test: list[RecExpr]
    item_index: dict[int, int]  # raw item id -> embedding row
    items: list[int]            # raw ids, row order
    sampler: NegSampler
    n_cold: int                 # items never seen in training interactions

    @property
    def n_items(self) -> int:
        return len(self.items)

    def expr(self, r: RecExpr) -> Expr:
        return to_expr_node(r, self.item_index)


def prepare(interactions: Sequence[Interaction], max_users: int | None = None) -> RecData:
    """Timelines, expressions, split, item map and sampler for one dataset.

    ``max_users`` keeps only the first users by id (the subsampled tier).
    """
    timelines = group_by_user(interactions)
    if max_users is not None:
        timelines = dict(list(timelines.items())[:max_users])
    train, valid, test = [], [], []
    train_items: set[int] = set()
    for u, tl in timelines.items():
        exprs = build_expressions(tl)
        tags = split_rec({u: exprs})[u]
        held = {e.position for e, t in zip(exprs, tags) if t != "train"}
        for e, t in zip(exprs, tags):
            {"train": train, "valid": valid, "test": test}[t].append(e)
        train_items.update(it.item for j, it in enumerate(tl, 1) if j not in held)
    all_items = sorted({it.item for tl in timelines.values() for it in tl})
    warm = sorted(train_items)
    cold = [i for i in all_items if i not in train_items]
    items = warm + cold
    index = {it: j for j, it in enumerate(items)}
    sampler = NegSampler.from_timelines(timelines, items)
    return RecData(train, valid, test, index, items, sampler, len(cold))
