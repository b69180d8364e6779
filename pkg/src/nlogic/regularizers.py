"""Logical-law, vector-length and parameter penalties, and the combined loss.

The ten logic terms, each a mean over the W-set (r1 also includes T)::

    r1  Sim(NOT w, w)              r6  1 - Sim(AND(w, NOT w), F)
    r2  1 - Sim(NOT NOT w, w)      r7  1 - Sim(OR(w, F), w)
    r3  1 - Sim(AND(w, T), w)      r8  1 - Sim(OR(w, T), T)
    r4  1 - Sim(AND(w, F), F)      r9  1 - Sim(OR(w, w), w)
    r5  1 - Sim(AND(w, w), w)      r10 1 - Sim(OR(w, NOT w), T)

with ``F = NOT(T)`` recomputed through the live NOT network.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .nln_model import DEGENERATE_NORM, NLN


@dataclass(frozen=True)
class RegWeights:
    lambda_l: float = 1e-2
    lambda_len: float = 1e-4
    lambda_theta: float = 1e-5

    def __post_init__(self):
        if min(self.lambda_l, self.lambda_len, self.lambda_theta) < 0:
            raise ValueError("regularizer weights must be non-negative")


@dataclass
class RegReport:
    r: np.ndarray = field(default_factory=lambda: np.full(10, np.nan))
    length: float = float("nan")
    param: float = float("nan")
    degenerate: int = 0

    def as_row(self) -> dict:
        row = {f"r{i + 1}": float(v) for i, v in enumerate(self.r)}
        row["length"] = self.length
        row["param"] = self.param
        return row


def _as_matrix(w_set) -> Value:
    if isinstance(w_set, Value):
        return w_set if w_set.data.ndim == 2 else ad.repeat_row(w_set, 1)
    w_set = list(w_set)
    if not w_set:
        raise ValueError("W-set is empty")
    rows = [ad.repeat_row(w, 1) if w.data.ndim == 1 else w for w in w_set]
    return ad.vstack(rows)


def _mean_sim(model: NLN, a: Value, b: Value, complement: bool) -> tuple[Value | float, int]:
    """Mean of Sim (or 1 - Sim) over rows; degenerate rows count as constant 0.5."""
    n = a.data.shape[0]
    ok = (np.linalg.norm(a.data, axis=1) >= DEGENERATE_NORM) & (
        np.linalg.norm(b.data, axis=1) >= DEGENERATE_NORM
    )
    bad = int(n - ok.sum())
    if bad:
        if bad == n:
            return 0.5, bad
        idx = np.flatnonzero(ok)
        a, b = ad.take(a, idx), ad.take(b, idx)
    s = ad.total(model.sim(a, b))
    if complement:
        s = len(a.data) - s
    return (s + 0.5 * bad) * (1.0 / n), bad


def logic_reg(w_set, model: NLN, training: bool = False, rng=None) -> tuple[Value, RegReport]:
    """Sum of the ten mean logic penalties over ``w_set`` (list of vectors or N x d node)."""
    w = _as_matrix(w_set)
    n = w.data.shape[0]
    t = model.anchor
    f = model.false_vec(training, rng)
    tn = ad.repeat_row(t, n)
    fn = ad.repeat_row(f, n)

    w_t = ad.vstack([w, ad.repeat_row(t, 1)])
    not_wt = model.not_mod(w_t, training, rng)
    not_w = ad.slice_rows(not_wt, 0, n)
    not_not_w = model.not_mod(not_w, training, rng)

    # one batched call per binary module: rows are (w,T) (w,F) (w,w) (w,NOT w)
    left = ad.vstack([w, w, w, w])
    and_out = model.and_mod(left, ad.vstack([tn, fn, w, not_w]), training, rng)
    or_out = model.or_mod(left, ad.vstack([fn, tn, w, not_w]), training, rng)

    def part(x, k):
        return ad.slice_rows(x, k * n, (k + 1) * n)

    pairs = [
        (not_wt, w_t, False),
        (not_not_w, w, True),
        (part(and_out, 0), w, True),
        (part(and_out, 1), fn, True),
        (part(and_out, 2), w, True),
        (part(and_out, 3), fn, True),
        (part(or_out, 0), w, True),
        (part(or_out, 1), tn, True),
        (part(or_out, 2), w, True),
        (part(or_out, 3), tn, True),
    ]
    terms, bad = [], 0
    for a, b, comp in pairs:
        term, k = _mean_sim(model, a, b, comp)
        terms.append(term)
        bad += k
    report = RegReport(r=np.array([float(np.asarray(_data(x))) for x in terms]), degenerate=bad)
    value_terms = [x for x in terms if isinstance(x, Value)]
    const = sum(float(x) for x in terms if not isinstance(x, Value))
    if not value_terms:
        return Value(const), report
    out = value_terms[0]
    for x in value_terms[1:]:
        out = out + x
    return out + const, report


def _data(x):
    return x.data if isinstance(x, Value) else x


def length_reg(w_set) -> Value:
    w = _as_matrix(w_set)
    return ad.l2_norm_sq(w) * (1.0 / w.data.shape[0])


def param_reg(params: Sequence[Value]) -> Value:
    """Sum of squared entries over module weights and biases (not embeddings or T)."""
    params = list(params)
    if not params:
        return Value(0.0)
    out = ad.l2_norm_sq(params[0])
    for p in params[1:]:
        out = out + ad.l2_norm_sq(p)
    return out


def total_loss(task_loss: Value, w_set, model: NLN, weights: RegWeights,
               training: bool = False, rng=None, extra_params: Sequence[Value] = ()
               ) -> tuple[Value, RegReport]:
    """``task + lambda_l * logic + lambda_len * length + lambda_theta * param``."""
    # lambda = 0 multiplies through rather than skipping, so ablations share one path
    lr, report = logic_reg(w_set, model, training, rng)
    ln = length_reg(w_set)
    pr = param_reg(list(model.module_params) + list(extra_params))
    report.length = float(ln.data)
    report.param = float(pr.data)
    loss = task_loss + lr * weights.lambda_l + ln * weights.lambda_len + pr * weights.lambda_theta
    return loss, report
