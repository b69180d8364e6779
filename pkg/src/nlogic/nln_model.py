"""Neural logic modules (AND, OR, NOT, Sim) and dynamic graph construction.

An expression becomes a computation graph by mapping every variable to its
embedding row, every negation to the NOT network and every n-ary
conjunction/disjunction to a left fold of the binary AND/OR network.

Two builders produce the same numbers in evaluation mode:

* :func:`build_graph` walks one expression with vector-valued nodes;
* :func:`build_batch` schedules all module applications of many expressions
  level by level so each level costs one matrix product per module.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .logic_ast import And, Expr, Not, Var, VariableRangeError, shuffle_operands

MODULES = ("and", "or", "not")
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class NlnConfig:
    d: int = 64
    alpha: float = 10.0
    dropout: float = 0.2

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("embedding size d must be >= 2")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def param_shapes(d: int) -> dict[str, tuple]:
    return {
        "and_h1": (d, 2 * d), "and_h2": (d, d), "and_b": (d,),
        "or_h1": (d, 2 * d), "or_h2": (d, d), "or_b": (d,),
        "not_h1": (d, d), "not_h2": (d, d), "not_b": (d,),
    }


class NLN:
    """Trainable state: module weights, one embedding row per variable, frozen T."""

    def __init__(self, cfg: NlnConfig, params: dict[str, Value], embeddings: Value,
                 anchor: Value, seed: int | None = None):
        expected = param_shapes(cfg.d)
        for name, shape in expected.items():
            if params[name].data.shape != shape:
                raise ad.DimensionError(f"{name}: expected {shape}, got {params[name].data.shape}")
        if embeddings.data.ndim != 2 or embeddings.data.shape[1] != cfg.d:
            raise ad.DimensionError(f"embeddings must be n x {cfg.d}, got {embeddings.data.shape}")
        self.cfg = cfg
        self.params = params
        self.embeddings = embeddings
        self.anchor = anchor
        self.seed = seed

    @property
    def n_vars(self) -> int:
        return self.embeddings.data.shape[0]

    @property
    def module_params(self) -> list[Value]:
        return [self.params[k] for k in param_shapes(self.cfg.d)]

    def trainable(self) -> list[Value]:
        # the anchor is deliberately absent: T never moves
        return self.module_params + [self.embeddings]

    # -- modules ---------------------------------------------------------

    def _mlp(self, prefix: str, x: Value, training: bool, rng) -> Value:
        p = self.params
        h = ad.relu(ad.affine(p[prefix + "_h1"], x, p[prefix + "_b"]))
        h = ad.dropout(h, self.cfg.dropout, training, rng)
        return ad.affine(p[prefix + "_h2"], h)

    def and_mod(self, wi: Value, wj: Value, training: bool = False, rng=None) -> Value:
        return self._mlp("and", ad.concat(wi, wj), training, rng)

    def or_mod(self, wi: Value, wj: Value, training: bool = False, rng=None) -> Value:
        return self._mlp("or", ad.concat(wi, wj), training, rng)

    def not_mod(self, w: Value, training: bool = False, rng=None) -> Value:
        if w.data.shape[-1] != self.cfg.d:
            raise ad.DimensionError(f"NOT expects length {self.cfg.d}, got {w.data.shape}")
        return self._mlp("not", w, training, rng)

    def sim(self, wi: Value, wj: Value) -> Value:
        return ad.sigmoid(ad.cosine(wi, wj) * self.cfg.alpha)

    def sim_rows(self, wi: Value, wj: Value) -> tuple[Value, int]:
        """Row-wise Sim of two ``n x d`` nodes; zero-norm rows score a constant 0.5.

        A module whose hidden units are all inactive outputs exactly zero; such rows
        carry no gradient and are counted instead of raising.
        """
        ok = (np.linalg.norm(wi.data, axis=1) >= DEGENERATE_NORM) & (
            np.linalg.norm(wj.data, axis=1) >= DEGENERATE_NORM)
        if ok.all():
            return self.sim(wi, wj), 0
        idx = np.flatnonzero(ok)
        slot = np.full(len(ok), len(idx), dtype=np.intp)
        slot[idx] = np.arange(len(idx))
        parts = [Value(np.array([0.5]))]
        if len(idx):
            parts.insert(0, self.sim(ad.take(wi, idx), ad.take(wj, idx)))
        return ad.take(ad.vstack(parts), slot), int(len(ok) - len(idx))

    def false_vec(self, training: bool = False, rng=None) -> Value:
        return self.not_mod(self.anchor, training, rng)

    def copy(self) -> "NLN":
        return NLN(
            self.cfg,
            {k: Value(v.data.copy()) for k, v in self.params.items()},
            Value(self.embeddings.data.copy()),
            Value(self.anchor.data.copy()),
            self.seed,
        )

    def load_state(self, other: "NLN") -> None:
        for k, v in other.params.items():
            self.params[k].data[...] = v.data
        self.embeddings.data[...] = other.embeddings.data
        self.anchor.data[...] = other.anchor.data


def init_model(cfg: NlnConfig, vocab: int, rng: np.random.Generator, seed: int | None = None) -> NLN:
    params = {}
    for name, shape in param_shapes(cfg.d).items():
        if len(shape) == 1:
            params[name] = Value(np.zeros(shape))
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = Value(rng.uniform(-limit, limit, size=shape))
    embeddings = Value(rng.normal(0.0, 0.1, size=(vocab, cfg.d)))
    anchor = Value(rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=cfg.d))
    return NLN(cfg, params, embeddings, anchor, seed)


# ---------------------------------------------------------------------------
# single-expression builder


@dataclass
class GraphBuildResult:
    root: Value
    w_set: list


def build_graph(expr: Expr, model: NLN, training: bool = False, rng=None) -> GraphBuildResult:
    if training:
        expr = shuffle_operands(expr, rng)
    w_set: list[Value] = []
    leaves: dict[int, Value] = {}

    def visit(e):
        if isinstance(e, Var):
            if e.index not in leaves:
                if not 0 <= e.index < model.n_vars:
                    raise VariableRangeError(f"unknown variable v{e.index}")
                leaves[e.index] = ad.take(model.embeddings, e.index)
                w_set.append(leaves[e.index])
            return leaves[e.index]
        if isinstance(e, Not):
            out = model.not_mod(visit(e.child), training, rng)
            w_set.append(out)
            return out
        mod = model.and_mod if isinstance(e, And) else model.or_mod
        acc = visit(e.children[0])
        for child in e.children[1:]:
            acc = mod(acc, visit(child), training, rng)
            w_set.append(acc)
        return acc

    return GraphBuildResult(visit(expr), w_set)


# ---------------------------------------------------------------------------
# batched builder

_VAR, _NOT, _AND, _OR = 0, 1, 2, 3


class _Program:
    """Flat node list for a batch: kind, operands and dependency level per node."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.kind: list[int] = []
        self.a: list[int] = []
        self.b: list[int] = []
        self.level: list[int] = []

    def _push(self, kind, a, b, level) -> int:
        self.kind.append(kind)
        self.a.append(a)
        self.b.append(b)
        self.level.append(level)
        return len(self.kind) - 1

    def add(self, expr: Expr) -> int:
        leaves: dict[int, int] = {}
        lv = self.level

        def visit(e) -> int:
            if isinstance(e, Var):
                if e.index not in leaves:
                    if not 0 <= e.index < self.n_vars:
                        raise VariableRangeError(f"unknown variable v{e.index}")
                    leaves[e.index] = self._push(_VAR, e.index, -1, 0)
                return leaves[e.index]
            if isinstance(e, Not):
                c = visit(e.child)
                return self._push(_NOT, c, -1, lv[c] + 1)
            kind = _AND if isinstance(e, And) else _OR
            acc = visit(e.children[0])
            for child in e.children[1:]:
                c = visit(child)
                acc = self._push(kind, acc, c, max(lv[acc], lv[c]) + 1)
            return acc

        return visit(expr)


@dataclass
class BatchGraph:
    roots: Value      # B x d, one row per expression
    w: Value          # N x d, every leaf / intermediate / final node once
    sizes: np.ndarray  # W-set size per expression


def build_batch(exprs: Sequence[Expr], model: NLN, training: bool = False, rng=None,
                dropout_rng=None) -> BatchGraph:
    """Build all expressions at once; ``rng`` shuffles operands, ``dropout_rng`` masks."""
    if dropout_rng is None:
        dropout_rng = rng
    prog = _Program(model.n_vars)
    roots, sizes = [], []
    for e in exprs:
        if training:
            e = shuffle_operands(e, rng)
        start = len(prog.kind)
        roots.append(prog.add(e))
        sizes.append(len(prog.kind) - start)
    kind = np.asarray(prog.kind)
    a = np.asarray(prog.a)
    b = np.asarray(prog.b)
    level = np.asarray(prog.level)
    pos = np.empty(len(kind), dtype=np.intp)

    leaf = np.flatnonzero(level == 0)
    blocks = [ad.take(model.embeddings, a[leaf])]
    pos[leaf] = np.arange(len(leaf))
    offset = len(leaf)
    modules = {
        _NOT: lambda x, y: model.not_mod(x, training, dropout_rng),
        _AND: lambda x, y: model.and_mod(x, y, training, dropout_rng),
        _OR: lambda x, y: model.or_mod(x, y, training, dropout_rng),
    }
    for lvl in range(1, int(level.max()) + 1 if len(level) else 0):
        at = level == lvl
        h = ad.vstack(blocks)
        for k in (_NOT, _AND, _OR):
            sel = np.flatnonzero(at & (kind == k))
            if not len(sel):
                continue
            x = ad.take(h, pos[a[sel]])
            y = ad.take(h, pos[b[sel]]) if k != _NOT else None
            blocks.append(modules[k](x, y))
            pos[sel] = offset + np.arange(len(sel))
            offset += len(sel)
    w = ad.vstack(blocks)
    return BatchGraph(ad.take(w, pos[np.asarray(roots)]), w, np.asarray(sizes))


def predict(exprs, model: NLN, chunk: int = 2048) -> np.ndarray:
    """Eval-mode ``Sim(e, T)`` for one expression (float) or a list (array)."""
    single = not isinstance(exprs, (list, tuple))
    items = [exprs] if single else list(exprs)
    out = []
    for i in range(0, len(items), chunk):
        g = build_batch(items[i : i + chunk], model)
        t = ad.repeat_row(model.anchor, g.roots.data.shape[0])
        out.append(model.sim_rows(g.roots, t)[0].data)
    probs = np.concatenate(out) if out else np.zeros(0)
    return float(probs[0]) if single else probs


def score_with_targets(prefixes: Sequence[Expr], targets: Sequence[Sequence[int]], model: NLN,
                       chunk: int = 2048) -> list[np.ndarray]:
    """Eval-mode scores of ``prefix | v_t`` for every target list of every prefix.

    Equivalent to ``predict(Or((prefix, Var(t))))`` but builds each shared prefix once.
    """
    out = []
    for i in range(0, len(prefixes), chunk):
        g = build_batch(list(prefixes[i : i + chunk]), model)
        tl = targets[i : i + chunk]
        rows = np.repeat(np.arange(len(tl)), [len(t) for t in tl])
        items = np.concatenate([np.asarray(t, dtype=np.intp) for t in tl])
        e = model.or_mod(ad.take(g.roots, rows), ad.take(model.embeddings, items))
        s = model.sim_rows(e, ad.repeat_row(model.anchor, len(items)))[0].data
        out.extend(np.split(s, np.cumsum([len(t) for t in tl])[:-1]))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: NLN, **extra) -> None:
    """Write model (plus optional extra arrays) to one ``.npz`` document."""
    arrays = {f"param/{k}": v.data for k, v in model.params.items()}
    arrays["embeddings"] = model.embeddings.data
    arrays["anchor"] = model.anchor.data
    meta = {"config": asdict(model.cfg), "seed": model.seed}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    for k, v in extra.items():
        arrays[f"extra/{k}"] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[NLN, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        cfg = NlnConfig(**meta["config"])
        params = {k.split("/", 1)[1]: Value(z[k].copy()) for k in z.files if k.startswith("param/")}
        model = NLN(cfg, params, Value(z["embeddings"].copy()), Value(z["anchor"].copy()), meta["seed"])
        extra = {k.split("/", 1)[1]: z[k].copy() for k in z.files if k.startswith("extra/")}
    return model, extra
