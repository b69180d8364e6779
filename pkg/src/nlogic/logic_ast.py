"""Propositional expressions: AST, text format, truth oracle and random DNF data.

Grammar (``~``/``¬``, ``&``/``∧``, ``|``/``∨`` are interchangeable)::

    expr   := term ('|' term)*
    term   := factor ('&' factor)*
    factor := '~' factor | '(' expr ')' | 'v' digits
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .autodiff import make_rng


class ExprSyntaxError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at offset {offset}")
        self.offset = offset


class VariableRangeError(ValueError):
    pass


class MissingAssignmentError(KeyError):
    pass


class GenConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Not:
    child: "Expr"


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("And needs at least two operands")


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("Or needs at least two operands")


Expr = Union[Var, Not, And, Or]


@dataclass(frozen=True)
class LabeledExpr:
    expr: Expr
    label: bool


# ---------------------------------------------------------------------------
# parsing / rendering

_ALIASES = {"¬": "~", "∧": "&", "∨": "|"}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.i = 0

    def _offset(self) -> int:
        return len(self.text[: self.i].encode("utf-8"))

    def _skip(self):
        while self.i < len(self.text) and self.text[self.i].isspace():
            self.i += 1

    def _peek(self) -> str:
        self._skip()
        if self.i >= len(self.text):
            return ""
        ch = self.text[self.i]
        return _ALIASES.get(ch, ch)

    def _nary(self, op: str, cls, sub):
        items = [sub()]
        while self._peek() == op:
            self.i += 1
            items.append(sub())
        if len(items) == 1:
            return items[0]
        # parenthesised sub-chains stay nested so render/parse round-trips exactly
        return cls(tuple(items))

    def expr(self):
        return self._nary("|", Or, self.term)

    def term(self):
        return self._nary("&", And, self.factor)

    def factor(self):
        ch = self._peek()
        if ch == "~":
            self.i += 1
            return Not(self.factor())
        if ch == "(":
            self.i += 1
            inner = self.expr()
            if self._peek() != ")":
                raise ExprSyntaxError("expected ')'", self._offset())
            self.i += 1
            return inner
        if ch == "v":
            start = self.i + 1
            j = start
            while j < len(self.text) and self.text[j].isdigit():
                j += 1
            if j == start:
                raise ExprSyntaxError("expected digits after 'v'", len(self.text[:start].encode()))
            self.i = j
            return Var(int(self.text[start:j]))
        raise ExprSyntaxError("expected '~', '(' or variable", self._offset())


def parse(text: str, n_vars: int | None = None) -> Expr:
    """Parse ``text``; with ``n_vars`` given, also check every index is in range."""
    p = _Parser(text)
    out = p.expr()
    if p._peek() != "":
        raise ExprSyntaxError(f"unexpected {p._peek()!r}", p._offset())
    if n_vars is not None:
        bad = [i for i in variables(out) if i >= n_vars]
        if bad:
            raise VariableRangeError(f"variable v{bad[0]} out of range for {n_vars} variables")
    return out


def _render(e: Expr, parent: str | None) -> str:
    if isinstance(e, Var):
        return f"v{e.index}"
    if isinstance(e, Not):
        inner = _render(e.child, "~")
        return "~" + inner
    op = "&" if isinstance(e, And) else "|"
    body = f" {op} ".join(_render(c, op) for c in e.children)
    return body if parent is None else f"({body})"


def render(e: Expr) -> str:
    """Canonical text with every nested n-ary node parenthesised."""
    return _render(e, None)


def variables(e: Expr) -> set[int]:
    out: set[int] = set()
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, Var):
            out.add(x.index)
        elif isinstance(x, Not):
            stack.append(x.child)
        else:
            stack.extend(x.children)
    return out


# ---------------------------------------------------------------------------
# semantics


def eval_truth(e: Expr, assignment) -> bool:
    """Boolean value of ``e``; ``assignment`` is any index -> bool mapping/sequence."""
    if isinstance(e, Var):
        try:
            return bool(assignment[e.index])
        except (IndexError, KeyError):
            raise MissingAssignmentError(f"no value for v{e.index}") from None
    if isinstance(e, Not):
        return not eval_truth(e.child, assignment)
    if isinstance(e, And):
        return all(eval_truth(c, assignment) for c in e.children)
    return any(eval_truth(c, assignment) for c in e.children)


def is_dnf(e: Expr) -> bool:
    def literal(x):
        return isinstance(x, Var) or (isinstance(x, Not) and isinstance(x.child, Var))

    def clause(x):
        return literal(x) or (isinstance(x, And) and all(literal(c) for c in x.children))

    return clause(e) or (isinstance(e, Or) and all(clause(c) for c in e.children))


def shuffle_operands(e: Expr, rng: np.random.Generator) -> Expr:
    """Independently permute the operands of every And/Or node."""
    if isinstance(e, Var):
        return e
    if isinstance(e, Not):
        return Not(shuffle_operands(e.child, rng))
    kids = [shuffle_operands(c, rng) for c in e.children]
    order = rng.permutation(len(kids))
    return type(e)(tuple(kids[i] for i in order))


# ---------------------------------------------------------------------------
# simulated data


@dataclass(frozen=True)
class GenConfig:
    n: int = 1000
    m: int = 5000
    clauses: tuple = (1, 5)
    literals: tuple = (1, 5)
    seed: int = 0

    def validate(self):
        if self.n < 1 or self.m < 1:
            raise GenConfigError("n and m must be >= 1")
        for name in ("clauses", "literals"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise GenConfigError(f"{name} range {lo}..{hi} is invalid")
        if self.literals[1] > self.n:
            raise GenConfigError(
                f"literals-per-clause upper bound {self.literals[1]} exceeds n={self.n}"
            )


def generate_dataset(cfg: GenConfig) -> tuple[np.ndarray, list[LabeledExpr]]:
    """Hidden assignment plus ``m`` labeled random DNF expressions."""
    cfg.validate()
    rng = make_rng(cfg.seed, "data-gen")
    assignment = rng.random(cfg.n) < 0.5
    data = []
    for _ in range(cfg.m):
        n_clauses = int(rng.integers(cfg.clauses[0], cfg.clauses[1] + 1))
        clauses = []
        for _ in range(n_clauses):
            k = int(rng.integers(cfg.literals[0], cfg.literals[1] + 1))
            idx = rng.choice(cfg.n, size=k, replace=False)
            neg = rng.random(k) < 0.5
            lits = tuple(Not(Var(int(i))) if s else Var(int(i)) for i, s in zip(idx, neg))
            clauses.append(lits[0] if k == 1 else And(lits))
        expr = clauses[0] if n_clauses == 1 else Or(tuple(clauses))
        data.append(LabeledExpr(expr, eval_truth(expr, assignment)))
    return assignment, data


def split_dataset(data: Sequence, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle, then contiguous train/valid/test cut."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    order = make_rng(seed, "shuffle").permutation(len(data))
    n_train = int(round(fractions[0] * len(data)))
    n_valid = int(round(fractions[1] * len(data)))
    pick = [data[i] for i in order]
    return pick[:n_train], pick[n_train : n_train + n_valid], pick[n_train + n_valid :]


# ---------------------------------------------------------------------------
# expression files


def write_expressions(path, data: Iterable[LabeledExpr], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for item in data:
            fh.write(f"{render(item.expr)}\t{int(item.label)}\n")


def read_expressions(path, n_vars: int | None = None) -> list[LabeledExpr]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            try:
                text, label = line.split("\t")
                if label not in ("0", "1"):
                    raise ValueError(f"label must be 0 or 1, got {label!r}")
                out.append(LabeledExpr(parse(text, n_vars), label == "1"))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out
