"""Small reverse-mode autodiff engine over float64 numpy arrays.

Nodes are recorded on the innermost active :class:`Tape`. Outside any tape,
operations still compute values but record nothing, which makes evaluation
passes cheap::

    with Tape() as tape:
        loss = l2_norm_sq(affine(W, x, b))
    backward(loss, tape)

Matrix-shaped nodes are treated as stacks of row vectors, so every primitive
that is defined on a vector also works row-wise on a 2-D node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

STREAMS = ("data-gen", "init", "shuffle", "dropout", "negative-sampling", "eval")

_active: list["Tape"] = []


class DimensionError(ValueError):
    pass


class DegenerateVectorError(ValueError):
    pass


class Value:
    """A node: ``data``, an equally shaped ``grad`` and the op that made it."""

    __slots__ = ("data", "_grad", "op", "parents", "id", "_backward")

    def __init__(self, data, op: str = "leaf", parents: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = None
        self.op = op
        self.parents = parents
        self.id = -1
        self._backward: Callable[[], None] | None = None

    # allocated on first touch; reads as zeros until something accumulates into it
    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self._grad = None

    def __repr__(self):
        return f"Value(op={self.op}, shape={self.data.shape})"

    # arithmetic sugar; constants may be floats or arrays, Values must match shape
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if not isinstance(other, Value) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, c: float):
        return mul(self, 1.0 / c)


class Tape:
    """Append-only record of nodes in creation (hence topological) order."""

    def __init__(self):
        self.nodes: list[Value] = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.pop()
        return False

    def record(self, node: Value) -> Value:
        node.id = len(self.nodes)
        self.nodes.append(node)
        return node

    def release(self) -> None:
        """Drop backward closures and graph links so intermediate arrays can be freed."""
        for node in self.nodes:
            node._backward = None
            node.parents = ()
        self.nodes = []


def _tape() -> Tape | None:
    return _active[-1] if _active else None


def _node(data, op, parents, backward_factory) -> Value:
    out = Value(data, op, parents)
    tape = _tape()
    if tape is not None:
        out._backward = backward_factory(out)
        tape.record(out)
    return out


def _as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


# ---------------------------------------------------------------------------
# primitives


def affine(W: Value, x: Value, b: Value | None = None) -> Value:
    """``W @ x + b``; a 2-D ``x`` is treated as a stack of row vectors."""
    r, c = W.data.shape
    if x.data.shape[-1] != c or (b is not None and b.data.shape != (r,)):
        bshape = None if b is None else b.data.shape
        raise DimensionError(
            f"affine: W {W.data.shape} incompatible with x {x.data.shape} / b {bshape}"
        )
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data
    parents = (W, x) if b is None else (W, x, b)

    def factory(o):
        def bw():
            g = o.grad
            if g.ndim == 1:
                W.grad += np.outer(g, x.data)
                x.grad += W.data.T @ g
                if b is not None:
                    b.grad += g
            else:
                W.grad += g.T @ x.data
                x.grad += g @ W.data
                if b is not None:
                    b.grad += g.sum(axis=0)
        return bw

    return _node(out, "affine", parents, factory)


def concat(a: Value, b: Value) -> Value:
    if a.data.ndim != b.data.ndim or a.data.shape[:-1] != b.data.shape[:-1]:
        raise DimensionError(f"concat: {a.data.shape} vs {b.data.shape}")
    k = a.data.shape[-1]

    def factory(o):
        def bw():
            a.grad += o.grad[..., :k]
            b.grad += o.grad[..., k:]
        return bw

    return _node(np.concatenate([a.data, b.data], axis=-1), "concat", (a, b), factory)


def relu(x: Value) -> Value:
    mask = x.data > 0

    def factory(o):
        def bw():
            x.grad += o.grad * mask
        return bw

    return _node(x.data * mask, "relu", (x,), factory)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Value) -> Value:
    s = _stable_sigmoid(np.atleast_1d(x.data)).reshape(x.data.shape)

    def factory(o):
        def bw():
            x.grad += o.grad * s * (1.0 - s)
        return bw

    return _node(s, "sigmoid", (x,), factory)


def log_sigmoid(x: Value) -> Value:
    """``ln sigmoid(x)`` without overflow, i.e. ``-softplus(-x)``."""
    z = x.data
    out = -(np.logaddexp(0.0, -z))
    s = _stable_sigmoid(np.atleast_1d(z)).reshape(z.shape)

    def factory(o):
        def bw():
            x.grad += o.grad * (1.0 - s)
        return bw

    return _node(out, "log_sigmoid", (x,), factory)


def cosine(a: Value, b: Value, eps: float = 1e-12) -> Value:
    """Cosine similarity along the last axis (scalar for vectors, one per row)."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"cosine: {a.data.shape} vs {b.data.shape}")
    na = np.linalg.norm(a.data, axis=-1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=-1, keepdims=True)
    if np.any(na < eps) or np.any(nb < eps):
        raise DegenerateVectorError("cosine of a (near) zero-norm vector")
    ua, ub = a.data / na, b.data / nb
    c = np.sum(ua * ub, axis=-1, keepdims=True)

    def factory(o):
        def bw():
            g = np.asarray(o.grad)[..., None] if a.data.ndim > 1 else o.grad
            a.grad += g * (ub - c * ua) / na
            b.grad += g * (ua - c * ub) / nb
        return bw

    out = c[..., 0]
    return _node(out, "cosine", (a, b), factory)


def dropout(x: Value, rate: float, training: bool, rng: np.random.Generator | None) -> Value:
    """Inverted dropout; the identity when ``training`` is false or ``rate`` is 0."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def factory(o):
        def bw():
            x.grad += o.grad * mask
        return bw

    return _node(x.data * mask, "dropout", (x,), factory)


def l2_norm_sq(x: Value) -> Value:
    def factory(o):
        def bw():
            x.grad += 2.0 * o.grad * x.data
        return bw

    return _node(np.sum(x.data * x.data), "l2_norm_sq", (x,), factory)


def add(a: Value, b) -> Value:
    if isinstance(b, Value):
        if a.data.shape != b.data.shape:
            raise DimensionError(f"add: {a.data.shape} vs {b.data.shape}")

        def factory(o):
            def bw():
                a.grad += o.grad
                b.grad += o.grad
            return bw

        return _node(a.data + b.data, "add", (a, b), factory)

    def factory_c(o):
        def bw():
            a.grad += o.grad
        return bw

    return _node(a.data + b, "add", (a,), factory_c)


def neg(a: Value) -> Value:
    def factory(o):
        def bw():
            a.grad -= o.grad
        return bw

    return _node(-a.data, "neg", (a,), factory)


def mul(a: Value, b) -> Value:
    """Elementwise product with a Value of equal shape, or scaling by a constant."""
    if isinstance(b, Value):
        if a.data.shape != b.data.shape:
            raise DimensionError(f"mul: {a.data.shape} vs {b.data.shape}")

        def factory(o):
            def bw():
                a.grad += o.grad * b.data
                b.grad += o.grad * a.data
            return bw

        return _node(a.data * b.data, "mul", (a, b), factory)
    c = np.asarray(b, dtype=np.float64)

    def factory_c(o):
        def bw():
            a.grad += o.grad * c
        return bw

    return _node(a.data * c, "scale", (a,), factory_c)


def log(x: Value) -> Value:
    def factory(o):
        def bw():
            x.grad += o.grad / x.data
        return bw

    return _node(np.log(x.data), "log", (x,), factory)


def clamp(x: Value, lo: float, hi: float) -> Value:
    """Clip values; gradient passes only where the input was inside ``[lo, hi]``."""
    inside = (x.data >= lo) & (x.data <= hi)

    def factory(o):
        def bw():
            x.grad += o.grad * inside
        return bw

    return _node(np.clip(x.data, lo, hi), "clamp", (x,), factory)


def total(x: Value) -> Value:
    def factory(o):
        def bw():
            x.grad += o.grad
        return bw

    return _node(np.sum(x.data), "sum", (x,), factory)


def row_sum(x: Value) -> Value:
    """Sum over the last axis (one number per row)."""

    def factory(o):
        def bw():
            x.grad += np.asarray(o.grad)[..., None]
        return bw

    return _node(np.sum(x.data, axis=-1), "row_sum", (x,), factory)


def mean(x: Value) -> Value:
    return mul(total(x), 1.0 / x.data.size)


def take(x: Value, idx) -> Value:
    """Gather rows (or entries of a vector) by integer index; repeats accumulate."""
    idx = np.asarray(idx, dtype=np.intp)

    def factory(o):
        def bw():
            np.add.at(x.grad, idx, o.grad)
        return bw

    return _node(x.data[idx], "take", (x,), factory)


def slice_rows(x: Value, start: int, stop: int) -> Value:
    """Contiguous block of rows ``x[start:stop]``."""

    def factory(o):
        def bw():
            x.grad[start:stop] += o.grad
        return bw

    return _node(x.data[start:stop], "slice_rows", (x,), factory)


def vstack(xs: Sequence[Value]) -> Value:
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    sizes = np.cumsum([v.data.shape[0] for v in xs])[:-1]

    def factory(o):
        def bw():
            for v, g in zip(xs, np.split(o.grad, sizes)):
                v.grad += g
        return bw

    return _node(np.concatenate([v.data for v in xs]), "vstack", tuple(xs), factory)


def repeat_row(x: Value, n: int) -> Value:
    """Stack ``n`` copies of vector ``x`` into an ``n x d`` node."""

    def factory(o):
        def bw():
            x.grad += o.grad.sum(axis=0)
        return bw

    return _node(np.broadcast_to(x.data, (n,) + x.data.shape).copy(), "repeat_row", (x,), factory)


# ---------------------------------------------------------------------------
# backward pass


def backward(root: Value, tape: Tape) -> None:
    """Accumulate d(root)/d(node) into ``grad`` of every node feeding ``root``."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.data.shape}")
    if root.id < 0 and root.op != "leaf":
        raise ValueError("backward root was computed outside the tape")
    if root.id >= 0 and (root.id >= len(tape.nodes) or tape.nodes[root.id] is not root):
        raise ValueError("backward root belongs to a different tape")
    root.grad = root.grad + 1.0
    if root.id < 0:
        return
    for node in reversed(tape.nodes[: root.id + 1]):
        # an untouched grad means the node does not feed the root
        if node._backward is not None and node._grad is not None:
            node._backward()


def zero_grad(params: Sequence[Value]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Value], **kw) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **kw,
        )


def adam_step(params: Sequence[Value], grads: Sequence[np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.data.shape != g.shape or m.shape != g.shape:
            raise DimensionError(f"adam: param {p.data.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# randomness


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for one named stream of a run seed."""
    if stream not in STREAMS:
        raise ValueError(f"unknown rng stream {stream!r}; expected one of {STREAMS}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS.index(stream),))
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# finite-difference checking


def numeric_grad(f: Callable[[], Value | float], x: Value, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x``."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(np.asarray(_scalar(f())))
        flat[i] = old - h
        fm = float(np.asarray(_scalar(f())))
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def _scalar(v):
    return v.data if isinstance(v, Value) else v


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(a - b)
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den == 0.0 else float(num / den)


def gradient_check(f: Callable[[], Value], params: Sequence[Value], h: float = 1e-5) -> float:
    """Largest relative error between analytic and numeric gradients over ``params``.

    ``f`` must be deterministic and rebuild its graph on every call.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
    backward(out, tape)
    analytic = [p.grad.copy() for p in params]
    return max(relative_error(a, numeric_grad(f, p, h)) for a, p in zip(analytic, params))
