"""Dense 2-D reverse-mode autodiff over numpy float64 arrays.

A :class:`Value` wraps a 2-D ``float64`` array and records the primitive that
produced it together with its parents. :func:`backward` walks that tape in
reverse topological order. Each primitive is a small module-level function
returning a new Value; none of them mutate their inputs.

The op set is deliberately small: it covers the cross-correlation objectives
and the message-passing layers, nothing more.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DegenerateScaleError, DimensionError, NonFiniteError

STD_FLOOR = 1e-12

_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation passes)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def as_matrix(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got array of shape {arr.shape}")
    return arr


class Value:
    """A node on the autodiff tape.

    ``data`` is never written by forward ops; ``grad`` is only written by
    :func:`backward` (accumulating) and cleared by :meth:`zero_grad`.
    """

    __slots__ = ("data", "_grad", "op", "parents", "requires_grad", "name", "_backward", "_has_grad")

    def __init__(self, data, requires_grad=False, name=None, *, _op="leaf", _parents=(), _backward=None):
        self.data = data if _op != "leaf" else as_matrix(data)
        self._grad = None  # allocated lazily; reads as zeros
        self.op = _op
        self.parents = tuple(_parents)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._backward = _backward
        self._has_grad = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @property
    def is_leaf(self):
        return not self.parents

    @property
    def has_grad(self):
        """True once a backward pass (or explicit assignment) has written ``grad``."""
        return self._has_grad

    def set_grad(self, g):
        g = as_matrix(g)
        if g.shape != self.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match payload {self.data.shape}")
        self._grad = g.copy()
        self._has_grad = True

    def zero_grad(self):
        self._grad = None
        self._has_grad = False

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 value, got {self.data.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Value":
        return Value(self.data.copy(), requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Value(op={self.op}, shape={self.shape}{tag})"

    # operator sugar; numbers are lifted to constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return scale(self, float(other))
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return scale(self, 1.0 / float(other))
        return divide(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def constant(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(x, name=None) -> Value:
    return Value(x, requires_grad=True, name=name)


def _make(op, data, parents, backward_fn):
    # a finite sum implies finite entries; only fall back to the full scan on failure
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    if not needs:
        return Value(data, _op=op)
    return Value(data, requires_grad=True, _op=op, _parents=parents, _backward=backward_fn)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    sa, sb = a.shape, b.shape
    out = []
    for x, y in zip(sa, sb):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(f"{op}: shapes {sa} and {sb} do not conform")
    return tuple(out)


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Value:
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa) if a.requires_grad else None,
                            _unbroadcast(g, sb) if b.requires_grad else None))


def subtract(a, b) -> Value:
    a, b = constant(a), constant(b)
    _broadcast_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _make("subtract", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa) if a.requires_grad else None,
                            -_unbroadcast(g, sb) if b.requires_grad else None))


def multiply(a, b) -> Value:
    a, b = constant(a), constant(b)
    _broadcast_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _make("multiply", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def divide(a, b) -> Value:
    a, b = constant(a), constant(b)
    _broadcast_shape("divide", a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise ContractError("divide: zero in denominator")
    out = ad / bd
    return _make("divide", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None))


def scale(a, c: float) -> Value:
    a = constant(a)
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Value:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    return _make("matmul", ad @ bd, (a, b),
                 lambda g: (g @ bd.T if a.requires_grad else None,
                            ad.T @ g if b.requires_grad else None))


def transpose(a) -> Value:
    a = constant(a)
    return _make("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


# ----------------------------------------------------------- elementwise maps


def relu(a) -> Value:
    a = constant(a)
    mask = a.data > 0  # subgradient at 0 is 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Value:
    a = constant(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Value:
    a = constant(a)
    if np.any(a.data <= 0):
        raise ContractError("log: non-positive input")
    ad = a.data
    return _make("log", np.log(ad), (a,), lambda g: (g / ad,))


# ---------------------------------------------------------------- reductions


def column_mean(a) -> Value:
    a = constant(a)
    n = a.shape[0]
    return _make("column_mean", a.data.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def column_std(a) -> Value:
    """Unbiased (N-1) per-column standard deviation, shape (1, cols)."""
    a = constant(a)
    n = a.shape[0]
    if n < 2:
        raise ContractError(f"column_std needs at least 2 rows, got {n}")
    centered = a.data - a.data.mean(axis=0, keepdims=True)
    std = np.sqrt((centered ** 2).sum(axis=0, keepdims=True) / (n - 1))
    if np.any(std < STD_FLOOR):
        cols = np.flatnonzero(std[0] < STD_FLOOR).tolist()
        raise DegenerateScaleError(f"column_std: constant column(s) {cols}")
    return _make("column_std", std, (a,), lambda g: (g * centered / ((n - 1) * std),))


def sum(a) -> Value:  # noqa: A001 - mirrors the op name
    a = constant(a)
    shape = a.shape
    return _make("sum", np.array([[a.data.sum()]]), (a,),
                 lambda g: (np.full(shape, g[0, 0]),))


def sum_of_squares(a) -> Value:
    a = constant(a)
    ad = a.data
    return _make("sum_of_squares", np.array([[np.sum(ad * ad)]]), (a,),
                 lambda g: (2.0 * g[0, 0] * ad,))


# ------------------------------------------------------------ structural ops


class RowIndex:
    """Reusable gather index; caches the sparse scatter used by the backward pass."""

    def __init__(self, index, num_rows: int):
        self.index = np.asarray(index, dtype=np.intp)
        if self.index.ndim != 1:
            raise DimensionError(f"row index must be 1-D, got shape {self.index.shape}")
        if self.index.size and (self.index.min() < 0 or self.index.max() >= num_rows):
            raise DimensionError(f"row index out of range for {num_rows} rows")
        self.num_rows = int(num_rows)
        self._scatter = None

    @property
    def scatter(self) -> sp.csr_matrix:
        if self._scatter is None:
            k = self.index.size
            self._scatter = sp.csr_matrix((np.ones(k), (self.index, np.arange(k))),
                                          shape=(self.num_rows, k))
        return self._scatter


def row_slice(a, index) -> Value:
    """Rows of ``a`` picked by a slice, an integer index array (repeats allowed) or a RowIndex."""
    a = constant(a)
    n, cols = a.shape
    if isinstance(index, slice):
        start, stop, step = index.indices(n)
        if step == 1:
            return _make("row_slice", a.data[start:stop], (a,),
                         lambda g: (np.pad(g, ((start, n - stop), (0, 0))),))
        index = np.arange(start, stop, step)
    if not isinstance(index, RowIndex):
        index = RowIndex(index, n)
    elif index.num_rows != n:
        raise DimensionError(f"row_slice: index built for {index.num_rows} rows, input has shape {a.shape}")
    return _make("row_slice", a.data[index.index], (a,), lambda g: (np.asarray(index.scatter @ g),))


def concat_columns(values: Sequence) -> Value:
    values = [constant(v) for v in values]
    if not values:
        raise ContractError("concat_columns needs at least one input")
    rows = values[0].shape[0]
    for v in values[1:]:
        if v.shape[0] != rows:
            raise DimensionError(
                f"concat_columns: row counts differ, shapes {values[0].shape} and {v.shape}")
    widths = np.cumsum([0] + [v.shape[1] for v in values])

    def back(g):
        return tuple(g[:, widths[i]:widths[i + 1]] if values[i].requires_grad else None
                     for i in range(len(values)))

    return _make("concat_columns", np.concatenate([v.data for v in values], axis=1), tuple(values), back)


def sparse_matmul(matrix: sp.spmatrix, a) -> Value:
    """Constant sparse operator applied on the left: ``matrix @ a``."""
    a = constant(a)
    if matrix.shape[1] != a.shape[0]:
        raise DimensionError(f"sparse_matmul: shapes {matrix.shape} and {a.shape} do not conform")
    mt = matrix.T.tocsr()
    return _make("sparse_matmul", np.asarray(matrix @ a.data), (a,), lambda g: (np.asarray(mt @ g),))


class Segments:
    """Precomputed bookkeeping for reductions over row groups.

    ``ids[r]`` is the segment of row ``r``; ids need not be sorted.
    """

    def __init__(self, ids, num_segments: int):
        ids = np.asarray(ids, dtype=np.intp)
        if ids.ndim != 1:
            raise DimensionError("segment ids must be 1-D")
        if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
            raise DimensionError(f"segment ids out of range [0, {num_segments})")
        self.ids = ids
        self.num_segments = int(num_segments)
        self.counts = np.bincount(ids, minlength=num_segments)
        self.order = np.argsort(ids, kind="stable")
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(np.intp)
        self.nonempty = self.counts > 0
        self.matrix = sp.csr_matrix(
            (np.ones(ids.size), (ids, np.arange(ids.size))), shape=(num_segments, ids.size))

    def __len__(self):
        return self.ids.size


def segment_reduce(a, segments, kind: str = "sum", num_segments: int | None = None) -> Value:
    """Reduce rows of ``a`` per segment with ``sum``, ``mean`` or ``max``.

    Empty segments yield 0 for every kind. Max routes the gradient evenly
    over tied maxima.
    """
    a = constant(a)
    if not isinstance(segments, Segments):
        if num_segments is None:
            num_segments = int(np.max(segments)) + 1 if len(segments) else 0
        segments = Segments(segments, num_segments)
    if len(segments) != a.shape[0]:
        raise DimensionError(
            f"segment_reduce: {len(segments)} segment ids for input of shape {a.shape}")
    ids, counts = segments.ids, segments.counts
    if kind == "sum":
        out = np.asarray(segments.matrix @ a.data)
        return _make("segment_sum", out, (a,), lambda g: (g[ids],))
    if kind == "mean":
        denom = np.maximum(counts, 1).astype(np.float64)[:, None]
        out = np.asarray(segments.matrix @ a.data) / denom
        return _make("segment_mean", out, (a,), lambda g: ((g / denom)[ids],))
    if kind == "max":
        out = np.zeros((segments.num_segments, a.shape[1]))
        if a.shape[0]:
            ordered = a.data[segments.order]
            out[segments.nonempty] = np.maximum.reduceat(ordered, segments.starts[segments.nonempty], axis=0)
        ad = a.data

        def back(g):
            hit = (ad == out[ids]).astype(np.float64)
            ties = np.asarray(segments.matrix @ hit)
            return (hit * (g / np.maximum(ties, 1.0))[ids],)

        return _make("segment_max", out, (a,), back)
    raise ContractError(f"segment_reduce: unknown kind {kind!r}")


# ------------------------------------------------------------------ backward


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Value):
    """Accumulate d(root)/d(node) into ``grad`` of every ancestor needing it.

    Gradients from this pass are propagated through pass-local buffers, so
    calling backward on two roots that share a sub-tape adds the two results
    exactly once each.
    """
    if root.data.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 root, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    local = {id(root): np.ones((1, 1))}
    for node in reversed(order):
        g = local.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in local:
                local[key] = local[key] + pg
            else:
                local[key] = pg
    for node in order:
        g = local.get(id(node))
        if g is None:
            continue
        node._grad = g if node._grad is None else node._grad + g
        node._has_grad = True


def zero_gradients(params):
    values = params.values() if isinstance(params, Mapping) else params
    for p in values:
        p.zero_grad()


# ------------------------------------------------------------- verification


def finite_diff_check(f: Callable[[Value], Value], x, h: float = 1e-5) -> float:
    """Max over entries of |autodiff - central difference| / max(1, |central difference|)."""
    if h <= 0:
        raise ContractError("finite_diff_check: step h must be positive")
    x = as_matrix(x)
    leaf = parameter(x.copy())
    out = f(leaf)
    if out.shape != (1, 1):
        raise ContractError(f"finite_diff_check: f must return a 1x1 value, got {out.shape}")
    backward(out)
    auto = leaf.grad

    fd = np.zeros_like(x)
    probe = x.copy()
    with no_grad():
        for idx in np.ndindex(*x.shape):
            orig = probe[idx]
            probe[idx] = orig + h
            up = f(Value(probe.copy())).item()
            probe[idx] = orig - h
            down = f(Value(probe.copy())).item()
            probe[idx] = orig
            fd[idx] = (up - down) / (2 * h)
    return float(np.max(np.abs(auto - fd) / np.maximum(1.0, np.abs(fd))))


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _named(params) -> Iterable[tuple]:
    if isinstance(params, Mapping):
        return list(params.items())
    return list(enumerate(params))


def adam_step(params, state: AdamState):
    """One bias-corrected Adam update, in place on the parameter payloads.

    Gradients are left untouched; clear them with :func:`zero_gradients`.
    """
    named = _named(params)
    for key, p in named:
        if not p.has_grad:
            label = p.name or key
            raise ContractError(f"adam_step: parameter {label!r} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for key, p in named:
        g = p.grad
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        elif m.shape != p.data.shape:
            raise DimensionError(f"adam_step: moment shape {m.shape} != parameter {p.data.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        state.m[key], state.v[key] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
