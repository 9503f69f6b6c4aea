"""Dense 2-D tensors with reverse-mode differentiation.

Every value is a float64 matrix (vectors are 1xK or Nx1, scalars 1x1).
A graph is built eagerly as operations run; ``backward`` walks it once in
reverse generation order. Graphs are meant to be rebuilt every training
step and thrown away afterwards.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NonFiniteError

_counter = itertools.count()


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Tensor:
    """A node in the differentiation graph.

    ``value`` is never modified in place by any operation; ``grad`` is filled
    by :func:`backward` and always has the shape of ``value``.
    """

    __slots__ = ("value", "_grad", "parents", "generation", "name", "_order")

    def __init__(self, value, parents: Sequence[tuple["Tensor", Callable]] = (), name: str = ""):
        self.value = value if type(value) is np.ndarray and value.ndim == 2 and value.dtype == np.float64 \
            else _as_matrix(value)
        self._grad = None
        self.parents = tuple(parents)
        self.generation = 1 + max((p.generation for p, _ in self.parents), default=-1)
        self.name = name
        self._order = next(_counter)

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, _lift(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self.shape)))

    def __rsub__(self, other):
        return add(_lift(other, self.shape), neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return constant(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


def constant(data) -> Tensor:
    """A leaf that nothing differentiates against (it still receives an adjoint)."""
    return Tensor(_as_matrix(data))


def parameter(data, name: str = "") -> Tensor:
    return Tensor(_as_matrix(data), name=name)


def _check_same(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- operations

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return Tensor(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return Tensor(a.value + b.value, [(a, lambda g: g), (b, lambda g: g)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equally shaped tensors."""
    _check_same("mul", a, b)
    av, bv = a.value, b.value
    return Tensor(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def add_row(a: Tensor, row: Tensor) -> Tensor:
    """Add a 1xK row to every row of an NxK tensor (bias addition)."""
    if row.shape != (1, a.shape[1]):
        raise DimensionError(f"add_row: row shape {row.shape} does not fit {a.shape}")
    return Tensor(a.value + row.value,
                  [(a, lambda g: g), (row, lambda g: g.sum(axis=0, keepdims=True))])


def sub_row(a: Tensor, row: Tensor) -> Tensor:
    """Subtract a 1xK row from every row of an NxK tensor."""
    return add_row(a, neg(row))


def sub_col(a: Tensor, col: Tensor) -> Tensor:
    """Row-wise subtract: entry (n, k) minus col[n]."""
    if col.shape != (a.shape[0], 1):
        raise DimensionError(f"sub_col: column shape {col.shape} does not fit {a.shape}")
    return Tensor(a.value - col.value,
                  [(a, lambda g: g), (col, lambda g: -g.sum(axis=1, keepdims=True))])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return Tensor(out, [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0):
        raise DomainError("log: input must be strictly positive")
    av = a.value
    return Tensor(np.log(av), [(a, lambda g: g / av)])


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.value, [(a, lambda g: -g)])


def square(a: Tensor) -> Tensor:
    av = a.value
    return Tensor(av * av, [(a, lambda g: 2.0 * g * av)])


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(c * a.value, [(a, lambda g: c * g)])


def relu(a: Tensor) -> Tensor:
    mask = (a.value > 0).astype(np.float64)
    return Tensor(a.value * mask, [(a, lambda g: g * mask)])


def sum_rows(a: Tensor) -> Tensor:
    """Sum across each row: NxK -> Nx1."""
    k = a.shape[1]
    return Tensor(a.value.sum(axis=1, keepdims=True),
                  [(a, lambda g: np.repeat(g, k, axis=1))])


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor(a.value.sum(), [(a, lambda g: np.full(shape, g[0, 0]))])


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: NxK -> 1xK."""
    n = a.shape[0]
    if n == 0:
        raise DimensionError("mean_rows: empty tensor")
    return Tensor(a.value.mean(axis=0, keepdims=True),
                  [(a, lambda g: np.repeat(g / n, n, axis=0))])


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_rows: nothing to concatenate")
    width = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != width:
            raise DimensionError(f"concat_rows: column counts differ ({p.shape[1]} vs {width})")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    parents = [(p, (lambda lo, hi: lambda g: g[lo:hi])(bounds[i], bounds[i + 1]))
               for i, p in enumerate(parts)]
    return Tensor(np.concatenate([p.value for p in parts], axis=0), parents)


def detach(a: Tensor) -> Tensor:
    return Tensor(a.value.copy())


def pick(a: Tensor, index: Sequence[int]) -> Tensor:
    """Gather a[n, index[n]] for each row, giving an Nx1 column."""
    idx = np.asarray(index, dtype=np.int64)
    n, k = a.shape
    if idx.shape != (n,):
        raise DimensionError(f"pick: need {n} indices, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise ContractError(f"pick: index out of range for {k} columns")
    rows = np.arange(n)

    def back(g):
        out = np.zeros((n, k))
        out[rows, idx] = g[:, 0]
        return out

    return Tensor(a.value[rows, idx].reshape(n, 1), [(a, back)])


def diag(a: Tensor) -> Tensor:
    """Diagonal of a square KxK tensor as a Kx1 column."""
    return pick(a, np.arange(a.shape[0]))


def sq_dist(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between rows: (NxM, KxM) -> NxK."""
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"sq_dist: feature widths differ {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    diff = av[:, None, :] - bv[None, :, :]
    out = np.einsum("nkm,nkm->nk", diff, diff)

    def back_a(g):
        return 2.0 * np.einsum("nk,nkm->nm", g, diff)

    def back_b(g):
        return -2.0 * np.einsum("nk,nkm->km", g, diff)

    return Tensor(out, [(a, back_a), (b, back_b)])


# ---------------------------------------------------------------- backward

def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Fill ``grad`` on every node reachable from ``root``.

    Returns the gradients of the reachable leaves, keyed by node.
    """
    if root.value.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
    seen = {id(root): root}
    stack = [root]
    while stack:
        node = stack.pop()
        for parent, _ in node.parents:
            if id(parent) not in seen:
                seen[id(parent)] = parent
                stack.append(parent)
    order = sorted(seen.values(), key=lambda t: (t.generation, t._order), reverse=True)
    adjoint = {id(root): np.ones_like(root.value)}
    for node in order:
        g = adjoint.get(id(node))
        node.grad = g
        if g is None:
            continue
        for parent, fn in node.parents:
            contrib = fn(g)
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = contrib if prev is None else prev + contrib
    return {t: t.grad for t in order if t.is_leaf}


def grad_check(f: Callable[[Tensor], Tensor], theta, eps: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps a leaf tensor to a scalar tensor. The error for entry i is
    ``|analytic_i - numeric_i| / max(1, |numeric_i|)``.
    """
    theta = _as_matrix(theta)
    leaf = parameter(theta)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad.ravel()
    worst = 0.0
    flat = theta.ravel()
    for i in range(flat.size):
        vals = []
        for step in (eps, -eps):
            probe = flat.copy()
            probe[i] += step
            v = f(parameter(probe.reshape(theta.shape))).item()
            if not math.isfinite(v):
                raise NonFiniteError(f"grad_check: non-finite evaluation at index {i}")
            vals.append(v)
        numeric = (vals[0] - vals[1]) / (2 * eps)
        if not math.isfinite(analytic[i]):
            raise NonFiniteError(f"grad_check: non-finite analytic gradient at index {i}")
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst

