"""Symmetric tensors over R^d in canonical sparse storage.

A :class:`SymTensor` of order ``q`` keeps one coefficient per non-decreasing
index tuple; that value is shared by every permutation of the tuple.  Indices
are 0-based coordinates of the orthonormal basis ``e_0, ..., e_{d-1}``.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

DENSE_LIMIT = 50_000_000
EIGH_MAX_DIM = 512


def multiplicity(t: tuple[int, ...]) -> int:
    """Number of distinct permutations of the index tuple ``t``."""
    m = math.factorial(len(t))
    for c in Counter(t).values():
        m //= math.factorial(c)
    return m


def _distinct_perms(t: tuple[int, ...]) -> set[tuple[int, ...]]:
    return set(itertools.permutations(t))


class SymTensor:
    """Immutable symmetric tensor of a given order and dimension."""

    __slots__ = ("order", "dim", "_coeffs", "_dense")

    def __init__(self, order: int, dim: int, coeffs: Mapping[Iterable[int], float] | None = None):
        if order < 0 or dim < 1:
            raise ValueError(f"invalid order/dim: {order}, {dim}")
        self.order = int(order)
        self.dim = int(dim)
        store: dict[tuple[int, ...], float] = {}
        for key, val in (coeffs or {}).items():
            t = tuple(sorted(int(i) for i in key))
            if len(t) != order:
                raise ValueError(f"index tuple {key} does not have length {order}")
            if t and (t[0] < 0 or t[-1] >= dim):
                raise ValueError(f"index tuple {key} out of range for dim {dim}")
            if t in store and store[t] != float(val):
                raise ValueError(f"conflicting values for canonical tuple {t}")
            if val != 0.0:
                store[t] = float(val)
        self._coeffs = MappingProxyType(store)
        self._dense = None

    # -- constructors -------------------------------------------------
    @classmethod
    def scalar(cls, value: float, dim: int) -> "SymTensor":
        return cls(0, dim, {(): value})

    @classmethod
    def zeros(cls, order: int, dim: int) -> "SymTensor":
        return cls(order, dim, {})

    @classmethod
    def from_dense(cls, arr, *, check: bool = True, atol: float = 1e-12) -> "SymTensor":
        """Build from a full symmetric array of shape ``(d,)*q``."""
        arr = np.asarray(arr, dtype=float)
        order = arr.ndim
        dim = arr.shape[0] if order else 1
        if order == 0:
            return cls.scalar(float(arr), dim)
        if any(s != dim for s in arr.shape):
            raise ValueError(f"non-cubic array of shape {arr.shape}")
        if check:
            for perm in itertools.permutations(range(order)):
                if not np.allclose(arr, np.transpose(arr, perm), atol=atol, rtol=0):
                    raise ValueError("array is not symmetric; use symmetrize(RawTensor(...))")
        coeffs = {}
        for idx in zip(*np.nonzero(arr)):
            t = tuple(int(i) for i in idx)
            if list(t) == sorted(t):
                coeffs[t] = float(arr[t])
        return cls(order, dim, coeffs)

    @classmethod
    def basis(cls, dim: int, *indices: int) -> "SymTensor":
        """Symmetrization of ``e_{i1} x ... x e_{iq}``."""
        t = tuple(sorted(indices))
        return cls(len(t), dim, {t: 1.0 / multiplicity(t)} if t else {(): 1.0})

    @classmethod
    def outer_power(cls, h, q: int) -> "SymTensor":
        """``h^{(x) q}`` for a vector ``h``."""
        h = np.asarray(h, dtype=float)
        d = h.shape[0]
        coeffs = {}
        for t in itertools.combinations_with_replacement(range(d), q):
            v = float(np.prod(h[list(t)])) if t else 1.0
            if v != 0.0:
                coeffs[t] = v
        return cls(q, d, coeffs)

    # -- access -------------------------------------------------------
    @property
    def coeffs(self) -> Mapping[tuple[int, ...], float]:
        return self._coeffs

    def __len__(self) -> int:
        return len(self._coeffs)

    def __repr__(self) -> str:
        return f"SymTensor(order={self.order}, dim={self.dim}, nnz={len(self._coeffs)})"

    def to_dense(self) -> np.ndarray:
        if self._dense is None:
            if self.dim ** self.order > DENSE_LIMIT:
                raise MemoryError(
                    f"dense order-{self.order} tensor over dim {self.dim} exceeds {DENSE_LIMIT} entries"
                )
            arr = np.zeros((self.dim,) * self.order)
            for t, v in self._coeffs.items():
                for p in _distinct_perms(t):
                    arr[p] = v
            arr.setflags(write=False)
            self._dense = arr
        return self._dense

    def norm_sq(self) -> float:
        return float(sum(multiplicity(t) * v * v for t, v in self._coeffs.items()))

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def inner(self, other: "SymTensor") -> float:
        _check_same(self, other)
        if self.order != other.order:
            raise ValueError("inner product needs equal orders")
        small, big = sorted((self, other), key=len)
        return float(
            sum(multiplicity(t) * v * big._coeffs.get(t, 0.0) for t, v in small._coeffs.items())
        )

    def is_zero(self) -> bool:
        return not self._coeffs

    def allclose(self, other: "SymTensor", atol: float = 1e-12) -> bool:
        if (self.order, self.dim) != (other.order, other.dim):
            return False
        keys = set(self._coeffs) | set(other._coeffs)
        return all(abs(self._coeffs.get(k, 0.0) - other._coeffs.get(k, 0.0)) <= atol for k in keys)

    # -- arithmetic ---------------------------------------------------
    def __add__(self, other: "SymTensor") -> "SymTensor":
        _check_same(self, other)
        if self.order != other.order:
            raise ValueError("cannot add tensors of different orders")
        out = dict(self._coeffs)
        for t, v in other._coeffs.items():
            out[t] = out.get(t, 0.0) + v
        return SymTensor(self.order, self.dim, out)

    def __mul__(self, c: float) -> "SymTensor":
        return SymTensor(self.order, self.dim, {t: c * v for t, v in self._coeffs.items()})

    __rmul__ = __mul__

    def __neg__(self) -> "SymTensor":
        return self * -1.0

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        return self + (-other)

    def slot(self, j: int) -> "SymTensor":
        """``f(., e_j)``: contract one slot against ``e_j`` (order drops by one)."""
        if self.order == 0:
            raise ValueError("cannot contract an order-0 tensor")
        out = {}
        for t, v in self._coeffs.items():
            if j in t:
                rest = list(t)
                rest.remove(j)
                out[tuple(rest)] = v
        return SymTensor(self.order - 1, self.dim, out)

    # -- serialization ------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "dim": self.dim,
            "entries": [[list(t), v] for t, v in sorted(self._coeffs.items())],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SymTensor":
        try:
            order, dim = int(doc["order"]), int(doc["dim"])
            entries = doc.get("entries", [])
            coeffs = {tuple(int(i) for i in t): float(v) for t, v in entries}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed tensor document: {exc}") from exc
        return cls(order, dim, coeffs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SymTensor":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RawTensor:
    """Dense, not necessarily symmetric tensor."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim and len(set(arr.shape)) != 1:
            raise ValueError(f"non-cubic tensor shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def dim(self) -> int:
        return self.data.shape[0] if self.data.ndim else 1

    def norm_sq(self) -> float:
        return float(np.sum(self.data ** 2))

    def scalar(self) -> float:
        if self.order:
            raise ValueError("not an order-0 tensor")
        return float(self.data)


def _check_same(f: SymTensor, g: SymTensor) -> None:
    if f.dim != g.dim:
        raise ValueError(f"dimension mismatch: {f.dim} vs {g.dim}")


def _matricize(f: SymTensor, r: int) -> sp.csr_matrix:
    """Sparse matrix ``A`` with ``A[row(i_1..i_{q-r}), col(j_1..j_r)] = f_{i..j}``."""
    q, d = f.order, f.dim
    rows, cols, vals = [], [], []
    wr = [d ** k for k in range(q - r - 1, -1, -1)]
    wc = [d ** k for k in range(r - 1, -1, -1)]
    for t, v in f.coeffs.items():
        for p in _distinct_perms(t):
            rows.append(sum(a * b for a, b in zip(p[: q - r], wr)))
            cols.append(sum(a * b for a, b in zip(p[q - r :], wc)))
            vals.append(v)
    return sp.csr_matrix(
        (np.asarray(vals, dtype=float), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(d ** (q - r), d ** r),
    )


def tensor_product(f: SymTensor, g: SymTensor) -> RawTensor:
    """``(f x g)_{i_1..i_{p+q}} = f_{i_1..i_p} g_{i_{p+1}..i_{p+q}}``."""
    return contract(f, g, 0)


def contract(f: SymTensor, g: SymTensor, r: int) -> RawTensor:
    """Contraction ``f (x)_r g``: the last ``r`` slots of ``f`` against the last ``r`` of ``g``."""
    _check_same(f, g)
    p, q = f.order, g.order
    if not 0 <= r <= min(p, q):
        raise ValueError(f"contraction order r={r} outside [0, {min(p, q)}]")
    d = f.dim
    out_order = p + q - 2 * r
    if d ** out_order > DENSE_LIMIT:
        raise MemoryError(f"contraction result of order {out_order} over dim {d} is too large")
    prod = _matricize(f, r) @ _matricize(g, r).T
    return RawTensor(np.asarray(prod.toarray()).reshape((d,) * out_order))


def contraction_norm_sq(f: SymTensor, g: SymTensor, r: int) -> float:
    """``||f (x)_r g||^2`` without materializing the contraction."""
    _check_same(f, g)
    if not 0 <= r <= min(f.order, g.order):
        raise ValueError(f"contraction order r={r} out of range")
    a, b = _matricize(f, r), _matricize(g, r)
    # ||A B^T||_F^2 = <A^T A, B^T B>_F; both Gram matrices are d^r x d^r
    ga = (a.T @ a).tocsr()
    gb = (b.T @ b).tocsr()
    return float(ga.multiply(gb).sum())


def symmetrize(t: RawTensor, dim: int | None = None) -> SymTensor:
    """Average a dense tensor over all permutations of its indices.

    ``dim`` is only needed for order-0 input, which carries no dimension.
    """
    q = t.order
    if q == 0:
        return SymTensor.scalar(t.scalar(), dim or 1)
    if q == 1:
        return SymTensor.from_dense(t.data, check=False)
    acc = np.zeros_like(t.data)
    perms = list(itertools.permutations(range(q)))
    for perm in perms:
        acc += np.transpose(t.data, perm)
    acc /= len(perms)
    return SymTensor.from_dense(acc, check=False)


def _as_matrix(a) -> np.ndarray:
    if isinstance(a, SymTensor):
        if a.order != 2:
            raise ValueError(f"expected an order-2 tensor, got order {a.order}")
        return a.to_dense()
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    return m


def _power_norm(m: np.ndarray, rtol: float = 1e-10) -> float:
    d = m.shape[0]
    v = np.random.default_rng(0).standard_normal(d)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(10 * d):
        w = m @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = math.sqrt(nw)
        v = w / nw
        if abs(new - est) <= rtol * new:
            return new
        est = new
    return est


def operator_norm(a) -> float:
    """Largest absolute eigenvalue of a symmetric order-2 tensor (or matrix)."""
    m = _as_matrix(a)
    if m.shape[0] <= EIGH_MAX_DIM:
        return float(np.max(np.abs(np.linalg.eigvalsh(m)))) if m.size else 0.0
    return _power_norm(m)


def contraction_selfnorm_sq(a) -> float:
    """``||A (x)_1 A||^2 = sum_j gamma_j^4`` for symmetric ``A``."""
    m = _as_matrix(a)
    sq = m @ m
    return float(np.sum(sq * sq))


def batch_spectral(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-matrix ``(operator norm, sum of eigenvalues^4)`` for a stack of symmetric matrices."""
    ev = np.linalg.eigvalsh(mats)
    return np.max(np.abs(ev), axis=-1), np.sum(ev ** 4, axis=-1)
