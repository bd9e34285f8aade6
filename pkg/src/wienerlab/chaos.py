"""Finite Wiener chaos expansions on R^d and the Malliavin operators acting on them.

The isonormal process is realized on the coordinate basis: ``X(e_k) = g_k`` for a
standard Gaussian vector ``g``.  Multiple integrals are normalized so that

    I_q(sym(e_1^{(x)a_1} (x) ... (x) e_d^{(x)a_d})) = prod_k H_{a_k}(g_k),

which gives ``E[I_p(f) I_q(g)] = 1{p=q} q! <f, g>`` and the usual product formula.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from . import mc
from .hermite import hermite_table
from .symtensor import SymTensor, contract, multiplicity, symmetrize

MAX_ORDER = 8
MAX_DIM = 512


@dataclass(frozen=True)
class GaussianSample:
    """One realization ``g`` of ``(X(e_1), ..., X(e_d))``."""

    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).ravel()
        if not np.all(np.isfinite(g)):
            raise ValueError("Gaussian sample has non-finite entries")
        object.__setattr__(self, "g", g)

    @property
    def dim(self) -> int:
        return self.g.shape[0]


class ChaosVector:
    """``F = sum_q I_q(f_q)`` with finitely many nonzero kernels."""

    __slots__ = ("dim", "_terms", "_compiled", "_origin")

    def __init__(self, dim: int, terms: Mapping[int, SymTensor] | None = None):
        if not 1 <= dim <= MAX_DIM:
            raise ValueError(f"dim must be in [1, {MAX_DIM}], got {dim}")
        self.dim = int(dim)
        clean: dict[int, SymTensor] = {}
        for q, f in (terms or {}).items():
            q = int(q)
            if not 0 <= q <= MAX_ORDER:
                raise ValueError(f"chaos order {q} outside [0, {MAX_ORDER}]")
            if f.order != q:
                raise ValueError(f"kernel for chaos {q} has order {f.order}")
            if q == 0 and f.dim != dim:
                f = SymTensor.scalar(f.coeffs.get((), 0.0), dim)
            if f.dim != dim:
                raise ValueError(f"kernel dim {f.dim} does not match {dim}")
            if not f.is_zero():
                clean[q] = f
        self._terms = dict(sorted(clean.items()))
        self._compiled = None
        # q -> (base kernel, exact rational factor) for terms produced by rational
        # diagonal scalings, so that e.g. L L^{-1} composes without rounding
        self._origin: dict[int, tuple[SymTensor, Fraction]] = {}

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, c: float, dim: int) -> "ChaosVector":
        return cls(dim, {0: SymTensor.scalar(c, dim)})

    @classmethod
    def integral(cls, f: SymTensor) -> "ChaosVector":
        """``I_q(f)`` for a kernel of order ``q``."""
        return cls(f.dim, {f.order: f})

    @classmethod
    def zero(cls, dim: int) -> "ChaosVector":
        return cls(dim, {})

    # -- structure ----------------------------------------------------
    @property
    def terms(self) -> dict[int, SymTensor]:
        return dict(self._terms)

    def kernel(self, q: int) -> SymTensor:
        if q in self._terms:
            return self._terms[q]
        return SymTensor.scalar(0.0, self.dim) if q == 0 else SymTensor.zeros(q, self.dim)

    @property
    def orders(self) -> list[int]:
        return list(self._terms)

    @property
    def max_order(self) -> int:
        return max(self._terms, default=0)

    @property
    def mean(self) -> float:
        return self.kernel(0).coeffs.get((), 0.0)

    def second_moment(self) -> float:
        return sum(math.factorial(q) * f.norm_sq() for q, f in self._terms.items())

    def variance(self) -> float:
        return sum(math.factorial(q) * f.norm_sq() for q, f in self._terms.items() if q)

    def centered(self) -> "ChaosVector":
        return ChaosVector(self.dim, {q: f for q, f in self._terms.items() if q})

    def map_terms(self, fn) -> "ChaosVector":
        """Scale term ``q`` by ``fn(q)``.

        When ``fn`` returns :class:`fractions.Fraction` values the factors are
        accumulated exactly, so composing rational diagonal operators whose
        product is 1 returns the original coefficients bit for bit.
        """
        terms, origin = {}, {}
        for q, f in self._terms.items():
            c = fn(q)
            if isinstance(c, Fraction):
                base, acc = self._origin.get(q, (f, Fraction(1)))
                acc = acc * c
                terms[q] = base if acc == 1 else float(acc) * base
                origin[q] = (base, acc)
            else:
                terms[q] = float(c) * f
        out = ChaosVector(self.dim, terms)
        out._origin = {q: o for q, o in origin.items() if q in out._terms}
        return out

    def __repr__(self) -> str:
        return f"ChaosVector(dim={self.dim}, orders={self.orders})"

    # -- arithmetic ---------------------------------------------------
    def __add__(self, other: "ChaosVector") -> "ChaosVector":
        if isinstance(other, (int, float)):
            other = ChaosVector.constant(float(other), self.dim)
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        out = dict(self._terms)
        for q, f in other._terms.items():
            out[q] = out[q] + f if q in out else f
        return ChaosVector(self.dim, out)

    __radd__ = __add__

    def __mul__(self, c) -> "ChaosVector":
        if isinstance(c, ChaosVector):
            return product(self, c)
        return self.map_terms(lambda q: float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "ChaosVector":
        return self * -1.0

    def __sub__(self, other: "ChaosVector") -> "ChaosVector":
        return self + (-other)

    def allclose(self, other: "ChaosVector", atol: float = 1e-12) -> bool:
        if self.dim != other.dim:
            return False
        qs = set(self._terms) | set(other._terms)
        return all(self.kernel(q).allclose(other.kernel(q), atol=atol) for q in qs)

    # -- evaluation ---------------------------------------------------
    def _compile(self):
        if self._compiled is None:
            items = []
            for q, f in self._terms.items():
                for t, v in f.coeffs.items():
                    cnt = sorted(Counter(t).items())
                    items.append(
                        (v * multiplicity(t), tuple(c for c, _ in cnt), tuple(a for _, a in cnt))
                    )
            self._compiled = items
        return self._compiled

    def evaluate_many(self, x) -> np.ndarray:
        """Values at each row of ``x`` (shape ``(n, d)``)."""
        return Evaluator(self).value(x)

    # -- serialization ------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "terms": [{"q": q, "tensor": f.to_dict()} for q, f in self._terms.items()],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ChaosVector":
        try:
            dim = int(doc["dim"])
            terms = {}
            for entry in doc["terms"]:
                q = int(entry["q"])
                if q in terms:
                    raise ValueError(f"duplicate chaos order {q}")
                terms[q] = SymTensor.from_dict(entry["tensor"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed chaos document: missing or bad field {exc}") from exc
        return cls(dim, terms)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ChaosVector":
        return cls.from_dict(json.loads(text))


class Evaluator:
    """Vectorized values, gradients and Hessians of a chaos vector at many samples.

    Differentiates the product-Hermite representation directly, using
    ``H_a' = a H_{a-1}``; agrees with :func:`malliavin_d` / :func:`malliavin_d2`.
    """

    def __init__(self, F: ChaosVector):
        self.F = F
        self.dim = F.dim
        self.items = F._compile()
        self.qmax = F.max_order

    def _table(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"samples have dim {x.shape[1]}, expected {self.dim}")
        return hermite_table(self.qmax, x.T)

    def value(self, x) -> np.ndarray:
        tab = self._table(x)
        out = np.zeros(tab.shape[-1])
        for w, cs, ps in self.items:
            term = np.full(tab.shape[-1], w)
            for c, p in zip(cs, ps):
                term *= tab[p, c]
            out += term
        return out

    def derivatives(self, x, *, hessian: bool = True):
        """Return ``(values, gradients (n, d), hessians (n, d, d) or None)``."""
        tab = self._table(x)
        n, d = tab.shape[-1], self.dim
        val = np.zeros(n)
        grad = np.zeros((n, d))
        hess = np.zeros((n, d, d)) if hessian else None
        for w, cs, ps in self.items:
            factors = [tab[p, c] for c, p in zip(cs, ps)]
            dfac = [p * tab[p - 1, c] for c, p in zip(cs, ps)]
            k = len(cs)
            full = np.full(n, w)
            for fct in factors:
                full = full * fct
            val += full
            for a in range(k):
                rest = np.full(n, w)
                for b in range(k):
                    if b != a:
                        rest = rest * factors[b]
                grad[:, cs[a]] += rest * dfac[a]
                if not hessian:
                    continue
                p = ps[a]
                if p >= 2:
                    hess[:, cs[a], cs[a]] += rest * (p * (p - 1)) * tab[p - 2, cs[a]]
                for b in range(a + 1, k):
                    rest2 = np.full(n, w)
                    for c in range(k):
                        if c != a and c != b:
                            rest2 = rest2 * factors[c]
                    cross = rest2 * dfac[a] * dfac[b]
                    hess[:, cs[a], cs[b]] += cross
                    hess[:, cs[b], cs[a]] += cross
        return val, grad, hess


def _check_sample(F: ChaosVector, s) -> np.ndarray:
    g = s.g if isinstance(s, GaussianSample) else GaussianSample(s).g
    if g.shape[0] != F.dim:
        raise ValueError(f"sample dim {g.shape[0]} does not match functional dim {F.dim}")
    return g


def evaluate(F: ChaosVector, s) -> float:
    """``F`` evaluated at one Gaussian sample."""
    g = _check_sample(F, s)
    return float(Evaluator(F).value(g[None, :])[0])


def multiply(p: int, f: SymTensor, q: int, g: SymTensor) -> ChaosVector:
    """``I_p(f) I_q(g) = sum_r r! C(p,r) C(q,r) I_{p+q-2r}(f sym-contracted_r g)``."""
    if f.order != p or g.order != q:
        raise ValueError("kernel orders do not match p, q")
    if f.dim != g.dim:
        raise ValueError(f"dimension mismatch: {f.dim} vs {g.dim}")
    out = ChaosVector.zero(f.dim)
    for r in range(min(p, q) + 1):
        coef = math.factorial(r) * math.comb(p, r) * math.comb(q, r)
        kern = symmetrize(contract(f, g, r), dim=f.dim)
        out = out + ChaosVector.integral(coef * kern)
    return out


def product(F: ChaosVector, G: ChaosVector) -> ChaosVector:
    """Chaos expansion of the pointwise product ``F G``."""
    if F.dim != G.dim:
        raise ValueError(f"dimension mismatch: {F.dim} vs {G.dim}")
    out = ChaosVector.zero(F.dim)
    for p, f in F._terms.items():
        for q, g in G._terms.items():
            out = out + multiply(p, f, q, g)
    return out


@dataclass(frozen=True)
class ChaosGradient:
    """``DF`` as ``d`` chaos vectors, or ``D^2 F`` as a symmetric ``d x d`` array of them."""

    components: tuple

    @property
    def is_hessian(self) -> bool:
        return bool(self.components) and isinstance(self.components[0], tuple)

    def __getitem__(self, idx):
        if isinstance(idx, tuple):
            j, k = idx
            return self.components[j][k]
        return self.components[idx]

    def evaluate(self, s) -> np.ndarray:
        if self.is_hessian:
            return np.array([[evaluate(c, s) for c in row] for row in self.components])
        return np.array([evaluate(c, s) for c in self.components])


def malliavin_d(F: ChaosVector) -> ChaosGradient:
    """``D_j F = sum_q q I_{q-1}(f_q(., e_j))``."""
    comps = []
    for j in range(F.dim):
        terms: dict[int, SymTensor] = {}
        for q, f in F._terms.items():
            if q >= 1:
                terms[q - 1] = q * f.slot(j)
        comps.append(ChaosVector(F.dim, terms))
    return ChaosGradient(tuple(comps))


def malliavin_d2(F: ChaosVector) -> ChaosGradient:
    """``D^2_{jk} F = sum_q q (q-1) I_{q-2}(f_q(., e_j, e_k))``."""
    d = F.dim
    rows = [[None] * d for _ in range(d)]
    for j in range(d):
        slots_j = {q: f.slot(j) for q, f in F._terms.items() if q >= 2}
        for k in range(j, d):
            terms = {q - 2: (q * (q - 1)) * fj.slot(k) for q, fj in slots_j.items()}
            rows[j][k] = rows[k][j] = ChaosVector(d, terms)
    return ChaosGradient(tuple(tuple(r) for r in rows))


def apply_L(F: ChaosVector) -> ChaosVector:
    return F.map_terms(lambda q: Fraction(-q))


def apply_Linv(F: ChaosVector) -> ChaosVector:
    """Pseudo-inverse of ``L``: ``-1/q`` on chaos ``q >= 1``, the mean is dropped."""
    return F.centered().map_terms(lambda q: Fraction(-1, q))


def ou_semigroup(F: ChaosVector, t: float) -> ChaosVector:
    """``T_t F = sum_q e^{-qt} J_q F``."""
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    return F.map_terms(lambda q: math.exp(-q * t))


def mehler_mc(
    F: ChaosVector, t: float, s, n: int, seed: int, *, workers: int = 1
) -> mc.Estimate:
    """Monte Carlo ``E'[F(e^{-t} s + sqrt(1 - e^{-2t}) G')]``."""
    if n < 2:
        raise ValueError("need n >= 2")
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    g = _check_sample(F, s)
    a, b = math.exp(-t), math.sqrt(-math.expm1(-2.0 * t))
    ev = Evaluator(F)

    def chunk(rng, m):
        return ev.value(a * g + b * rng.standard_normal((m, F.dim)))

    vals = np.concatenate(mc.map_chunks(chunk, n, seed, workers=workers))
    return mc.mean_estimate(vals)


def inner_gradients(F: ChaosVector, G: ChaosVector) -> ChaosVector:
    """Chaos expansion of ``<DF, DG>``."""
    dF, dG = malliavin_d(F), malliavin_d(G)
    out = ChaosVector.zero(F.dim)
    for a, b in zip(dF.components, dG.components):
        out = out + product(a, b)
    return out


def w_values(F: ChaosVector, x) -> np.ndarray:
    """``<DF, -DL^{-1}F>`` at each row of ``x``."""
    _, dF, _ = Evaluator(F).derivatives(x, hessian=False)
    _, dG, _ = Evaluator(-apply_Linv(F)).derivatives(x, hessian=False)
    return np.sum(dF * dG, axis=1)


def w_statistic(F: ChaosVector, s) -> float:
    """``W = <DF, -DL^{-1}F>`` at one sample."""
    g = _check_sample(F, s)
    return float(w_values(F, g[None, :])[0])


def random_chaos(
    rng: np.random.Generator,
    dim: int,
    orders: Iterable[int],
    *,
    density: float = 1.0,
    scale: float = 1.0,
) -> ChaosVector:
    """Random chaos vector with Gaussian canonical coefficients (test fixtures, generators)."""
    import itertools

    terms = {}
    for q in orders:
        coeffs = {}
        for t in itertools.combinations_with_replacement(range(dim), q):
            if density >= 1.0 or rng.random() < density:
                coeffs[t] = scale * rng.standard_normal()
        terms[q] = SymTensor(q, dim, coeffs)
    return ChaosVector(dim, terms)
