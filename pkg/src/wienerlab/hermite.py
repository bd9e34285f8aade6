"""Probabilists' Hermite polynomials and Gauss-Hermite coefficient extraction.

Convention: ``H_q`` has leading coefficient 1, ``H_0 = 1``, ``H_1 = x`` and
``H_{q+1}(x) = x H_q(x) - q H_{q-1}(x)``, so that ``E[H_p(Z) H_q(Z)] = q! 1{p=q}``
for ``Z ~ N(0, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e

ZERO_CUTOFF = 1e-12


def hermite_eval(q: int, x):
    """Evaluate ``H_q`` at ``x`` (scalar or array) by the three-term recurrence."""
    if q < 0:
        raise ValueError(f"Hermite order must be nonnegative, got {q}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if q == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x.copy()
    for k in range(1, q):
        h_prev, h = h, x * h - k * h_prev
    return h if h.ndim else float(h)


def hermite_table(qmax: int, x) -> np.ndarray:
    """Stack ``H_0(x), ..., H_qmax(x)`` along a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((qmax + 1,) + x.shape)
    out[0] = 1.0
    if qmax >= 1:
        out[1] = x
    for k in range(1, qmax):
        out[k + 1] = x * out[k] - k * out[k - 1]
    return out


def default_nodes(qmax: int) -> int:
    return max(64, 2 * qmax + 16)


def gauss_nodes(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E[g(Z)]``, ``Z ~ N(0, 1)`` (weights sum to 1)."""
    x, w = hermite_e.hermegauss(nodes)
    return x, w / math.sqrt(2.0 * math.pi)


def gaussian_expectation(g: Callable, nodes: int = 64) -> float:
    x, w = gauss_nodes(nodes)
    vals = np.asarray(g(x), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite integrand at quadrature nodes")
    return float(np.dot(w, vals))


@dataclass(frozen=True)
class HermiteCoeffs:
    """Coefficients ``c_0..c_cmax`` of ``f = sum_q c_q H_q``."""

    c: tuple[float, ...]

    def __post_init__(self):
        if len(self.c) == 0:
            raise ValueError("need at least c_0")
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))

    @property
    def cmax(self) -> int:
        return len(self.c) - 1

    @property
    def mean(self) -> float:
        """``E[f(Z)]``, i.e. ``c_0``."""
        return self.c[0]

    def __call__(self, x):
        tab = hermite_table(self.cmax, x)
        return np.tensordot(np.asarray(self.c), tab, axes=1)

    def derivative(self, k: int = 1) -> "HermiteCoeffs":
        """Coefficients of the k-th derivative, using ``H_q' = q H_{q-1}``."""
        c = list(self.c)
        for _ in range(k):
            c = [q * c[q] for q in range(1, len(c))] or [0.0]
        return HermiteCoeffs(tuple(c))

    def odd_part_norm(self) -> float:
        return max((abs(v) for v in self.c[1::2]), default=0.0)

    def is_constant(self) -> bool:
        return all(v == 0.0 for v in self.c[1:])

    def variance(self) -> float:
        """``Var f(Z) = sum_{q>=1} q! c_q^2``."""
        return sum(math.factorial(q) * v * v for q, v in enumerate(self.c) if q)


def hermite_coeffs(f: Callable, qmax: int, nodes: int | None = None) -> HermiteCoeffs:
    """Project ``f`` onto ``H_0..H_qmax`` with ``c_q = E[f(Z) H_q(Z)] / q!``.

    Raises
    ------
    FloatingPointError
        If ``f`` is non-finite at some quadrature node.
    """
    if qmax < 0:
        raise ValueError("qmax must be nonnegative")
    nodes = default_nodes(qmax) if nodes is None else nodes
    if nodes < qmax + 1:
        raise ValueError(f"need at least qmax+1={qmax + 1} nodes, got {nodes}")
    x, w = gauss_nodes(nodes)
    fx = np.asarray(f(x), dtype=float) * np.ones_like(x)
    if not np.all(np.isfinite(fx)):
        raise FloatingPointError(
            "f is non-finite at quadrature nodes; it grows faster than the Gaussian weight decays"
        )
    tab = hermite_table(qmax, x)
    c = tab @ (w * fx)
    c /= np.array([math.factorial(q) for q in range(qmax + 1)], dtype=float)
    c[np.abs(c) < ZERO_CUTOFF] = 0.0
    return HermiteCoeffs(tuple(c))
