"""Empirical distances between a sample and the standard normal law."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import mc

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
TV_LABEL = "DIAGNOSTIC/BIASED"


@dataclass(frozen=True)
class EmpiricalSample:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size < 2:
            raise ValueError("an empirical sample needs at least 2 values")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size


def _pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def _cdf_antiderivative(x):
    """``G(x) = x Phi(x) + phi(x)``, the antiderivative of ``Phi`` vanishing at -inf."""
    return x * ndtr(x) + _pdf(x)


def _as_sample(s) -> EmpiricalSample:
    return s if isinstance(s, EmpiricalSample) else EmpiricalSample(s)


def empirical_dw_1d(s) -> float:
    """Exact ``int |F_n(x) - Phi(x)| dx`` for the empirical CDF ``F_n`` of ``s``."""
    x = _as_sample(s).values
    n = x.size
    # tails: int_{-inf}^{x_1} Phi and int_{x_n}^{inf} (1 - Phi)
    total = float(_cdf_antiderivative(x[0]))
    total += float(_pdf(x[-1]) - x[-1] * ndtr(-x[-1]))
    a, b = x[:-1], x[1:]
    level = np.arange(1, n) / n
    z = ndtri(level)
    m = np.clip(z, a, b)
    ga, gb, gm = _cdf_antiderivative(a), _cdf_antiderivative(b), _cdf_antiderivative(m)
    left = level * (m - a) - (gm - ga)
    right = (gb - gm) - level * (b - m)
    return total + float(np.sum(left + right))


def empirical_dw_estimate(values, batches: int = 20) -> mc.Estimate:
    """Full-sample ``d_W`` with a batch-spread standard error.

    The spread is the standard deviation of the per-batch distances, scaled by
    ``sqrt(batch_size / n)`` to the full sample size.
    """
    v = np.asarray(values, dtype=float).ravel()
    full = empirical_dw_1d(v)
    size = v.size // batches
    if batches < 2 or size < 2:
        return mc.Estimate(full, float("nan"))
    per = np.array([empirical_dw_1d(v[i * size:(i + 1) * size]) for i in range(batches)])
    return mc.Estimate(full, float(np.std(per, ddof=1) / math.sqrt(batches)))


def sampling_floor(values) -> float:
    """Plug-in estimate of ``E d_W(F_n, F)``, the upward bias of the empirical distance.

    Uses ``E|F_n(x) - F(x)| ~ sqrt(2 F(1-F) / (pi n))`` with ``F`` replaced by
    the empirical CDF.
    """
    x = _as_sample(values).values
    n = x.size
    level = np.arange(1, n) / n
    width = np.diff(x)
    return float(math.sqrt(2.0 / (math.pi * n)) * np.sum(np.sqrt(level * (1.0 - level)) * width))


def gaussian_bin_edges(bins: int) -> np.ndarray:
    """Interior edges splitting N(0,1) into ``bins`` equal-mass cells."""
    return ndtri(np.arange(1, bins) / bins)


def histogram_tv(s, bins: int | Sequence[float] = 20) -> float:
    """Binned total-variation *diagnostic*: half the L1 gap of bin masses.

    This is a biased stand-in, never an estimate of the true TV distance.
    ``bins`` is either a count (equal Gaussian-mass cells) or the sorted
    interior edges; the outer cells always extend to +-inf.
    """
    x = _as_sample(s).values
    if np.isscalar(bins):
        if int(bins) < 2:
            raise ValueError("need at least 2 bins")
        edges = gaussian_bin_edges(int(bins))
    else:
        edges = np.asarray(bins, dtype=float)
        if edges.size < 1 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing and nonempty")
    counts = np.diff(np.concatenate(([0], np.searchsorted(x, edges, side="left"), [x.size])))
    emp = counts / x.size
    cdf = np.concatenate(([0.0], ndtr(edges), [1.0]))
    gauss = np.diff(cdf)
    return float(min(1.0, 0.5 * np.sum(np.abs(emp - gauss))))
