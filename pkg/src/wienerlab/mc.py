"""Seeded, chunked Monte Carlo harness.

Every sample count ``n`` is cut into fixed-size chunks.  Chunk ``i`` of stream
``s`` draws from a Philox (counter-based) generator keyed by
``(seed, s, i)``, and chunk results are always combined in chunk order, so an
estimate depends only on ``(seed, stream, n)`` and never on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, NamedTuple, Sequence, TypeVar

import numpy as np

CHUNK = 16384
STDERR_BAND = 4.0
LOW_CONFIDENCE_REL = 0.10

R = TypeVar("R")


class Estimate(NamedTuple):
    value: float
    stderr: float

    def upper(self, band: float = STDERR_BAND) -> float:
        return self.value + band * self.stderr

    def lower(self, band: float = STDERR_BAND) -> float:
        return self.value - band * self.stderr

    @property
    def low_confidence(self) -> bool:
        return self.stderr > LOW_CONFIDENCE_REL * abs(self.value)


def chunk_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def chunk_sizes(n: int, chunk: int = CHUNK) -> list[int]:
    if n < 1:
        raise ValueError(f"sample count must be positive, got {n}")
    full, rem = divmod(n, chunk)
    return [chunk] * full + ([rem] if rem else [])


def map_chunks(
    fn: Callable[[np.random.Generator, int], R],
    n: int,
    seed: int,
    *,
    stream: int = 0,
    workers: int = 1,
    chunk: int = CHUNK,
) -> list[R]:
    """Run ``fn(rng, m)`` on every chunk; results come back in chunk order."""
    sizes = chunk_sizes(n, chunk)

    def task(i: int) -> R:
        return fn(chunk_rng(seed, stream, i), sizes[i])

    if workers <= 1 or len(sizes) == 1:
        return [task(i) for i in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, range(len(sizes))))


def concat(results: Sequence[dict]) -> dict[str, np.ndarray]:
    """Concatenate per-chunk dicts of arrays along the sample axis."""
    return {k: np.concatenate([r[k] for r in results]) for k in results[0]}


def gaussian_samples(n: int, dim: int, seed: int, *, stream: int = 0) -> np.ndarray:
    """``n`` standard Gaussian points in ``R^dim`` under the chunked stream layout."""
    parts = map_chunks(lambda rng, m: rng.standard_normal((m, dim)), n, seed, stream=stream)
    return np.concatenate(parts)


def mean_estimate(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples for a standard error")
    return Estimate(float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(n)))


def power_estimate(est: Estimate, p: float) -> Estimate:
    """``E^p`` with a delta-method standard error (``E`` assumed nonnegative)."""
    v = max(est.value, 0.0)
    if v == 0.0:
        return Estimate(0.0, est.stderr ** p if p < 1 else 0.0)
    return Estimate(v ** p, abs(p) * v ** (p - 1) * est.stderr)


def product_estimate(*factors: Estimate, const: float = 1.0) -> Estimate:
    """Product of estimates; relative errors are added linearly (conservative)."""
    value = const
    rel = 0.0
    for f in factors:
        value *= f.value
        if f.value != 0.0:
            rel += f.stderr / abs(f.value)
    if value == 0.0:
        # a zero factor with spread: propagate its absolute error
        se = 0.0
        for i, f in enumerate(factors):
            if f.value == 0.0 and f.stderr:
                others = const
                for j, g in enumerate(factors):
                    if j != i:
                        others *= abs(g.value) + g.stderr
                se += f.stderr * abs(others)
        return Estimate(0.0, se)
    return Estimate(value, abs(value) * rel)


def combined_stderr(*ests: Estimate) -> float:
    return math.sqrt(sum(e.stderr ** 2 for e in ests))
