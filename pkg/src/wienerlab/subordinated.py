"""CLT experiment for integrals of functionals of stationary Gaussian increments.

For a centered Gaussian process ``B`` with stationary increments and increment
covariance ``rho``, the studied functional is

    F_T = T^{-1/2} int_{aT}^{bT} (f(B_{u+1} - B_u) - E f(Z)) du,

represented on a midpoint grid of step ``delta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.integrate import quad

from . import mc
from .distances import empirical_dw_estimate, sampling_floor
from .fourth_moment import variance_estimate
from .hermite import HermiteCoeffs, gaussian_expectation
from .mc import Estimate
from .stein import POINCARE_W_CONST

MAX_GRID = 16384
JITTER = 1e-10
ODD_TOL = 1e-10
TAIL_TARGET = 1e-6
REPLICA_CHUNK = 256


def fbm_increment_cov(H: float, x):
    """``rho(x) = (|x+1|^{2H} + |x-1|^{2H} - 2|x|^{2H}) / 2`` for fBm with Hurst index ``H``."""
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst index must lie in (0, 1), got {H}")
    x = np.abs(np.asarray(x, dtype=float))
    h2 = 2.0 * H
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = 0.5 * ((x + 1.0) ** h2 + np.abs(x - 1.0) ** h2 - 2.0 * x ** h2)
        # cancellation-free form for large |x|
        u = 1.0 / np.where(x > 2.0, x, 4.0)
        far = 0.5 * np.where(x > 2.0, x, 4.0) ** h2 * (
            np.expm1(h2 * np.log1p(u)) + np.expm1(h2 * np.log1p(-u))
        )
    out = np.where(x > 2.0, far, direct)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class StationaryIncrementModel:
    """Increment covariance ``rho`` with a power-law (or compact) tail description.

    ``tail = (c, e)`` declares ``|rho(x)| <= c |x|^e (1 + 1/|x|)`` beyond
    ``tail_start``; ``tail = None`` declares ``rho = 0`` beyond ``tail_start``.
    """

    rho: Callable
    family: str = "custom"
    params: dict = field(default_factory=dict)
    tail: tuple[float, float] | None = None
    tail_start: float = 2.0
    abs_integral: float = field(init=False, default=float("nan"))

    def __post_init__(self):
        r0 = float(self.rho(0.0))
        if not r0 > 0:
            raise ValueError("rho(0) must be positive")
        pts = np.array([0.3, 0.7, 1.0, 1.5, 3.0, 10.0])
        if not np.allclose(self.rho(pts), self.rho(-pts), rtol=1e-12, atol=1e-15):
            raise ValueError("rho must be even")
        if np.any(np.abs(self.rho(pts)) > r0 * (1 + 1e-12)):
            raise ValueError("|rho(x)| must not exceed rho(0)")
        if self.tail is not None and self.tail[1] >= -1.0:
            raise ValueError("rho is not integrable: tail exponent must be < -1")
        object.__setattr__(self, "abs_integral", rho_power_integral(self, 1, absolute=True)[0])

    @classmethod
    def fbm(cls, H: float) -> "StationaryIncrementModel":
        if not 0.0 < H <= 0.5:
            raise ValueError(f"the CLT regime needs Hurst index in (0, 1/2], got {H}")
        tail = None if H == 0.5 else (H * abs(2 * H - 1), 2 * H - 2)
        return cls(lambda x: fbm_increment_cov(H, x), "fbm", {"H": H}, tail, 2.0 if H < 0.5 else 1.0)

    def __call__(self, x):
        return self.rho(x)


def _tail_integral(model: StationaryIncrementModel, p: int, x0: float) -> float:
    """Upper bound on ``int_{|x|>x0} |rho|^p``."""
    if model.tail is None:
        return 0.0
    c, e = model.tail
    pe = p * e
    if pe >= -1.0:
        return math.inf
    return 2.0 * (c * (1.0 + 1.0 / x0)) ** p * x0 ** (pe + 1.0) / (-(pe + 1.0))


def rho_power_integral(
    model: StationaryIncrementModel, p: int, *, absolute: bool = False, x_max: float | None = None
) -> tuple[float, float]:
    """``int_R rho^p`` (or ``|rho|^p``) and an error estimate.

    Adaptive quadrature on ``[0, x_max]`` split at the kinks and on a geometric
    mesh; the power-law tail beyond ``x_max`` is added analytically and also
    counted in the error.
    """
    def g(x):
        v = float(model.rho(x))
        return abs(v) ** p if absolute else v ** p

    if model.tail is None:
        x_max = model.tail_start
    elif x_max is None:
        x_max = 64.0
        while _tail_integral(model, p, x_max) > TAIL_TARGET and x_max < 1e6:
            x_max *= 2.0
    edges = [0.0, 1.0]
    while edges[-1] < x_max:
        edges.append(min(x_max, max(2.0, 2.0 * edges[-1])))
    val = err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = quad(g, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-11)
        val += 2.0 * v
        err += 2.0 * e
    tail = _tail_integral(model, p, x_max)
    return val + tail, err + tail


@dataclass
class SigmaLimit:
    value: float
    error: float
    terms: list[float]  # per-q contributions c_{2q}^2 (2q)! (b-a) int rho^{2q}


def sigma_limit(
    f: HermiteCoeffs, model: StationaryIncrementModel, qmax: int | None = None, *, a: float = 0.0, b: float = 1.0
) -> SigmaLimit:
    """``(b - a) sum_{q>=1} c_{2q}^2 (2q)! int rho^{2q}`` for symmetric ``f``."""
    if f.is_constant():
        raise ValueError("f is constant, so the limiting variance is zero")
    if f.odd_part_norm() > ODD_TOL:
        raise ValueError("f must be symmetric: odd Hermite coefficients are not negligible")
    if not a < b:
        raise ValueError("need a < b")
    top = f.cmax // 2 if qmax is None else qmax
    terms, err = [], 0.0
    for q in range(1, top + 1):
        c = f.c[2 * q] if 2 * q <= f.cmax else 0.0
        if c == 0.0:
            terms.append(0.0)
            continue
        w = (b - a) * c * c * math.factorial(2 * q)
        v, e = rho_power_integral(model, 2 * q)
        terms.append(w * v)
        err += w * e
    return SigmaLimit(sum(terms), err, terms)


def _check_grid(grid) -> tuple[np.ndarray, float]:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("grid must be a nonempty 1-d array")
    if grid.size > MAX_GRID:
        raise ValueError(f"grid of {grid.size} points exceeds the dense limit {MAX_GRID}")
    if grid.size == 1:
        return grid, 0.0
    steps = np.diff(grid)
    h = float(steps.mean())
    if h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise ValueError("grid must be sorted and equally spaced")
    return grid, h


class IncrementSampler:
    """Exact Gaussian sampler for ``Y_u = B_{u+1} - B_u`` on an equally spaced grid.

    The lower Cholesky factor of the Toeplitz covariance is computed once; its
    leading ``m x m`` block is the factor for the first ``m`` grid points.
    """

    def __init__(self, model: StationaryIncrementModel, grid):
        self.model = model
        self.grid, self.step = _check_grid(grid)
        n = self.grid.size
        col = np.asarray(model(self.grid - self.grid[0]), dtype=float) * np.ones(n)
        self.jitter = 0.0
        try:
            self.factor = sla.cholesky(sla.toeplitz(col), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            self.jitter = JITTER * col[0]
            cov = sla.toeplitz(col)
            cov[np.diag_indices(n)] += self.jitter
            try:
                self.factor = sla.cholesky(cov, lower=True, overwrite_a=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise ValueError("increment covariance is not positive semidefinite within the jitter budget") from exc
        self.factor.setflags(write=False)

    def sample(self, rng: np.random.Generator, n_paths: int, m: int | None = None) -> np.ndarray:
        """``n_paths`` paths over the first ``m`` grid points, shape ``(n_paths, m)``."""
        m = self.grid.size if m is None else m
        z = rng.standard_normal((n_paths, m))
        return z @ self.factor[:m, :m].T


@dataclass
class IncrementPath:
    grid: np.ndarray
    values: np.ndarray
    jitter: float


def simulate_increments(model: StationaryIncrementModel, grid, seed: int, n_paths: int = 1) -> IncrementPath:
    """Sample ``Y_u`` at the grid points (``values`` has shape ``(n_paths, len(grid))``)."""
    sampler = IncrementSampler(model, grid)
    vals = sampler.sample(mc.chunk_rng(seed, 0, 0), n_paths)
    return IncrementPath(sampler.grid, vals, sampler.jitter)


def midpoints(a: float, b: float, T: float, delta: float) -> np.ndarray:
    n = (b - a) * T / delta
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        raise ValueError(f"(b-a)T/delta = {n} must be a positive integer")
    return a * T + (np.arange(int(round(n))) + 0.5) * delta


def compute_FT(path: IncrementPath, f: HermiteCoeffs, a: float, b: float, T: float, delta: float) -> np.ndarray:
    """Midpoint Riemann sum for ``F_T`` on every path in ``path`` (one value per path)."""
    mids = midpoints(a, b, T, delta)
    grid = path.grid
    h = float(grid[1] - grid[0]) if grid.size > 1 else delta
    pos = (mids - grid[0]) / h
    idx = np.rint(pos).astype(int)
    if np.any(np.abs(pos - idx) > 1e-6) or idx.min() < 0 or idx.max() >= grid.size:
        raise ValueError("path grid does not contain the midpoints of [aT, bT] at spacing delta")
    vals = np.atleast_2d(path.values)[:, idx]
    return (f(vals) - f.mean).sum(axis=1) * (delta / math.sqrt(T))


def _toeplitz_sum(col: np.ndarray) -> float:
    """Sum of all entries of the symmetric Toeplitz matrix with first column ``col``."""
    m = col.size
    return float(m * col[0] + 2.0 * np.dot(m - np.arange(1, m), col[1:]))


def _cov_of_f(f: HermiteCoeffs, r: np.ndarray) -> np.ndarray:
    """``Cov(f(Y_u), f(Y_v))`` for standard ``Y`` with correlation ``r``."""
    out = np.zeros_like(r)
    for q, c in enumerate(f.c):
        if q and c:
            out += c * c * math.factorial(q) * r ** q
    return out


def discretized_variance(model: StationaryIncrementModel, f: HermiteCoeffs, a, b, T, delta) -> float:
    """Exact variance of the midpoint-sum ``F_T`` (requires ``rho(0) = 1``)."""
    m = midpoints(a, b, T, delta).size
    r = np.asarray(model(np.arange(m) * delta), dtype=float)
    return delta * delta / T * _toeplitz_sum(_cov_of_f(f, r))


def _trace_fourth_power(col: np.ndarray, block: int = 512) -> float:
    """``tr(M^4) = ||M^2||_F^2`` for symmetric Toeplitz ``M`` via FFT products."""
    m = col.size
    total = 0.0
    lags = np.arange(m)
    for j0 in range(0, m, block):
        idx = np.arange(j0, min(m, j0 + block))
        cols = col[np.abs(lags[:, None] - idx[None, :])]
        prod = sla.matmul_toeplitz((col, col), cols, check_finite=False)
        total += float(np.sum(prod * prod))
    return total


@dataclass
class BoundIngredients:
    grad4: float  # bound on E||DF_T||^4
    contr2: float  # bound on E||D^2F_T (x)_1 D^2F_T||^2
    abs_double: float  # (1/T) int int |rho(u-v)|
    quad_sum: float  # (1/T^2) int |rho(u-v) rho(w-z) rho(u-w) rho(z-v)|


def bound_ingredients(model, f: HermiteCoeffs, a, b, T, delta) -> BoundIngredients:
    """Upper bounds on the two expectations entering the contraction bound for ``F_T``.

    ``E||DF_T||^4 <= E|f'(Z)|^4 ((1/T) int int |rho|)^2`` and
    ``E||D^2F_T (x)_1 D^2F_T||^2 <= E|f''(Z)|^4 (1/T^2) int |rho rho rho rho|``,
    with both integrals taken as grid sums over the discretization.
    """
    m = midpoints(a, b, T, delta).size
    col = np.abs(np.asarray(model(np.arange(m) * delta), dtype=float))
    nodes = max(64, 2 * f.cmax + 16)
    d1, d2 = f.derivative(1), f.derivative(2)
    e1 = gaussian_expectation(lambda x: np.abs(d1(x)) ** 4, nodes)
    e2 = gaussian_expectation(lambda x: np.abs(d2(x)) ** 4, nodes)
    double = delta ** 2 / T * _toeplitz_sum(col)
    quad4 = delta ** 4 / T ** 2 * _trace_fourth_power(col)
    return BoundIngredients(e1 * double ** 2, e2 * quad4, double, quad4)


@dataclass
class SubordinatedConfig:
    model: StationaryIncrementModel
    f: HermiteCoeffs
    a: float = 0.0
    b: float = 1.0
    Ts: Sequence[float] = (16, 32, 64, 128, 256, 512, 1024)
    delta: float = 0.125
    replicas: int = 2000
    seed: int = 0
    qmax: int | None = None

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")
        if not 0 < self.delta <= 0.125:
            raise ValueError("delta must be in (0, 1/8]")
        if self.replicas < 100:
            raise ValueError("distance estimation needs at least 100 replicas")
        if not self.Ts:
            raise ValueError("empty T grid")
        if abs(float(self.model(0.0)) - 1.0) > 1e-12:
            raise ValueError("F_T simulation assumes unit increment variance rho(0) = 1")
        self.Ts = tuple(sorted(float(t) for t in self.Ts))
        for T in self.Ts:
            midpoints(self.a, self.b, T, self.delta)


@dataclass
class RateRow:
    T: float
    var_emp: Estimate
    var_exact: float
    sigma2: float
    dw_emp: Estimate
    dw_floor: float
    bound_contrW: float
    bound_contrW_exactvar: float
    ingredients: BoundIngredients

    @property
    def bound_stderr(self) -> float:
        # the bound divides by the empirical variance; propagate its error
        return self.bound_contrW * self.var_emp.stderr / self.var_emp.value

    @property
    def violation(self) -> bool:
        """Empirical ``d_W`` above the bound beyond the error band plus the sampling floor."""
        slack = mc.STDERR_BAND * math.hypot(self.dw_emp.stderr, self.bound_stderr) + self.dw_floor
        return self.dw_emp.value > self.bound_contrW + slack

    def row(self) -> dict:
        return {
            "T": self.T,
            "VarFT_emp": self.var_emp.value,
            "VarFT_emp_se": self.var_emp.stderr,
            "VarFT_exact": self.var_exact,
            "sigma2": self.sigma2,
            "dw_emp": self.dw_emp.value,
            "dw_emp_se": self.dw_emp.stderr,
            "dw_floor": self.dw_floor,
            "bound_contrW": self.bound_contrW,
            "bound_contrW_se": self.bound_stderr,
            "bound_contrW_exactvar": self.bound_contrW_exactvar,
            "E_DF4_bound": self.ingredients.grad4,
            "E_D2contr2_bound": self.ingredients.contr2,
            "violation": int(self.violation),
        }


@dataclass
class RateStudy:
    rows: list[RateRow]
    sigma: SigmaLimit
    slope_bound: float
    slope_dw: float
    jitter: float

    @property
    def violation(self) -> bool:
        return any(r.violation for r in self.rows)

    def table(self) -> list[dict]:
        return [r.row() for r in self.rows]


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def rate_study(cfg: SubordinatedConfig, *, workers: int = 1) -> RateStudy:
    """Replicate ``F_T`` over the T grid and compare its distance to N(0,1) with the bound."""
    sig = sigma_limit(cfg.f, cfg.model, cfg.qmax, a=cfg.a, b=cfg.b)
    n_max = midpoints(cfg.a, cfg.b, cfg.Ts[-1], cfg.delta).size
    # only lags matter, so one sampler on the largest grid serves every T
    sampler = IncrementSampler(cfg.model, (np.arange(n_max) + 0.5) * cfg.delta)
    rows = []
    for t_index, T in enumerate(cfg.Ts):
        m = midpoints(cfg.a, cfg.b, T, cfg.delta).size
        scale = cfg.delta / math.sqrt(T)

        def chunk(rng, size, m=m, scale=scale):
            y = sampler.sample(rng, size, m)
            return (cfg.f(y) - cfg.f.mean).sum(axis=1) * scale

        ft = np.concatenate(
            mc.map_chunks(chunk, cfg.replicas, cfg.seed, stream=t_index, workers=workers, chunk=REPLICA_CHUNK)
        )
        var_emp = variance_estimate(ft)
        var_exact = discretized_variance(cfg.model, cfg.f, cfg.a, cfg.b, T, cfg.delta)
        std = (ft - ft.mean()) / math.sqrt(var_emp.value)
        ing = bound_ingredients(cfg.model, cfg.f, cfg.a, cfg.b, T, cfg.delta)
        prod = (ing.grad4 * ing.contr2) ** 0.25
        rows.append(
            RateRow(
                T=T,
                var_emp=var_emp,
                var_exact=var_exact,
                sigma2=sig.value,
                dw_emp=empirical_dw_estimate(std),
                dw_floor=sampling_floor(std),
                bound_contrW=POINCARE_W_CONST * prod / var_emp.value,
                bound_contrW_exactvar=POINCARE_W_CONST * prod / var_exact,
                ingredients=ing,
            )
        )
    Ts = [r.T for r in rows]
    slope_b = loglog_slope(Ts, [r.bound_contrW for r in rows]) if len(rows) > 1 else float("nan")
    slope_d = loglog_slope(Ts, [r.dw_emp.value for r in rows]) if len(rows) > 1 else float("nan")
    return RateStudy(rows, sig, slope_b, slope_d, sampler.jitter)
