"""Stein-Malliavin distance bounds for chaos functionals, checked against Monte Carlo.

All univariate bounds are computed for the standardized functional
``(F - mu) / sigma``; ``mu`` and ``sigma^2`` come from the chaos isometry.
"""
from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import mc
from .chaos import ChaosVector, Evaluator, apply_Linv
from .distances import empirical_dw_estimate, histogram_tv, sampling_floor
from .mc import Estimate
from .symtensor import batch_spectral

SQRT10 = math.sqrt(10.0)
POINCARE_W_CONST = SQRT10 / 2.0
POINCARE_TV_CONST = SQRT10
MULTIDIM_CONST = 3.0 * math.sqrt(2.0) / 2.0
MIN_VARIANCE = 1e-10
# independent streams for the bound sample and the distance sample
BOUND_STREAM = 0
DISTANCE_STREAM = 1


class Bound(NamedTuple):
    w: Estimate
    tv: Estimate


class FirstOrderBound(NamedTuple):
    w: Estimate
    tv: Estimate
    w_sq: Estimate
    tv_sq: Estimate
    mean_w: Estimate


def standardize(F: ChaosVector) -> tuple[ChaosVector, float, float]:
    """Return ``((F - mu)/sigma, mu, sigma^2)``."""
    mu, var = F.mean, F.variance()
    if var < MIN_VARIANCE:
        raise ValueError(f"variance {var:.3g} is below {MIN_VARIANCE}; the functional is (nearly) constant")
    return F.centered() * (1.0 / math.sqrt(var)), mu, var


def malliavin_samples(
    F: ChaosVector,
    n: int,
    seed: int,
    *,
    stream: int = BOUND_STREAM,
    workers: int = 1,
    inverse_hessian: bool = False,
) -> dict[str, np.ndarray]:
    """Per-sample Malliavin quantities of ``F`` at ``n`` Gaussian points.

    Keys: ``F``, ``W`` (``<DF,-DL^{-1}F>``), ``DF2`` (``||DF||^2``), ``DL2``
    (``||DL^{-1}F||^2``), ``op`` (``||D^2F||_op``), ``contr``
    (``||D^2F (x)_1 D^2F||^2``) and, with ``inverse_hessian``, ``op_L``
    (``||D^2 L^{-1}F||_op``).
    """
    evF = Evaluator(F)
    evG = Evaluator(-apply_Linv(F))

    def chunk(rng, m):
        x = rng.standard_normal((m, F.dim))
        val, gF, hF = evF.derivatives(x)
        _, gG, hG = evG.derivatives(x, hessian=inverse_hessian)
        op, contr = batch_spectral(hF)
        out = {
            "F": val,
            "W": np.sum(gF * gG, axis=1),
            "DF2": np.sum(gF * gF, axis=1),
            "DL2": np.sum(gG * gG, axis=1),
            "op": op,
            "contr": contr,
        }
        if inverse_hessian:
            out["op_L"] = batch_spectral(hG)[0]
        return out

    return mc.concat(mc.map_chunks(chunk, n, seed, stream=stream, workers=workers))


def _fourth_root_mean(x) -> Estimate:
    return mc.power_estimate(mc.mean_estimate(x), 0.25)


def _second_order_from(s: dict, key: str) -> Bound:
    d2 = _fourth_root_mean(s[key] ** 4 if key == "op" else s[key])
    d1 = _fourth_root_mean(s["DF2"] ** 2)
    w = mc.product_estimate(d2, d1, const=POINCARE_W_CONST)
    tv = mc.product_estimate(d2, d1, const=POINCARE_TV_CONST)
    return Bound(w, tv)


def first_order_bound(F: ChaosVector, n: int, seed: int, *, workers: int = 1) -> FirstOrderBound:
    """``E|1 - W|`` and ``E[(1 - W)^2]^{1/2}`` for the standardized functional; TV doubles them."""
    Fs, _, _ = standardize(F)
    s = malliavin_samples(Fs, n, seed, workers=workers)
    dev = 1.0 - s["W"]
    w = mc.mean_estimate(np.abs(dev))
    w_sq = mc.power_estimate(mc.mean_estimate(dev * dev), 0.5)
    return FirstOrderBound(
        w,
        Estimate(2 * w.value, 2 * w.stderr),
        w_sq,
        Estimate(2 * w_sq.value, 2 * w_sq.stderr),
        mc.mean_estimate(s["W"]),
    )


def second_order_bound(F: ChaosVector, n: int, seed: int, *, workers: int = 1) -> Bound:
    """Second order Poincare bound ``sqrt(10)/2 E[||D^2F||_op^4]^{1/4} E[||DF||^4]^{1/4}`` (``sqrt(10)`` for TV)."""
    Fs, _, _ = standardize(F)
    return _second_order_from(malliavin_samples(Fs, n, seed, workers=workers), "op")


def contraction_bound(F: ChaosVector, n: int, seed: int, *, workers: int = 1) -> Bound:
    """As :func:`second_order_bound` with ``E[||D^2F (x)_1 D^2F||^2]^{1/4}`` in place of the operator norm."""
    Fs, _, _ = standardize(F)
    return _second_order_from(malliavin_samples(Fs, n, seed, workers=workers), "contr")


@dataclass
class BoundReport:
    """One functional's bound chain next to its empirical Wasserstein distance."""

    functional_id: str
    mu: float
    sigma2: float
    n_samples: int
    seed: int
    first_w: Estimate
    first_w_sq: Estimate
    first_tv: Estimate
    second_w: Estimate
    second_tv: Estimate
    contr_w: Estimate
    contr_tv: Estimate
    mean_w: Estimate
    empirical_dw: Estimate
    empirical_dw_floor: float
    tv_hist_diagnostic: float
    low_confidence: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def violation(self) -> bool:
        return bool(self.violations)

    def row(self) -> dict:
        out = {"functional": self.functional_id, "mu": self.mu, "sigma2": self.sigma2}
        for name in (
            "first_w", "first_w_sq", "first_tv", "second_w", "second_tv",
            "contr_w", "contr_tv", "mean_w", "empirical_dw",
        ):
            est = getattr(self, name)
            out[name] = est.value
            out[name + "_se"] = est.stderr
        out["empirical_dw_floor"] = self.empirical_dw_floor
        out["tv_hist_DIAGNOSTIC_BIASED"] = self.tv_hist_diagnostic
        out["n"] = self.n_samples
        out["seed"] = self.seed
        out["low_confidence"] = ";".join(self.low_confidence)
        out["violation"] = int(self.violation)
        return out

    def to_json(self) -> str:
        doc = dataclasses.asdict(self)
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = {"value": v[0], "stderr": v[1]}
        return json.dumps(doc, sort_keys=True)


def bound_report(
    F: ChaosVector,
    n: int,
    seed: int,
    *,
    functional_id: str = "F",
    workers: int = 1,
    hist_bins: int = 20,
) -> BoundReport:
    """Full bound chain (first order, second order, contraction) plus empirical ``d_W``."""
    Fs, mu, var = standardize(F)
    s = malliavin_samples(Fs, n, seed, workers=workers)
    dev = 1.0 - s["W"]
    first = mc.mean_estimate(np.abs(dev))
    first_sq = mc.power_estimate(mc.mean_estimate(dev * dev), 0.5)
    second = _second_order_from(s, "op")
    contr = _second_order_from(s, "contr")
    ev = Evaluator(Fs)
    vals = np.concatenate(
        mc.map_chunks(lambda rng, m: ev.value(rng.standard_normal((m, Fs.dim))), n, seed,
                      stream=DISTANCE_STREAM, workers=workers)
    )
    dw = empirical_dw_estimate(vals)
    rep = BoundReport(
        functional_id=functional_id,
        mu=mu,
        sigma2=var,
        n_samples=n,
        seed=seed,
        first_w=first,
        first_w_sq=first_sq,
        first_tv=Estimate(2 * first.value, 2 * first.stderr),
        second_w=second.w,
        second_tv=second.tv,
        contr_w=contr.w,
        contr_tv=contr.tv,
        mean_w=mc.mean_estimate(s["W"]),
        empirical_dw=dw,
        empirical_dw_floor=sampling_floor(vals),
        tv_hist_diagnostic=histogram_tv(vals, hist_bins),
    )
    for name in ("first_w", "second_w", "contr_w"):
        est = getattr(rep, name)
        if est.value > 0 and est.low_confidence:
            rep.low_confidence.append(name)
        # d_W(F_n, Z) <= d_W(F, Z) + d_W(F_n, F): allow the sampling floor on top of the band
        slack = mc.STDERR_BAND * mc.combined_stderr(est, dw) + rep.empirical_dw_floor
        if dw.value > est.value + slack:
            rep.violations.append(name)
    return rep


class Inequality(NamedTuple):
    lhs: Estimate
    rhs: Estimate

    @property
    def holds(self) -> bool:
        slack = mc.STDERR_BAND * mc.combined_stderr(self.lhs, self.rhs)
        return self.lhs.value <= self.rhs.value + slack + 1e-12 * abs(self.rhs.value)


@dataclass
class PoincareReport:
    p: int
    gradient: Inequality  # E||DL^{-1}F||^p <= E||DF||^p
    hessian: Inequality  # E||D^2L^{-1}F||_op^p <= 2^{-p} E||D^2F||_op^p
    moment: Inequality  # E[F^p] <= (p-1)^{p/2} E||DF||^p
    n_samples: int
    seed: int

    @property
    def all_hold(self) -> bool:
        return self.gradient.holds and self.hessian.holds and self.moment.holds

    def rows(self) -> list[dict]:
        out = []
        for name in ("gradient", "hessian", "moment"):
            ineq = getattr(self, name)
            out.append({
                "inequality": name, "p": self.p,
                "lhs": ineq.lhs.value, "lhs_se": ineq.lhs.stderr,
                "rhs": ineq.rhs.value, "rhs_se": ineq.rhs.stderr,
                "holds": int(ineq.holds), "n": self.n_samples, "seed": self.seed,
            })
        return out


def poincare_suite(F: ChaosVector, p: int, n: int, seed: int, *, workers: int = 1) -> PoincareReport:
    """Monte Carlo check of the three moment inequalities for a centered functional."""
    if p < 2 or p % 2:
        raise ValueError(f"p must be an even integer >= 2, got {p}")
    if abs(F.mean) > 0.0:
        raise ValueError("poincare_suite expects a centered functional (zero q=0 term)")
    s = malliavin_samples(F, n, seed, workers=workers, inverse_hessian=True)
    half = p / 2
    e_df = mc.mean_estimate(s["DF2"] ** half)
    e_dl = mc.mean_estimate(s["DL2"] ** half)
    e_op = mc.mean_estimate(s["op"] ** p)
    e_opl = mc.mean_estimate(s["op_L"] ** p)
    e_fp = mc.mean_estimate(s["F"] ** p)
    hess_factor = 0.5 ** p
    mom_factor = (p - 1) ** half
    return PoincareReport(
        p=p,
        gradient=Inequality(e_dl, e_df),
        hessian=Inequality(e_opl, Estimate(hess_factor * e_op.value, hess_factor * e_op.stderr)),
        moment=Inequality(e_fp, Estimate(mom_factor * e_df.value, mom_factor * e_df.stderr)),
        n_samples=n,
        seed=seed,
    )


@dataclass
class MultidimReport:
    bound_w: Estimate
    prefactor: float  # 3 sqrt(2)/2 ||C^{-1}||_op ||C||_op^{1/2}
    hessian_terms: list[Estimate]  # E[||D^2F_i||_op^4]^{1/4}
    gradient_terms: list[Estimate]  # E[||DF_j||^4]^{1/4}
    covariance_exact: np.ndarray
    covariance_emp: np.ndarray
    covariance_emp_se: np.ndarray
    covariance_mismatch: bool
    n_samples: int
    seed: int

    def row(self) -> dict:
        d = len(self.hessian_terms)
        out = {"bound_w": self.bound_w.value, "bound_w_se": self.bound_w.stderr, "prefactor": self.prefactor}
        for i in range(d):
            out[f"hess_{i}"] = self.hessian_terms[i].value
            out[f"grad_{i}"] = self.gradient_terms[i].value
        out["covariance_mismatch"] = int(self.covariance_mismatch)
        out["n"] = self.n_samples
        out["seed"] = self.seed
        return out


def multidim_bound(
    Fs: Sequence[ChaosVector], C, n: int, seed: int, *, workers: int = 1
) -> MultidimReport:
    """Wasserstein bound between ``(F_1..F_d)`` and ``N_d(0, C)``.

    A covariance mismatch between the functionals and ``C`` (beyond 4 standard
    errors) is flagged and warned about, not raised.
    """
    C = np.asarray(C, dtype=float)
    d = len(Fs)
    if d < 2:
        raise ValueError("the multidimensional bound needs d >= 2 functionals")
    if C.shape != (d, d):
        raise ValueError(f"C has shape {C.shape}, expected {(d, d)}")
    if not np.allclose(C, C.T, rtol=0, atol=1e-12):
        raise ValueError("C is not symmetric")
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise ValueError("C is not positive definite") from exc
    dim = Fs[0].dim
    for i, F in enumerate(Fs):
        if F.dim != dim:
            raise ValueError(f"functional {i} has dim {F.dim}, expected {dim}")
        if F.mean != 0.0:
            raise ValueError(f"functional {i} is not centered")
    ev = np.linalg.eigvalsh(C)
    prefactor = MULTIDIM_CONST * (1.0 / ev.min()) * math.sqrt(ev.max())

    samples = [malliavin_samples(F, n, seed, workers=workers) for F in Fs]
    hess = [_fourth_root_mean(s["op"] ** 4) for s in samples]
    grad = [_fourth_root_mean(s["DF2"] ** 2) for s in samples]
    sum_h = Estimate(sum(e.value for e in hess), sum(e.stderr for e in hess))
    sum_g = Estimate(sum(e.value for e in grad), sum(e.stderr for e in grad))
    bound = mc.product_estimate(sum_h, sum_g, const=prefactor)

    cov_exact = np.array([[_chaos_cov(a, b) for b in Fs] for a in Fs])
    vals = [s["F"] for s in samples]
    emp = np.zeros((d, d))
    se = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            e = mc.mean_estimate(vals[i] * vals[j])
            emp[i, j], se[i, j] = e
    mismatch = bool(np.any(np.abs(emp - C) > mc.STDERR_BAND * se + 1e-12))
    if mismatch:
        warnings.warn("empirical covariance of the functionals is inconsistent with C", stacklevel=2)
    return MultidimReport(bound, prefactor, hess, grad, cov_exact, emp, se, mismatch, n, seed)


def _chaos_cov(F: ChaosVector, G: ChaosVector) -> float:
    return sum(
        math.factorial(q) * F.kernel(q).inner(G.kernel(q)) for q in set(F.orders) & set(G.orders) if q
    )
