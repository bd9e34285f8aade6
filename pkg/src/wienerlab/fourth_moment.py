"""Fourth moment and second order characterizations of CLTs on a fixed Wiener chaos."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from . import mc
from .chaos import ChaosVector
from .distances import empirical_dw_estimate
from .mc import Estimate
from .stein import malliavin_samples, _second_order_from
from .symtensor import SymTensor, contraction_norm_sq


def contraction_rhs(q: int, contraction_sq: Sequence[float]) -> float:
    """``q^4 (q-1)^4 sum_r (r-1)!^2 C(q-2, r-1)^4 (2q-2-2r)! ||f (x)_r f||^2`` over ``r = 1..q-1``."""
    total = 0.0
    for r, c2 in zip(range(1, q), contraction_sq):
        total += (
            math.factorial(r - 1) ** 2
            * math.comb(q - 2, r - 1) ** 4
            * math.factorial(2 * q - 2 - 2 * r)
            * c2
        )
    return q ** 4 * (q - 1) ** 4 * total


def variance_estimate(x) -> Estimate:
    """Sample variance with the large-sample standard error ``sqrt((m4 - s^4)/n)``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = x - x.mean()
    s2 = float(np.sum(c * c) / (n - 1))
    m4 = float(np.mean(c ** 4))
    return Estimate(s2, math.sqrt(max(m4 - s2 * s2, 0.0) / n))


@dataclass
class FourthMomentRecord:
    k: int
    q: int
    d: int
    EF2: Estimate
    EF4: Estimate
    contraction_norms: tuple[float, ...]  # ||f (x)_r f|| for r = 1..q-1
    var_DF2: Estimate
    E_DF2: Estimate
    E_D2op4: Estimate
    E_D2contr2: Estimate
    contraction_rhs: float
    exact: dict = field(default_factory=dict)  # q = 2 closed forms from eigenvalues
    scale: float = 1.0
    dw_emp: Estimate | None = None
    bound_contr: Estimate | None = None

    @property
    def contraction_rhs_holds(self) -> bool:
        slack = mc.STDERR_BAND * self.E_D2contr2.stderr
        return self.E_D2contr2.value <= self.contraction_rhs + slack + 1e-12 * self.contraction_rhs

    def row(self) -> dict:
        out = {"k": self.k, "EF2": self.EF2.value, "EF4": self.EF4.value}
        for r, c in enumerate(self.contraction_norms, start=1):
            out[f"contr_r{r}"] = c
        out.update(
            varDF2=self.var_DF2.value,
            E_D2op4=self.E_D2op4.value,
            E_D2contr2=self.E_D2contr2.value,
            dw_emp=self.dw_emp.value if self.dw_emp else float("nan"),
            bound_contr=self.bound_contr.value if self.bound_contr else float("nan"),
            EF4_se=self.EF4.stderr,
            varDF2_se=self.var_DF2.stderr,
            E_D2op4_se=self.E_D2op4.stderr,
            E_D2contr2_se=self.E_D2contr2.stderr,
            dw_emp_se=self.dw_emp.stderr if self.dw_emp else float("nan"),
            bound_contr_se=self.bound_contr.stderr if self.bound_contr else float("nan"),
            contraction_rhs=self.contraction_rhs,
            contraction_rhs_holds=int(self.contraction_rhs_holds),
            EF4_exact=self.exact.get("EF4", float("nan")),
            scale=self.scale,
        )
        return out


def second_chaos_exact(f: SymTensor) -> dict:
    """Closed forms for ``F = I_2(f)`` in terms of the eigenvalues ``gamma`` of ``f``."""
    g = np.linalg.eigvalsh(f.to_dense())
    s2, s4 = float(np.sum(g ** 2)), float(np.sum(g ** 4))
    ef2 = 2.0 * s2
    return {
        "EF2": ef2,
        "EF4": 3.0 * ef2 ** 2 + 48.0 * s4,
        "varDF2": 32.0 * s4,
        "E_DF2": 4.0 * s2,
        "E_D2op4": float((2.0 * np.max(np.abs(g))) ** 4),
        "E_D2contr2": 16.0 * s4,
        "sum_gamma4": s4,
    }


def fm_statistics(
    q: int, f: SymTensor, n: int, seed: int, *, k: int = 0, workers: int = 1
) -> FourthMomentRecord:
    """Moments, contraction norms and second order quantities of ``F = I_q(f)``."""
    if q < 2:
        raise ValueError(f"the fourth moment lab needs q >= 2, got {q}")
    if f.order != q:
        raise ValueError(f"kernel has order {f.order}, expected {q}")
    s = malliavin_samples(ChaosVector.integral(f), n, seed, stream=k, workers=workers)
    return _record(q, f, s, k)


def _record(q: int, f: SymTensor, s: dict, k: int) -> FourthMomentRecord:
    contr_sq = [contraction_norm_sq(f, f, r) for r in range(1, q)]
    ef2 = math.factorial(q) * f.norm_sq()
    rec = FourthMomentRecord(
        k=k,
        q=q,
        d=f.dim,
        EF2=Estimate(ef2, 0.0),
        EF4=mc.mean_estimate(s["F"] ** 4),
        contraction_norms=tuple(math.sqrt(c) for c in contr_sq),
        var_DF2=variance_estimate(s["DF2"]),
        E_DF2=mc.mean_estimate(s["DF2"]),
        E_D2op4=mc.mean_estimate(s["op"] ** 4),
        E_D2contr2=mc.mean_estimate(s["contr"]),
        contraction_rhs=contraction_rhs(q, contr_sq),
    )
    if q == 2:
        rec.exact = second_chaos_exact(f)
    return rec


def decreasing_trend(values: Sequence[float]) -> bool:
    """Negative Spearman correlation with the index and at most one non-decrease."""
    v = np.asarray(values, dtype=float)
    if v.size < 2 or not np.all(np.isfinite(v)):
        return False
    inversions = int(np.sum(np.diff(v) >= 0))
    if v.size == 2 or np.all(v == v[0]):
        return inversions == 0
    rho = spearmanr(np.arange(v.size), v).statistic
    return bool(np.isfinite(rho) and rho < 0 and inversions <= 1)


TREND_QUANTITIES = ("EF4_minus_3", "sum_contractions_sq", "varDF2", "E_D2op4", "E_D2contr2")


@dataclass
class SequenceVerdict:
    records: list[FourthMomentRecord]
    trends: dict[str, bool]

    @property
    def converging(self) -> bool:
        return all(self.trends.values())

    @property
    def contraction_rhs_holds(self) -> bool:
        return all(r.contraction_rhs_holds for r in self.records)

    def rows(self) -> list[dict]:
        return [r.row() for r in self.records]


def _trend_series(records: Sequence[FourthMomentRecord]) -> dict[str, list[float]]:
    def pick(rec, key, est):
        return rec.exact.get(key, est.value) if rec.exact else est.value

    return {
        "EF4_minus_3": [abs(pick(r, "EF4", r.EF4) - 3.0) for r in records],
        "sum_contractions_sq": [sum(c * c for c in r.contraction_norms) for r in records],
        "varDF2": [pick(r, "varDF2", r.var_DF2) for r in records],
        "E_D2op4": [pick(r, "E_D2op4", r.E_D2op4) for r in records],
        "E_D2contr2": [pick(r, "E_D2contr2", r.E_D2contr2) for r in records],
    }


def fm_sequence_verdict(
    kernels: Sequence[tuple[int, SymTensor]],
    n: int,
    seed: int,
    *,
    workers: int = 1,
    ks: Sequence[int] | None = None,
) -> SequenceVerdict:
    """Statistics along a kernel sequence, each rescaled to ``E[F_k^2] = 1``.

    Exact (q = 2) values drive the trend flags when available; Monte Carlo
    values otherwise.
    """
    if not kernels:
        raise ValueError("empty kernel sequence")
    orders = {q for q, _ in kernels}
    if len(orders) != 1:
        raise ValueError(f"mixed chaos orders in sequence: {sorted(orders)}")
    ks = list(ks) if ks is not None else list(range(1, len(kernels) + 1))
    records = []
    for k, (q, f) in zip(ks, kernels):
        norm = math.sqrt(math.factorial(q) * f.norm_sq())
        if norm == 0.0:
            raise ValueError(f"kernel {k} is zero")
        scale = 1.0 / norm
        fs = scale * f
        if q < 2:
            raise ValueError(f"the fourth moment lab needs q >= 2, got {q}")
        # standardized already: E F = 0, E F^2 = 1
        s = malliavin_samples(ChaosVector.integral(fs), n, seed, stream=k, workers=workers)
        rec = _record(q, fs, s, k)
        rec.scale = scale
        rec.bound_contr = _second_order_from(s, "contr").w
        rec.dw_emp = empirical_dw_estimate(s["F"])
        records.append(rec)
    trends = {name: decreasing_trend(v) for name, v in _trend_series(records).items()}
    return SequenceVerdict(records, trends)


def canonical_family(k: int) -> SymTensor:
    """``(1/sqrt(2k)) sum_{j<k} e_j (x) e_j``: ``E F^2 = 1``, ``E F^4 = 3 + 12/k``."""
    return SymTensor(2, k, {(j, j): 1.0 / math.sqrt(2.0 * k) for j in range(k)})


def constant_family(k: int) -> SymTensor:
    """``e_0 (x) e_0 / sqrt(2)`` for every ``k``: ``F = H_2(g_0)/sqrt(2)`` never becomes Gaussian."""
    return SymTensor(2, 1, {(0, 0): 1.0 / math.sqrt(2.0)})


def random_sparse_kernel(q: int, dim: int, density: float, rng: np.random.Generator) -> SymTensor:
    """Symmetric kernel with a random subset of canonical entries set to N(0,1) values."""
    coeffs = {}
    for t in itertools.combinations_with_replacement(range(dim), q):
        if rng.random() < density:
            coeffs[t] = rng.standard_normal()
    if not coeffs:
        coeffs[tuple(range(q)) if q <= dim else (0,) * q] = 1.0
    return SymTensor(q, dim, coeffs)
