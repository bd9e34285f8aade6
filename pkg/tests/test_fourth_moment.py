import math

import numpy as np
import pytest

from wienerlab.fourth_moment import (
    canonical_family,
    constant_family,
    decreasing_trend,
    fm_sequence_verdict,
    fm_statistics,
    random_sparse_kernel,
    second_chaos_exact,
    contraction_rhs,
)
from wienerlab.symtensor import SymTensor, contraction_norm_sq, contraction_selfnorm_sq

N = 200_000


def within(est, ref, band=4.0):
    return abs(est.value - ref) <= band * est.stderr + 1e-12 * abs(ref)


def test_two_eigenvalue_kernel():
    f = SymTensor(2, 2, {(0, 0): 1 / math.sqrt(2), (1, 1): -1 / math.sqrt(2)})
    ex = second_chaos_exact(f)
    assert ex["EF2"] == pytest.approx(2.0)
    rec = fm_statistics(2, f, N, 1)
    assert rec.contraction_norms[0] == pytest.approx(1 / math.sqrt(2))
    # sum gamma^4 = 1/2, so EF4 = 3 EF2^2 + 48 / 2
    assert ex["EF4"] == pytest.approx(3 * 4 + 24)
    assert within(rec.EF4, ex["EF4"])
    assert within(rec.EF2, 2.0)


def test_single_eigenvalue_kernel():
    f = SymTensor(2, 1, {(0, 0): 1.0})  # F = H_2(g): E F^2 = 2, E F^4 = E H_2^4 = 60
    ex = second_chaos_exact(f)
    assert ex["EF2"] == pytest.approx(2.0)
    assert ex["EF4"] == pytest.approx(60.0)
    assert ex["EF4"] / ex["EF2"] ** 2 == pytest.approx(15.0)


def test_gradient_mean_is_q_times_variance(rng):
    for q in (2, 3):
        f = random_sparse_kernel(q, 3, 0.7, rng)
        rec = fm_statistics(q, f, N, 2)
        assert within(rec.E_DF2, q * math.factorial(q) * f.norm_sq())


def test_q_below_two_rejected():
    with pytest.raises(ValueError):
        fm_statistics(1, SymTensor.basis(2, 0), 100, 1)


def test_contraction_rhs_q2_is_equality(rng):
    m = rng.normal(size=(4, 4))
    f = SymTensor.from_dense(m + m.T)
    rhs = contraction_rhs(2, [contraction_norm_sq(f, f, 1)])
    assert rhs == pytest.approx(16 * contraction_selfnorm_sq(f.to_dense()))


@pytest.mark.parametrize("q", [3, 4])
def test_contraction_inequality_random_kernels(q, rng):
    f = random_sparse_kernel(q, 3, 0.6, rng)
    f = (1 / math.sqrt(math.factorial(q) * f.norm_sq())) * f
    rec = fm_statistics(q, f, 50_000, 3)
    assert rec.contraction_rhs_holds


def test_cumulant_proportionality():
    for k in (1, 3, 7):
        ex = second_chaos_exact(canonical_family(k))
        assert (ex["EF4"] - 3.0) / ex["E_D2contr2"] == pytest.approx(3.0)


def test_canonical_family_converges():
    ks = [1, 2, 4, 8, 16]
    v = fm_sequence_verdict([(2, canonical_family(k)) for k in ks], N, 1, ks=ks)
    for rec, k in zip(v.records, ks):
        assert rec.exact["EF4"] == pytest.approx(3 + 12 / k)
        assert within(rec.EF4, 3 + 12 / k)
        assert within(rec.bound_contr, rec.dw_emp.value) or rec.dw_emp.value <= rec.bound_contr.value
    assert v.converging and v.contraction_rhs_holds


def test_constant_family_does_not_converge():
    ks = [1, 2, 3, 4]
    v = fm_sequence_verdict([(2, constant_family(k)) for k in ks], 20000, 1, ks=ks)
    assert not v.converging
    assert all(r.exact["EF4"] == pytest.approx(15.0) for r in v.records)


def test_mixed_orders_rejected():
    with pytest.raises(ValueError):
        fm_sequence_verdict([(2, canonical_family(1)), (3, SymTensor.basis(1, 0, 0, 0))], 100, 1)


@pytest.mark.parametrize(
    "values, expected",
    [([5, 4, 3, 2, 1], True), ([5, 4, 4.5, 2, 1], True), ([1, 2, 3], False), ([2, 2, 2], False), ([5, 6, 3, 4, 1], False)],
)
def test_trend_rule(values, expected):
    assert decreasing_trend(values) is expected
