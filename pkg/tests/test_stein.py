import math

import numpy as np
import pytest

from wienerlab.chaos import ChaosVector, random_chaos
from wienerlab.stein import (
    MULTIDIM_CONST,
    POINCARE_TV_CONST,
    POINCARE_W_CONST,
    bound_report,
    contraction_bound,
    first_order_bound,
    malliavin_samples,
    multidim_bound,
    poincare_suite,
    second_order_bound,
    standardize,
)
from wienerlab.symtensor import SymTensor

N = 100_000


def I(f):
    return ChaosVector.integral(f)


@pytest.fixture
def e1():
    return I(SymTensor(1, 2, {(0,): 1.0}))


@pytest.fixture
def second_chaos():
    # F = (g1^2 - g2^2) / 2, eigenvalues +-1/2
    return I(SymTensor(2, 2, {(0, 0): 0.5, (1, 1): -0.5}))


def test_constants():
    assert POINCARE_W_CONST == math.sqrt(10) / 2
    assert POINCARE_TV_CONST == math.sqrt(10)
    assert MULTIDIM_CONST == 3 * math.sqrt(2) / 2


def test_first_chaos_bounds_vanish(e1):
    assert first_order_bound(e1, 1000, 1).w.value == 0.0
    assert second_order_bound(e1, 1000, 1).w.value == 0.0
    assert contraction_bound(e1, 1000, 1).tv.value == 0.0


def test_standardize_and_degenerate():
    F = 3.0 * I(SymTensor(1, 1, {(0,): 2.0})) + 5.0
    Fs, mu, var = standardize(F)
    assert mu == 5.0 and var == pytest.approx(36.0)
    assert Fs.variance() == pytest.approx(1.0) and Fs.mean == 0.0
    with pytest.raises(ValueError):
        standardize(ChaosVector.constant(1.0, 1))


def test_w_mean_is_one(second_chaos):
    rep = bound_report(random_chaos(np.random.default_rng(3), 2, [1, 2, 3], scale=0.5), N, 5)
    assert abs(rep.mean_w.value - 1.0) <= 4 * rep.mean_w.stderr


def test_second_chaos_oracles(second_chaos):
    # D^2F = 2f, so ||D^2F||_op = 1 and ||D^2F (x)_1 D^2F||^2 = 16 sum gamma^4 = 2 are deterministic
    s = malliavin_samples(second_chaos, 20000, 1)
    np.testing.assert_allclose(s["op"], 1.0)
    np.testing.assert_allclose(s["contr"], 2.0)
    # E||DF||^4 = 32 sum gamma^4 + (4 sum gamma^2)^2 = 4 + 4 = 8
    sec = second_order_bound(second_chaos, N, 2)
    ref = POINCARE_W_CONST * 1.0 * 8 ** 0.25
    assert abs(sec.w.value - ref) <= 4 * sec.w.stderr
    con = contraction_bound(second_chaos, N, 2)
    assert abs(con.w.value - POINCARE_W_CONST * 2 ** 0.25 * 8 ** 0.25) <= 4 * con.w.stderr
    assert sec.tv.value == pytest.approx(2 * sec.w.value)


def test_contraction_dominates_pointwise(rng):
    F = random_chaos(rng, 3, [1, 2, 3], scale=0.5)
    s = malliavin_samples(F, 5000, 3)
    assert np.all(s["op"] ** 4 <= s["contr"] * (1 + 1e-12))


def test_bound_chain(second_chaos, rng):
    for F in (second_chaos, random_chaos(rng, 3, [2, 3], scale=0.5)):
        rep = bound_report(F, N, 11)
        band = lambda a, b: 4 * math.hypot(a.stderr, b.stderr)
        assert rep.empirical_dw.value <= rep.first_w.value + band(rep.empirical_dw, rep.first_w) + rep.empirical_dw_floor
        assert rep.first_w.value <= rep.second_w.value + band(rep.first_w, rep.second_w)
        assert rep.second_w.value <= rep.contr_w.value + band(rep.second_w, rep.contr_w)
        assert not rep.violation


def test_invariance_under_shift_and_scale(second_chaos):
    a = second_order_bound(second_chaos, 20000, 4)
    b = second_order_bound(2.5 * second_chaos + 7.0, 20000, 4)
    assert a.w.value == pytest.approx(b.w.value, rel=1e-12)


def test_report_serialization(second_chaos):
    rep = bound_report(second_chaos, 5000, 1, functional_id="x")
    row = rep.row()
    assert row["functional"] == "x" and "tv_hist_DIAGNOSTIC_BIASED" in row
    assert '"functional_id": "x"' in rep.to_json()


def test_poincare_examples(e1, rng):
    rep = poincare_suite(e1, 2, 50000, 1)
    assert rep.moment.lhs.value == pytest.approx(rep.moment.rhs.value, rel=0.02)
    assert rep.all_hold
    F = I(SymTensor(2, 3, {(0, 1): 0.7, (2, 2): -0.4, (0, 0): 0.2}))
    assert poincare_suite(F, 4, N, 2).all_hold
    with pytest.raises(ValueError):
        poincare_suite(e1, 3, 100, 1)
    with pytest.raises(ValueError):
        poincare_suite(e1 + 1.0, 2, 100, 1)


def test_hessian_factor(rng):
    F = random_chaos(rng, 2, [2, 3], scale=0.5)
    rep = poincare_suite(F, 4, 20000, 3)
    s = malliavin_samples(F, 20000, 3, inverse_hessian=True)
    assert rep.hessian.rhs.value == pytest.approx(np.mean(s["op"] ** 4) / 16)


def test_multidim_examples():
    x1, x2 = I(SymTensor(1, 2, {(0,): 1.0})), I(SymTensor(1, 2, {(1,): 1.0}))
    rep = multidim_bound([x1, x2], np.eye(2), 20000, 1)
    assert rep.bound_w.value == 0.0 and not rep.covariance_mismatch
    with pytest.raises(ValueError):
        multidim_bound([x1, x2], np.array([[1.0, 2.0], [2.0, 1.0]]), 100, 1)
    with pytest.raises(ValueError):
        multidim_bound([x1], np.eye(1), 100, 1)
    with pytest.warns(UserWarning):
        rep = multidim_bound([x1, x2], np.diag([2.0, 1.0]), 20000, 1)
    assert rep.covariance_mismatch


def test_multidim_mixed_pair():
    F1 = I(SymTensor(2, 2, {(0, 0): 0.5, (1, 1): -0.5}))
    F2 = I(SymTensor(1, 2, {(0,): 0.6, (1,): 0.8}))
    rep = multidim_bound([F1, F2], np.eye(2), N, 3)
    # hessian terms: 2 max|gamma| = 1 and 0; gradient terms: 8^{1/4} and 1
    ref = MULTIDIM_CONST * (1.0 + 0.0) * (8 ** 0.25 + 1.0)
    assert rep.hessian_terms[0].value == pytest.approx(1.0)
    assert rep.hessian_terms[1].value == 0.0
    assert rep.gradient_terms[1].value == pytest.approx(1.0)
    assert abs(rep.bound_w.value - ref) <= 4 * rep.bound_w.stderr
