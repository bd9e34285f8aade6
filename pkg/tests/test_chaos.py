import math

import numpy as np
import pytest

from wienerlab.chaos import (
    ChaosVector,
    Evaluator,
    GaussianSample,
    apply_L,
    apply_Linv,
    evaluate,
    inner_gradients,
    malliavin_d,
    malliavin_d2,
    mehler_mc,
    multiply,
    ou_semigroup,
    product,
    random_chaos,
    w_statistic,
    w_values,
)
from wienerlab import mc
from wienerlab.hermite import hermite_eval
from wienerlab.symtensor import SymTensor


def I(f):
    return ChaosVector.integral(f)


def test_eval_examples():
    e1 = SymTensor.basis(3, 0)
    g = np.array([1.7, -0.3, 0.4])
    assert evaluate(I(e1), g) == pytest.approx(1.7)
    assert evaluate(I(SymTensor(2, 3, {(0, 0): 1.0})), np.array([2.0, 0, 0])) == pytest.approx(3.0)
    assert evaluate(I(SymTensor.basis(3, 0, 1)), g) == pytest.approx(1.7 * -0.3)


def test_eval_outer_power(rng):
    h = rng.normal(size=3)
    g = rng.normal(size=3)
    nh = np.linalg.norm(h)
    for q in range(1, 5):
        ref = nh**q * hermite_eval(q, h @ g / nh)
        assert evaluate(I(SymTensor.outer_power(h, q)), g) == pytest.approx(ref, rel=1e-10)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        evaluate(I(SymTensor.basis(3, 0)), np.zeros(2))
    with pytest.raises(ValueError):
        GaussianSample(np.array([np.nan]))


def test_multiply_examples():
    e1, e2 = SymTensor.basis(2, 0), SymTensor.basis(2, 1)
    sq = multiply(1, e1, 1, e1)
    assert sq.allclose(I(SymTensor(2, 2, {(0, 0): 1.0})) + 1.0)
    assert multiply(1, e1, 1, e2).allclose(I(SymTensor.basis(2, 0, 1)))


def test_multiply_pointwise(rng):
    x = rng.normal(size=(1000, 3))
    for _ in range(3):
        F = random_chaos(rng, 3, [2])
        G = random_chaos(rng, 3, [2])
        P = product(F, G)
        np.testing.assert_allclose(P.evaluate_many(x), F.evaluate_many(x) * G.evaluate_many(x), atol=1e-9)


def test_second_moment_is_isometry(rng):
    F = random_chaos(rng, 3, [0, 1, 2])
    expected = F.mean**2 + sum(math.factorial(q) * F.kernel(q).norm_sq() for q in (1, 2))
    assert F.second_moment() == pytest.approx(expected)
    assert F.variance() == pytest.approx(expected - F.mean**2)


def test_malliavin_d_examples(rng):
    h = SymTensor(1, 3, {(0,): 0.5, (2,): -1.0})
    dF = malliavin_d(I(h))
    g = rng.normal(size=3)
    np.testing.assert_allclose(dF.evaluate(g), h.to_dense())
    f = SymTensor(2, 3, {(0, 1): 1.0, (2, 2): 0.5})
    dF = malliavin_d(I(f))
    for j in range(3):
        assert dF[j].allclose(2.0 * I(f.slot(j)))


def test_malliavin_d2_examples(rng):
    h = SymTensor(1, 3, {(0,): 0.5})
    g = rng.normal(size=3)
    np.testing.assert_allclose(malliavin_d2(I(h)).evaluate(g), np.zeros((3, 3)))
    f = SymTensor(2, 3, {(0, 1): 1.0, (2, 2): 0.5})
    np.testing.assert_allclose(malliavin_d2(I(f)).evaluate(g), 2.0 * f.to_dense())


def test_finite_differences(rng):
    F = random_chaos(rng, 3, [1, 2, 3, 4], scale=0.5)
    dF, d2F = malliavin_d(F), malliavin_d2(F)
    for g in rng.normal(size=(5, 3)):
        h = 1e-5
        fd = [(evaluate(F, g + h * e) - evaluate(F, g - h * e)) / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(dF.evaluate(g), fd, atol=1e-6 * max(1, np.max(np.abs(fd))))
        h = 1e-4
        hess = np.array([[(evaluate(F, g + h * a + h * b) - evaluate(F, g + h * a - h * b)
                           - evaluate(F, g - h * a + h * b) + evaluate(F, g - h * a - h * b)) / (4 * h * h)
                          for b in np.eye(3)] for a in np.eye(3)])
        np.testing.assert_allclose(d2F.evaluate(g), hess, atol=1e-5 * max(1, np.max(np.abs(hess))))
        val, grad, H = Evaluator(F).derivatives(g[None, :])
        np.testing.assert_allclose(grad[0], dF.evaluate(g), atol=1e-10)
        np.testing.assert_allclose(H[0], d2F.evaluate(g), atol=1e-10)


def test_operators(rng):
    F = random_chaos(rng, 2, [0, 1, 2, 3])
    assert apply_L(apply_Linv(F)).allclose(F.centered())
    h = I(SymTensor.basis(2, 0))
    assert apply_L(h).allclose(-h)
    assert apply_Linv(ChaosVector.constant(3.0, 2)).allclose(ChaosVector.zero(2))
    assert ou_semigroup(F, 0.0).allclose(F)
    assert ou_semigroup(F, 50.0).allclose(ChaosVector.constant(F.mean, 2), atol=1e-12)
    with pytest.raises(ValueError):
        ou_semigroup(F, -1.0)


def test_generator_identity(rng):
    F = random_chaos(rng, 3, [1, 2, 3], scale=0.5)
    LF = apply_L(F)
    for g in rng.normal(size=(5, 3)):
        h = 1e-4
        lap = sum((evaluate(F, g + h * e) - 2 * evaluate(F, g) + evaluate(F, g - h * e)) / h**2 for e in np.eye(3))
        grad = np.array([(evaluate(F, g + h * e) - evaluate(F, g - h * e)) / (2 * h) for e in np.eye(3)])
        assert evaluate(LF, g) == pytest.approx(lap - g @ grad, abs=1e-4)


def test_product_rule_via_chaos(rng):
    F = random_chaos(rng, 2, [1, 2, 3], scale=0.7)
    G = random_chaos(rng, 2, [1, 2], scale=0.7)
    lhs = malliavin_d(inner_gradients(F, G))
    dF, dG, d2F, d2G = malliavin_d(F), malliavin_d(G), malliavin_d2(F), malliavin_d2(G)
    for j in range(2):
        rhs = ChaosVector.zero(2)
        for k in range(2):
            rhs = rhs + product(d2F[j, k], dG[k]) + product(dF[k], d2G[j, k])
        assert lhs[j].allclose(rhs, atol=1e-10)


def test_w_statistic(rng):
    h = I(SymTensor(1, 3, {(0,): 0.6, (1,): 0.8}))
    assert w_statistic(h, rng.normal(size=3)) == pytest.approx(1.0)
    f = SymTensor(3, 3, {(0, 1, 2): 0.5, (0, 0, 1): 0.3})
    F = I(f)
    x = rng.normal(size=(20, 3))
    _, grad, _ = Evaluator(F).derivatives(x, hessian=False)
    np.testing.assert_allclose(w_values(F, x), np.sum(grad**2, axis=1) / 3, rtol=1e-10)


def test_mehler_examples():
    F = I(SymTensor(2, 1, {(0, 0): 1.0}))
    exact = mehler_mc(F, 0.0, np.array([1.3]), 100, seed=1)
    assert exact.stderr == 0.0 and exact.value == pytest.approx(1.3**2 - 1)
    est = mehler_mc(F, math.log(2), np.array([1.0]), 200_000, seed=2)
    assert abs(est.value) <= 4 * est.stderr
    lin = I(SymTensor.basis(1, 0))
    est = mehler_mc(lin, 0.5, np.array([2.0]), 100_000, seed=3)
    assert abs(est.value - math.exp(-0.5) * 2.0) <= 4 * est.stderr


def test_mehler_matches_semigroup(rng):
    F = random_chaos(rng, 2, [0, 1, 2, 3], scale=0.5)
    s = rng.normal(size=2)
    est = mehler_mc(F, 0.7, s, 200_000, seed=4)
    assert abs(est.value - evaluate(ou_semigroup(F, 0.7), s)) <= 4 * est.stderr


def test_integration_by_parts(rng):
    F = random_chaos(rng, 2, [1, 2], scale=0.5)
    G = random_chaos(rng, 2, [1, 2, 3], scale=0.5)
    x = mc.gaussian_samples(200_000, 2, seed=5)
    lhs = F.evaluate_many(x) * (-apply_L(G)).evaluate_many(x)
    rhs = inner_gradients(F, G).evaluate_many(x)
    diff = mc.mean_estimate(lhs - rhs)
    assert abs(diff.value) <= 4 * diff.stderr


def test_json_roundtrip(rng):
    F = random_chaos(rng, 3, [0, 1, 3])
    assert ChaosVector.from_json(F.to_json()).allclose(F, atol=0)


def test_order_cap():
    with pytest.raises(ValueError):
        I(SymTensor(9, 1, {(0,) * 9: 1.0}))
