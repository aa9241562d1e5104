import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldp_erm.errors import ConstructionError, InputDomainError
from ldp_erm.polyapprox import (BernsteinSurrogate, ChebyshevDisjunctionPoly, SurrogateConfig, TrigPolynomial,
                                bernstein_basis, bernstein_basis_all, chebyshev_disjunction, eval_surrogate,
                                grad_surrogate, iterated_basis, iterated_bernstein_fit, iterated_weight_matrix,
                                trig_fit, unit_grid)

from oracles import bernstein_exact, cosine_coefficients_dct, de_casteljau, iterated_h2


def fit(f, k, h=1, p=1):
    cfg = SurrogateConfig(k, h, p)
    return iterated_bernstein_fit(f(unit_grid(k, p)), cfg)


# --- Bernstein basis -------------------------------------------------------

def test_basis_examples():
    assert bernstein_basis(0, 1, 0.5) == pytest.approx(0.5, abs=1e-15)
    assert bernstein_basis(2, 3, 0.5) == pytest.approx(0.375, abs=1e-15)


@pytest.mark.parametrize("k,v,x", [(7, 3, Fraction(1, 3)), (20, 0, Fraction(9, 10)), (50, 25, Fraction(1, 2)),
                                   (12, 12, Fraction(3, 4))])
def test_basis_matches_exact_rational(k, v, x):
    assert bernstein_basis(v, k, float(x)) == pytest.approx(float(bernstein_exact(v, k, x)), rel=1e-12)


def test_basis_large_degree_is_finite_and_sums_to_one():
    vals = bernstein_basis_all(10_000, np.array([0.0, 0.3, 1.0]))
    assert np.all(np.isfinite(vals))
    np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("v,k,x", [(-1, 3, 0.5), (4, 3, 0.5), (1, 3, 1.5), (1, 3, -0.1), (0, 0, 0.5)])
def test_basis_domain_errors(v, k, x):
    with pytest.raises(InputDomainError):
        bernstein_basis(v, k, x)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.floats(0, 1))
def test_partition_of_unity(k, x):
    assert abs(bernstein_basis_all(k, np.array([x])).sum() - 1.0) <= 1e-12


# --- Surrogate fitting ----------------------------------------------------

@pytest.mark.parametrize("k", [1, 3, 10])
def test_linear_reproduction_1d(k):
    s = fit(lambda g: g[:, 0], k)
    for x in (0.0, 0.25, 0.7, 1.0):
        assert abs(s(x) - x) <= 1e-12


def test_square_k2_value():
    s = fit(lambda g: g[:, 0] ** 2, 2)
    assert s(0.5) == pytest.approx(0.375, abs=1e-15)


def test_h1_matches_de_casteljau():
    rng = np.random.default_rng(1)
    vals = rng.random(9)
    s = iterated_bernstein_fit(vals, SurrogateConfig(8, 1, 1))
    for x in rng.random(10):
        assert s(x) == pytest.approx(de_casteljau(vals, x), abs=1e-13)


def test_h2_equals_two_b_minus_b_composed():
    rng = np.random.default_rng(2)
    vals = rng.random(7)
    s = iterated_bernstein_fit(vals, SurrogateConfig(6, 2, 1))
    for x in rng.random(10):
        assert s(x) == pytest.approx(iterated_h2(vals, x), abs=1e-12)


@pytest.mark.parametrize("h", [1, 2, 3, 4])
def test_operator_identity_binomial_expansion(h):
    # I - (I - B)^h applied to grid data, with B as a matrix on node values
    k = 5
    nodes = np.arange(k + 1) / k
    M = bernstein_basis_all(k, nodes)
    I = np.eye(k + 1)
    rng = np.random.default_rng(h)
    vals = rng.random(k + 1)
    op = I - np.linalg.matrix_power(I - M, h)
    x = rng.random(8)
    # B^(h) f (x) = b(x) . [sum_i C(h,i)(-1)^(i-1) M^(i-1)] f and also = b(x) . (op-based node values)
    direct = iterated_basis(k, h, x) @ vals
    # for h >= 1, b(x) @ M^(i-1) f is B^i f at x; the expansion equals b(x) @ W f
    W = sum(math.comb(h, i) * (-1) ** (i - 1) * np.linalg.matrix_power(M, i - 1) for i in range(1, h + 1))
    np.testing.assert_allclose(direct, bernstein_basis_all(k, x) @ W @ vals, atol=1e-12)
    # at the nodes, B^(h) f equals the operator I - (I - B)^h applied to f
    np.testing.assert_allclose(iterated_basis(k, h, nodes) @ vals, op @ vals, atol=1e-12)
    np.testing.assert_allclose(iterated_weight_matrix(k, h), W, atol=1e-12)


def test_length_mismatch():
    with pytest.raises(InputDomainError):
        iterated_bernstein_fit(np.zeros(5), SurrogateConfig(3, 1, 1))


@pytest.mark.parametrize("kw", [dict(k=0), dict(k=2, h=0), dict(k=2, p=0), dict(k=2, smoothness_T=0.0)])
def test_config_invariants(kw):
    with pytest.raises(InputDomainError):
        SurrogateConfig(**kw)


def test_constant_and_plane_2d():
    s = fit(lambda g: np.full(len(g), 0.3), 4, 2, 2)
    np.testing.assert_allclose(s.evaluate(np.random.default_rng(0).random((5, 2))), 0.3, atol=1e-13)
    s = fit(lambda g: g[:, 0] + g[:, 1], 4, 1, 2)
    assert eval_surrogate(s, [0.3, 0.4]) == pytest.approx(0.7, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_linear_reproduction_property(p, h, k, seed):
    rng = np.random.default_rng(seed)
    a, c = rng.normal(size=p), rng.normal()
    s = fit(lambda g: g @ a + c, k, h, p)
    pts = rng.random((100, p))
    assert np.max(np.abs(s.evaluate(pts) - (pts @ a + c))) <= 1e-10


def test_evaluate_outside_cube_raises():
    s = fit(lambda g: g[:, 0], 3)
    with pytest.raises(InputDomainError):
        s(1.2)


def test_gradient_examples():
    s = fit(lambda g: g[:, 0], 4)
    np.testing.assert_allclose(s.gradient(np.array([[0.1], [0.5], [0.9]])), 1.0, atol=1e-12)
    s = fit(lambda g: np.ones(len(g)), 4, 2, 2)
    np.testing.assert_allclose(s.gradient(np.array([[0.2, 0.7]])), 0.0, atol=1e-12)


def test_gradient_vs_central_difference():
    rng = np.random.default_rng(5)
    s = BernsteinSurrogate(SurrogateConfig(5, 2, 2), rng.random(36))
    step = 1e-5
    for x in rng.uniform(0.05, 0.95, size=(10, 2)):
        g = grad_surrogate(s, x)
        fd = np.array([(s(x + step * e) - s(x - step * e)) / (2 * step) for e in np.eye(2)])
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)) <= 1e-6


@pytest.mark.parametrize("h,max_slope", [(1, -(1 - 0.3)), (2, -(2 - 0.3))])
def test_approximation_rate(h, max_slope):
    # every derivative of exp(x - 1) is bounded by 1 on [0, 1], so it is (2h, 1)-smooth
    f = lambda x: np.exp(x - 1.0)  # noqa: E731
    xs = np.linspace(0, 1, 2001)
    ks = np.array([4, 8, 16, 32])
    errs = [np.max(np.abs(fit(lambda g: f(g[:, 0]), k, h).evaluate(xs[:, None]) - f(xs))) for k in ks]
    slope = np.polyfit(np.log(ks), np.log(errs), 1)[0]
    assert slope <= max_slope


def test_surrogate_json_round_trip():
    rng = np.random.default_rng(3)
    s = BernsteinSurrogate(SurrogateConfig(3, 2, 2), rng.random(16))
    t = BernsteinSurrogate.from_json(s.to_json())
    pts = rng.random((4, 2))
    np.testing.assert_array_equal(s.evaluate(pts), t.evaluate(pts))
    doc = json.loads(s.to_json())
    assert set(doc) >= {"schema_version", "config", "values"}


# --- Chebyshev disjunction polynomial -------------------------------------

def test_chebyshev_k2_closed_form():
    # 1 - T_2(2x - 3) / T_2(-3) = (24 x - 8 x^2) / 17
    poly = chebyshev_disjunction(2, 0.1)
    np.testing.assert_allclose(poly.coeffs, [0.0, 24 / 17, -8 / 17], atol=1e-14)
    assert poly.achieved_error == pytest.approx(1 / 17, abs=1e-14)


def test_chebyshev_k4_contract():
    poly = chebyshev_disjunction(4, 0.1)
    assert poly(0.0) == 0.0
    assert poly.coeffs[0] == 0.0
    assert np.max(np.abs(poly(np.arange(1, 5)) - 1)) <= 0.1
    assert poly.degree == 3


def test_chebyshev_k1_is_identity():
    poly = chebyshev_disjunction(1, 0.3)
    np.testing.assert_array_equal(poly.coeffs, [0.0, 1.0])
    assert poly.achieved_error == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.floats(0.01, 0.9))
def test_chebyshev_contract_property(k, gamma):
    poly = chebyshev_disjunction(k, gamma)
    assert poly(0.0) == 0.0
    assert np.max(np.abs(poly(np.arange(1, k + 1)) - 1)) <= gamma
    assert np.isfinite(poly.max_coeff)


def test_chebyshev_degree_growth_sqrt_k():
    degs = {k: chebyshev_disjunction(k, 0.05).degree for k in (4, 16, 64)}
    # quadrupling k should roughly double the degree
    assert degs[16] <= 2.5 * degs[4] and degs[64] <= 2.5 * degs[16]


def test_chebyshev_construction_error_carries_achieved():
    with pytest.raises(ConstructionError) as info:
        chebyshev_disjunction(50, 1e-6, max_degree=3)
    assert info.value.achieved_error > 1e-6


@pytest.mark.parametrize("k,gamma", [(0, 0.1), (3, 0.0), (3, 1.0)])
def test_chebyshev_domain(k, gamma):
    with pytest.raises(InputDomainError):
        chebyshev_disjunction(k, gamma)


def test_chebyshev_json_round_trip():
    poly = chebyshev_disjunction(5, 0.2)
    back = ChebyshevDisjunctionPoly.from_json(poly.to_json())
    np.testing.assert_array_equal(back.coeffs, poly.coeffs)


# --- Trigonometric fitting ------------------------------------------------

def test_trig_constant_and_cos():
    c = trig_fit(lambda th: np.ones(len(th)), 5).coeffs
    np.testing.assert_allclose(c, np.eye(5)[0], atol=1e-12)
    c = trig_fit(lambda th: np.cos(th[:, 0]), 5).coeffs
    np.testing.assert_allclose(c, np.eye(5)[1], atol=1e-12)


def test_trig_matches_scipy_dct():
    g = lambda th: np.exp(np.cos(th))  # noqa: E731
    ours = trig_fit(lambda th: g(th[:, 0]), 8).coeffs
    np.testing.assert_allclose(ours, cosine_coefficients_dct(g, 8, 32), atol=1e-13)


def test_trig_exp_error_decreases():
    x = np.cos(np.linspace(0, np.pi, 100))
    errs = []
    for t in (2, 4, 8):
        tp = trig_fit(lambda th: np.exp(np.cos(th[:, 0])), t)
        errs.append(np.max(np.abs(tp.evaluate(np.arccos(x)) - np.exp(x))))
    assert errs[0] > errs[1] > errs[2]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_trig_left_inverse(p, t, seed):
    c = np.random.default_rng(seed).normal(size=(t,) * p)
    tp = TrigPolynomial(t, p, c)
    back = trig_fit(lambda th: tp.evaluate(th), t, p)
    np.testing.assert_allclose(back.coeffs, c, atol=1e-10)


def test_trig_even_and_json():
    tp = TrigPolynomial(3, 2, np.arange(9.0))
    th = np.array([[0.3, 1.1]])
    assert tp.evaluate(th) == pytest.approx(tp.evaluate(-th))
    back = TrigPolynomial.from_json(tp.to_json())
    np.testing.assert_array_equal(back.coeffs, tp.coeffs)


def test_trig_bad_degree():
    with pytest.raises(InputDomainError):
        trig_fit(lambda th: th[:, 0], 0)
