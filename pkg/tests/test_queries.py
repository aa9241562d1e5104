import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldp_erm.errors import InputDomainError, ResourceError
from ldp_erm.polyapprox import chebyshev_disjunction
from ldp_erm.queries import (CoefficientSummary, SmoothQuery, answer_marginal, answer_marginals, answer_smooth,
                             disjunction_answers, encode_disjunction, encode_disjunctions, enumerate_queries,
                             gaussian_kernel_query, monomial_basis, release_marginals, release_smooth,
                             trig_approx_error, trig_basis_values)


def bits(n, p, seed):
    return (np.random.default_rng(seed).random((n, p)) < np.linspace(0.1, 0.4, p)).astype(np.int64)


# --- Monomials and encodings ----------------------------------------------

def test_monomial_basis_size_and_order():
    b = monomial_basis(3, 2)
    assert b.dim == math.comb(5, 2)
    assert list(b.total_degree) == sorted(b.total_degree)
    np.testing.assert_array_equal(b.exponents[0], [0, 0, 0])


def test_encoding_matches_direct_polynomial():
    # the coefficient vector dotted with y's monomials must equal p(<x, y>)
    poly = chebyshev_disjunction(3, 0.1)
    basis = monomial_basis(5, poly.degree)
    for x in itertools.product([0, 1], repeat=5):
        w = encode_disjunction(np.array(x), poly, basis)
        for y in enumerate_queries(5, 3)[::3]:
            assert basis.monomials(y) @ w == pytest.approx(poly(float(np.dot(x, y))), abs=1e-10)


def test_batched_encoding_matches_single():
    poly = chebyshev_disjunction(2, 0.1)
    basis = monomial_basis(4, poly.degree)
    X = bits(30, 4, 0)
    np.testing.assert_array_equal(encode_disjunctions(X, poly, basis),
                                  np.array([encode_disjunction(x, poly, basis) for x in X]))


def test_disjunction_answers_brute_force():
    X = bits(200, 5, 1)
    for y in enumerate_queries(5, 2):
        ref = np.mean([any(x[j] and y[j] for j in range(5)) for x in X])
        assert disjunction_answers(X, y[None, :])[0] == pytest.approx(ref)


def test_enumerate_queries():
    Y = enumerate_queries(6, 2)
    assert Y.shape == (1 + 6 + 15, 6)
    assert Y.sum(axis=1).max() == 2
    big = enumerate_queries(30, 3, rng=0)
    assert big.shape == (10 ** 4, 30) and big.sum(axis=1).max() <= 3


# --- Marginal release -----------------------------------------------------

def test_noiseless_marginals_within_gamma():
    X = bits(5000, 6, 0)
    S = release_marginals(X, 6, 2, math.inf, 0.2)
    Y = enumerate_queries(6, 2)
    assert np.max(np.abs(answer_marginals(S, Y) - disjunction_answers(X, Y))) <= S.meta["gamma"] + 1e-12


def test_noisy_marginals_accuracy_small():
    X = bits(10 ** 5, 6, 1)
    Y = enumerate_queries(6, 2)
    errs = [np.max(np.abs(answer_marginals(release_marginals(X, 6, 2, 2.0, 0.2, rng=s), Y)
                          - disjunction_answers(X, Y))) for s in range(5)]
    assert np.median(errs) <= 0.3


def test_marginal_answer_checks():
    S = release_marginals(bits(100, 4, 0), 4, 2, 1.0, 0.2, rng=0)
    with pytest.raises(InputDomainError):
        answer_marginal(S, [1, 1, 1, 0])
    with pytest.raises(InputDomainError):
        answer_marginal(S, [1, 0, 0])
    with pytest.raises(InputDomainError):
        release_marginals(bits(10, 4, 0) * 2, 4, 2, 1.0, 0.2)
    with pytest.raises(InputDomainError):
        release_marginals(bits(10, 4, 0), 4, 5, 1.0, 0.2)


def test_summary_json_round_trip_and_checks():
    S = release_marginals(bits(300, 4, 0), 4, 2, 1.0, 0.2, rng=3)
    back = CoefficientSummary.from_json(S.to_json())
    np.testing.assert_array_equal(back.coeffs, S.coeffs)
    assert back.meta == S.meta
    with pytest.raises(InputDomainError):
        CoefficientSummary("chebyshev-marginal", S.coeffs[:-1], S.privacy, S.meta)
    with pytest.raises(InputDomainError):
        CoefficientSummary.from_json(S.to_json().replace('"schema_version": 1', '"schema_version": 99'))


def test_release_deterministic():
    X = bits(500, 4, 0)
    a = release_marginals(X, 4, 2, 1.0, 0.2, rng=5)
    b = release_marginals(X, 4, 2, 1.0, 0.2, rng=5)
    assert a.to_json() == b.to_json()


# --- Smooth queries -------------------------------------------------------

def test_trig_basis_values_chebyshev_identity():
    x = np.linspace(-1, 1, 11)[:, None]
    V = trig_basis_values(x, 4)
    np.testing.assert_allclose(V[:, 2], 2 * x[:, 0] ** 2 - 1, atol=1e-12)
    np.testing.assert_allclose(V[:, 3], 4 * x[:, 0] ** 3 - 3 * x[:, 0], atol=1e-12)


def test_noiseless_smooth_answers():
    x = 2 * np.random.default_rng(0).beta(2, 5, (20000, 1)) - 1
    S = release_smooth(x, 8, math.inf)
    for sigma in (0.5, 0.75, 1.0):
        q = gaussian_kernel_query(0.0, sigma)
        assert abs(answer_smooth(S, q) - q.exact_answer(x)) <= trig_approx_error(q, 8) + 1e-12


def test_smooth_2d_noiseless():
    x = np.random.default_rng(1).uniform(-1, 1, (3000, 2))
    S = release_smooth(x, 10, math.inf)
    q = gaussian_kernel_query([0.2, -0.1], 0.8, p=2)
    assert abs(answer_smooth(S, q) - q.exact_answer(x)) <= trig_approx_error(q, 10) + 1e-12


def test_smooth_noisy():
    x = 2 * np.random.default_rng(2).beta(2, 5, (10 ** 5, 1)) - 1
    q = gaussian_kernel_query(0.0, 0.5)
    errs = [abs(answer_smooth(release_smooth(x, 8, 2.0, rng=s), q) - q.exact_answer(x)) for s in range(5)]
    assert np.median(errs) <= 0.05


def test_smooth_checks():
    x = np.zeros((10, 1))
    S = release_smooth(x, 4, 1.0, rng=0)
    with pytest.raises(InputDomainError):
        answer_smooth(S, gaussian_kernel_query(0.0, 0.5, p=2))
    with pytest.raises(InputDomainError):
        answer_smooth(S, gaussian_kernel_query(), t=5)
    with pytest.raises(InputDomainError):
        release_smooth(x + 2, 4, 1.0)
    with pytest.raises(ResourceError):
        release_smooth(np.zeros((2, 7)), 10, 1.0)
    with pytest.raises(InputDomainError):
        gaussian_kernel_query(0.0, 0.0)
    m = release_marginals(bits(10, 3, 0), 3, 1, 1.0, 0.2, rng=0)
    with pytest.raises(InputDomainError):
        answer_smooth(m, gaussian_kernel_query())


def test_plain_callable_query():
    x = np.random.default_rng(3).uniform(-1, 1, (1000, 1))
    S = release_smooth(x, 6, math.inf)
    assert answer_smooth(S, lambda z: z[:, 0] ** 2) == pytest.approx(np.mean(x ** 2), abs=1e-10)
    assert SmoothQuery(lambda z: z[:, 0]).exact_answer(x) == pytest.approx(x.mean())


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=5, max_size=5), st.integers(1, 3))
def test_noiseless_marginal_contract_property(x, k):
    X = np.array([x])
    S = release_marginals(X, 5, k, math.inf, 0.2)
    Y = enumerate_queries(5, k)
    assert np.max(np.abs(answer_marginals(S, Y) - disjunction_answers(X, Y))) <= S.meta["gamma"] + 1e-9
