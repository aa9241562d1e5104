import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldp_erm.constraints import ConstraintSet
from ldp_erm.erm import (auto_k, build_grid, excess_empirical_risk, excess_population_risk, minimize_over,
                         oracle_minimize, private_erm, private_erm_regularized, resolve_config)
from ldp_erm.errors import InputDomainError, ResourceError
from ldp_erm.losses import get_loss, synthetic_dataset
from ldp_erm.protocol import ProtocolConfig

from oracles import dense_grid_argmin


def test_build_grid_order_and_cap():
    g = build_grid(2, 2)
    np.testing.assert_allclose(g[:4], [[0, 0], [0, 0.5], [0, 1], [0.5, 0]])
    with pytest.raises(ResourceError):
        build_grid(99, 4, cap=10 ** 6)
    with pytest.raises(InputDomainError):
        build_grid(0, 1)


def test_auto_k_grows_with_n():
    ks = [auto_k(n, 1, 1, 2.0) for n in (2 ** 12, 2 ** 16, 2 ** 20)]
    assert ks == sorted(ks) and ks[-1] > ks[0]
    assert auto_k(10, 3, 2, 0.1) == 1
    with pytest.raises(InputDomainError):
        auto_k(100, 1, 1, math.inf)


def test_resolve_config():
    cfg = resolve_config("full-grid", 2.0, 2 ** 16, "auto", h=1, seed=3)
    assert cfg.k == auto_k(2 ** 16, 1, 1, 2.0) and cfg.seed == 3


@pytest.mark.parametrize("name", ["squared", "logistic", "sigmoid-bump"])
def test_oracle_matches_dense_grid_1d(name):
    loss = get_loss(name, 1)
    data = synthetic_dataset(loss, 1000, 0)
    C = ConstraintSet.box(1)
    ref, ref_val = dense_grid_argmin(lambda t: loss.empirical_risk(t[:, None], data), 0.0, 1.0, 1e-5)
    res = oracle_minimize(loss, data, C)
    assert res.value <= ref_val + 1e-9
    assert abs(res.theta[0] - ref) <= 1e-3


def test_oracle_squared_is_projected_mean():
    loss = get_loss("squared", 2)
    data = synthetic_dataset(loss, 500, 1)
    C = ConstraintSet.l2_ball(2, 0.1, [0.5, 0.5])
    res = oracle_minimize(loss, data, C)
    np.testing.assert_allclose(res.theta, C.project(data.mean(0)), atol=1e-4)


def test_minimize_over_quadratic_3d():
    target = np.array([0.2, 0.9, 1.4])
    f = lambda X: np.sum((X - target) ** 2, axis=1)
    g = lambda X: 2 * (X - target)
    res = minimize_over(f, g, ConstraintSet.box(3), seed=0)
    np.testing.assert_allclose(res.theta, [0.2, 0.9, 1.0], atol=1e-6)
    assert res.converged


def test_noiseless_erm_matches_oracle():
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 2000, 0)
    res = private_erm(data, loss, ConstraintSet.box(1), ProtocolConfig("full-grid", math.inf, 16, h=2))
    assert res.err_empirical <= 2 * res.sup_grid_error + 1e-6
    assert res.err_empirical < 1e-3


def test_sandwich_under_noise():
    loss = get_loss("logistic", 1)
    C = ConstraintSet.box(1)
    for seed in range(5):
        data = synthetic_dataset(loss, 4000, seed)
        res = private_erm(data, loss, C, resolve_config("full-grid", 2.0, 4000, "auto", h=1, seed=seed))
        assert 0 <= res.err_empirical <= 2 * res.sup_grid_error + 1e-6


def test_nonconvex_recovers_global_minimizer():
    loss = get_loss("sigmoid-bump", 1)
    data = synthetic_dataset(loss, 2000, 0)
    ref, _ = dense_grid_argmin(lambda t: loss.empirical_risk(t[:, None], data), 0.0, 1.0, 1e-5)
    res = private_erm(data, loss, ConstraintSet.box(1), ProtocolConfig("full-grid", math.inf, 64, h=3))
    assert abs(res.theta_priv[0] - ref) <= 0.01


def test_erm_deterministic_and_serializable():
    loss = get_loss("squared", 2)
    data = synthetic_dataset(loss, 1000, 0)
    cfg = ProtocolConfig("full-grid", 1.0, 4, p=2, seed=9)
    a = private_erm(data, loss, ConstraintSet.box(2), cfg)
    b = private_erm(data, loss, ConstraintSet.box(2), cfg)
    assert a.to_json() == b.to_json()
    doc = json.loads(a.to_json())
    assert doc["comm"]["total_bits"] == 1000 * 25 * 64


def test_one_bit_erm_runs():
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 20000, 0)
    res = private_erm(data, loss, ConstraintSet.box(1), ProtocolConfig("partitioned-one-bit", 0.5, 2, seed=1))
    assert res.comm["total_bits"] == 20000
    assert ConstraintSet.box(1).contains(res.theta_priv)


def test_erm_input_checks():
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 100, 0)
    with pytest.raises(InputDomainError):
        private_erm(data, loss, ConstraintSet.box(2), ProtocolConfig("full-grid", 1.0, 2))
    with pytest.raises(InputDomainError):
        private_erm(data, loss, ConstraintSet.l1_ball(1, 1.0), ProtocolConfig("full-grid", 1.0, 2))
    with pytest.raises(InputDomainError):
        excess_empirical_risk([1.5], data, loss, ConstraintSet.box(1))
    with pytest.raises(InputDomainError):
        private_erm_regularized(data, get_loss("sigmoid-bump", 1), ConstraintSet.box(1),
                                ProtocolConfig("full-grid", 1.0, 2))


def test_regularized_auto_mu():
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 4096, 0)
    res = private_erm_regularized(data, loss, ConstraintSet.box(1), ProtocolConfig("full-grid", math.inf, 8))
    assert res.mu == pytest.approx(4096 ** (-1 / 12))
    # ridge pulls the minimizer toward the origin
    assert res.theta_priv[0] < res.oracle_theta[0]


def test_population_risk_estimate():
    loss = get_loss("squared", 1)
    sampler = lambda n, rng: rng.beta(2.0, 5.0, size=(n, 1))
    C = ConstraintSet.box(1)
    at_mean, se = excess_population_risk([2 / 7], sampler, loss, C, eval_n=20000)
    far, _ = excess_population_risk([0.9], sampler, loss, C, eval_n=20000)
    assert abs(at_mean) <= 4 * se + 1e-6
    assert far == pytest.approx((0.9 - 2 / 7) ** 2, abs=0.01)
    with pytest.raises(InputDomainError):
        excess_population_risk([0.5], sampler, loss, C, eval_n=10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([0.5, 1.0, 4.0]))
def test_excess_risk_nonnegative_property(seed, eps):
    loss = get_loss("squared", 1)
    data = synthetic_dataset(loss, 500, seed)
    res = private_erm(data, loss, ConstraintSet.box(1), ProtocolConfig("full-grid", eps, 3, seed=seed))
    assert res.err_empirical >= -1e-9
    assert res.err_empirical <= 2 * res.sup_grid_error + 1e-6
