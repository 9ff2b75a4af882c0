import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (
    lasso_enumerate,
    lasso_objective,
    lasso_subgradient,
    logistic_objective,
    logistic_orthants,
    random_tiny_instance,
)
from replica_ising.estimators import (
    NeighborhoodEstimate,
    SelectionMetrics,
    SeparabilityWarning,
    aggregate,
    extract_neighborhood,
    linr_fit,
    logr_fit,
    score,
)
from replica_ising.ising_sim import gen_rr_graph, metropolis_sample


@pytest.mark.parametrize("seed", range(10))
def test_linr_matches_enumeration(seed):
    s, X, y, lam = random_tiny_instance(np.random.default_rng(seed))
    est = linr_fit(s, 0, lam)
    obj, J = lasso_enumerate(X, y, lam)
    assert est.objective - obj < 1e-10
    assert np.array_equal(est.coeffs != 0, J != 0)
    assert est.kkt_residual <= 1e-8
    assert est.objective == pytest.approx(lasso_objective(X, y, est.coeffs, lam), abs=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_logr_matches_orthant_oracle(seed):
    s, X, y, lam = random_tiny_instance(np.random.default_rng(100 + seed))
    est = logr_fit(s, 0, lam)
    obj, J = logistic_orthants(X, y, lam)
    assert est.objective - obj < 1e-8
    assert np.array_equal(est.coeffs != 0, np.abs(J) > 1e-9)
    assert est.kkt_residual <= 1e-8


def test_linr_subgradient_oracle_n6_m12():
    rng = np.random.default_rng(7)
    s = rng.choice([-1, 1], size=(12, 6))
    X, y = np.delete(s, 0, axis=1).astype(float), s[:, 0].astype(float)
    est = linr_fit(s, 0, 0.1)
    assert abs(est.objective - lasso_subgradient(X, y, 0.1)) < 1e-6


def test_linr_zero_above_lambda_max():
    rng = np.random.default_rng(1)
    s = rng.choice([-1, 1], size=(30, 5))
    lam_max = np.abs(np.delete(s, 2, axis=1).T @ s[:, 2]).max() / 30
    est = linr_fit(s, 2, lam_max)
    assert np.all(est.coeffs == 0) and extract_neighborhood(est) == frozenset()


def test_linr_lambda_zero_is_ols():
    rng = np.random.default_rng(2)
    s = rng.choice([-1, 1], size=(80, 5))
    X, y = np.delete(s, 0, axis=1).astype(float), s[:, 0].astype(float)
    est = linr_fit(s, 0, 0.0)
    assert np.allclose(est.coeffs, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-10)
    assert est.kkt_residual <= 1e-8


def test_logr_huge_lambda_zero_and_rejects_zero():
    s = np.random.default_rng(3).choice([-1, 1], size=(40, 6))
    assert np.all(logr_fit(s, 0, 10.0).coeffs == 0)
    with pytest.raises(ValueError):
        logr_fit(s, 0, 0.0)


def test_logr_minimal_vs_linr_point():
    m = gen_rr_graph(30, 3, 0.4, rng=0)
    ds = metropolis_sample(m, 300, rng=1)
    a, b = logr_fit(ds, 4, 0.1), linr_fit(ds, 4, 0.1)
    X, y = np.delete(ds.spins, 4, axis=1).astype(float), ds.spins[:, 4].astype(float)
    assert a.objective <= logistic_objective(X, y, b.coeffs, 0.1) + 1e-12


def test_separability_warning():
    rng = np.random.default_rng(4)
    s = rng.choice([-1, 1], size=(20, 4))
    s[:, 1] = s[:, 0]  # perfectly predictive column
    with pytest.warns(SeparabilityWarning):
        logr_fit(s, 0, 0.01, guard=0.5)


def test_extract_idempotent_and_empty():
    est = NeighborhoodEstimate(0, np.array([0.0, 0.2, 0.0, -0.1]), np.array([1, 2, 3, 4]), 0.0, 0.0, "quadratic", 0.1)
    assert extract_neighborhood(est) == {2, 4}
    assert extract_neighborhood(est) == extract_neighborhood(est)
    est.coeffs[:] = 0
    assert extract_neighborhood(est) == frozenset()


def _truth_and_estimate(values):
    m = gen_rr_graph(10, 3, 0.4, "uniform", rng=5)
    c = 0
    idx = np.arange(1, 10)
    coeffs = np.zeros(9)
    for j in m.neighbors(c):
        coeffs[j - 1] = values
    return m, NeighborhoodEstimate(c, coeffs, idx, 0.0, 0.0, "quadratic", 0.3)


def test_score_perfect_recovery_and_rss():
    jbar = math.tanh(0.4) - 0.3
    jbar /= 1 + 2 * math.tanh(0.4) ** 2
    m, est = _truth_and_estimate(jbar)
    r = score(est, m, 0)
    assert r.precision == 1 and r.recall == 1 and r.fp == 0
    assert r.rss == pytest.approx(3 * (jbar - 0.4) ** 2, abs=1e-15)


def test_score_empty_estimate():
    m, est = _truth_and_estimate(0.0)
    r = score(est, m, 0)
    assert r.recall == 0 and r.fn == 3 and math.isnan(r.precision)
    assert r.to_dict()["precision"] is None


def test_aggregate_excludes_undefined():
    rows = [SelectionMetrics(1.0, 1.0, 0.1, 3, 0, 0), SelectionMetrics(float("nan"), 0.0, 0.48, 0, 0, 3),
            SelectionMetrics(0.5, 1.0, 0.3, 3, 3, 0)]
    a = aggregate(rows)
    assert a.precision == pytest.approx(0.75) and a.n_excluded == 1 and a.n_trials == 3
    assert a.recall == pytest.approx(2 / 3)
    assert a.precision_se == pytest.approx(np.std([1.0, 0.5], ddof=1) / math.sqrt(2))


spins = st.integers(0, 2**32 - 1).map(lambda k: np.random.default_rng(k).choice([-1, 1], size=(25, 6)))


@settings(max_examples=25, deadline=None)
@given(s=spins, lam=st.floats(0.01, 0.5), loss=st.sampled_from(["linr", "logr"]))
def test_convexity_against_random_points(s, lam, loss):
    X, y = np.delete(s, 0, axis=1).astype(float), s[:, 0].astype(float)
    fit, obj = (linr_fit, lasso_objective) if loss == "linr" else (logr_fit, logistic_objective)
    est = fit(s, 0, lam)
    rng = np.random.default_rng(0)
    for J in rng.normal(scale=0.5, size=(100, 5)):
        assert est.objective <= obj(X, y, J, lam) + 1e-12
    assert est.kkt_residual <= 1e-8


@settings(max_examples=25, deadline=None)
@given(s=spins, lam=st.floats(0.01, 0.5), perm_seed=st.integers(0, 1000))
def test_permutation_equivariance(s, lam, perm_seed):
    perm = np.random.default_rng(perm_seed).permutation(5) + 1
    s2 = s[:, np.concatenate([[0], perm])]
    for fit in (linr_fit, logr_fit):
        a, b = fit(s, 0, lam), fit(s2, 0, lam)
        assert np.allclose(a.coeffs[perm - 1], b.coeffs, atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(s=spins, lam=st.floats(0.01, 0.5), col=st.integers(1, 5))
def test_column_negation(s, lam, col):
    s2 = s.copy()
    s2[:, col] *= -1
    a, b = linr_fit(s, 0, lam), linr_fit(s2, 0, lam)
    assert np.allclose(a.coeffs * np.where(np.arange(1, 6) == col, -1, 1), b.coeffs, atol=1e-12)
    assert extract_neighborhood(a) == extract_neighborhood(b)
