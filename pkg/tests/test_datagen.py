from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sipkit.datagen import (
    SimStudyConfig,
    binary_correlation_bounds,
    builtin_configs,
    bvn_cdf,
    gen_correlated_binary,
    gen_mvn,
    gen_treatment,
    gen_truncated_mvn,
    generate_covariates,
    simulate_dataset,
    solve_latent_correlation,
)
from sipkit.errors import GenerationError, InfeasibleCorrelationError, InvalidArgumentError

STUDY1 = builtin_configs()["study1"]


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.999, 0.999))
def test_bvn_orthant_identity(rho):
    assert bvn_cdf(0.0, 0.0, rho) == pytest.approx(0.25 + math.asin(rho) / (2 * math.pi), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4))
def test_bvn_independence(a, b):
    assert bvn_cdf(a, b, 0.0) == pytest.approx(stats.norm.cdf(a) * stats.norm.cdf(b), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.95, 0.95))
def test_bvn_agrees_with_scipy_multivariate_normal(a, b, rho):
    ref = stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]]).cdf([a, b])
    assert bvn_cdf(a, b, rho) == pytest.approx(ref, abs=1e-5)


def test_bvn_monte_carlo():
    rng = np.random.default_rng(0)
    n = 10_000_000
    u = rng.standard_normal(n)
    v = 0.6 * u + math.sqrt(1 - 0.36) * rng.standard_normal(n)
    hits = np.mean((u <= 0.5) & (v <= -0.3))
    se = math.sqrt(hits * (1 - hits) / n)
    assert abs(bvn_cdf(0.5, -0.3, 0.6) - hits) <= 3 * se


@pytest.mark.parametrize("rho", [1.0, -1.0, 1.2])
def test_bvn_rejects_degenerate_rho(rho):
    with pytest.raises(InvalidArgumentError):
        bvn_cdf(0.0, 0.0, rho)


def test_latent_zero_maps_to_zero():
    assert solve_latent_correlation(0.2, 0.6, 0.0) == 0.0


def test_latent_symmetric_half():
    assert solve_latent_correlation(0.5, 0.5, 0.5) == pytest.approx(math.sin(math.pi / 4), abs=2e-6)


def test_infeasible_correlation_reports_bounds():
    lo, hi = binary_correlation_bounds(0.1, 0.6)
    with pytest.raises(InfeasibleCorrelationError) as info:
        solve_latent_correlation(0.1, 0.6, 0.5)
    assert info.value.bounds == pytest.approx((lo, hi))
    assert hi < 0.5


def test_latent_pair_reproduces_target():
    r = solve_latent_correlation(0.2, 0.6, -0.4)
    X = gen_correlated_binary([0.2, 0.6], [[1, -0.4], [-0.4, 1]], 1_000_000, np.random.default_rng(1))
    assert np.corrcoef(X.T)[0, 1] == pytest.approx(-0.4, abs=0.01)
    assert -1 < r < -0.4


def test_binary_identity_corr_marginal():
    X = gen_correlated_binary(STUDY1.binary_marginals, np.eye(4), 1_000_000, np.random.default_rng(2))
    assert X[:, 2].mean() == pytest.approx(0.1, abs=0.003)
    assert np.abs(np.corrcoef(X.T) - np.eye(4)).max() < 0.01


def test_single_binary_column_is_bernoulli():
    X = gen_correlated_binary([0.3], [[1.0]], 200_000, np.random.default_rng(3))
    assert set(np.unique(X)) == {0.0, 1.0}
    assert X.mean() == pytest.approx(0.3, abs=0.005)


def test_non_psd_latent_matrix_rejected():
    corr = np.array([[1, 0.6, -0.6], [0.6, 1, 0.6], [-0.6, 0.6, 1]])
    with pytest.raises(GenerationError):
        gen_correlated_binary([0.5, 0.5, 0.5], corr, 10, np.random.default_rng(0))


def test_mvn_identity_variances():
    X = gen_mvn(np.eye(3), 1_000_000, np.random.default_rng(4))
    np.testing.assert_allclose(X.var(axis=0), 1.0, atol=0.01)


def test_mvn_rejects_non_pd():
    with pytest.raises(GenerationError):
        gen_mvn([[1, 2], [2, 1]], 5, np.random.default_rng(0))


def test_truncated_1d_variance():
    X = gen_truncated_mvn([[1.0]], -2.0, 2.0, 400_000, np.random.default_rng(5))
    phi, Phi = stats.norm.pdf(2.0), stats.norm.cdf(2.0)
    expected = 1 - 2 * 2 * phi / (2 * Phi - 1)
    assert expected == pytest.approx(0.774, abs=1e-3)
    assert np.all((X > -2) & (X < 2))
    assert X.var() == pytest.approx(expected, abs=0.005)


def test_truncation_bounds_checked():
    with pytest.raises(InvalidArgumentError):
        gen_truncated_mvn(np.eye(2), 1.0, 1.0, 5, np.random.default_rng(0))


def test_pathological_truncation_rejected():
    with pytest.raises(GenerationError):
        gen_truncated_mvn(np.eye(8), 3.0, 3.5, 10, np.random.default_rng(0))


def test_treatment_balanced_and_saturated():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(100_000, 2))
    assert gen_treatment(X, 0.0, [0, 0], rng).mean() == pytest.approx(0.5, abs=0.005)
    assert gen_treatment(X[:100], 50.0, [0, 0], rng).all()
    with pytest.raises(InvalidArgumentError):
        gen_treatment(X, 0.0, [1.0], rng)


def test_study1_treated_fraction_matches_monte_carlo():
    big = STUDY1.intercept + generate_covariates(STUDY1, 2_000_000, np.random.default_rng(7)) @ np.array(STUDY1.beta)
    p = float(np.mean(1 / (1 + np.exp(-big))))
    z = gen_treatment(generate_covariates(STUDY1, 100_000, np.random.default_rng(8)),
                      STUDY1.intercept, STUDY1.beta, np.random.default_rng(9))
    se = math.sqrt(p * (1 - p) / 100_000)
    assert abs(z.mean() - p) <= 3 * se + 1e-3


def test_builtin_parameters():
    c = builtin_configs()
    s1, s2 = c["study1"], c["study2"]
    assert s1.beta[4] == 4.4 and s1.intercept == 1.7 and s1.n_covariates == 10
    assert s1.binary_corr[0][1] == -0.40
    assert (s1.n, s1.reps, s1.resamples, s1.truth_n) == (500, 1000, 100, 100_000)
    assert s1.unobserved is None and s1.truncation is None
    assert s2.unobserved == 10 and s2.beta[10] == 1.6 and s2.n_covariates == 11
    assert s2.truncation == (-2.0, 2.0) and s2.intercept == 0.0
    assert len(s2.observed) == 10 and 10 not in s2.observed


def test_simulate_drops_unobserved_column():
    s2 = builtin_configs()["study2"]
    d = simulate_dataset(s2, 300, np.random.default_rng(0))
    assert d.K == 10 and d.n == 300 and "X11" not in d.names
    g = generate_covariates(s2, 300, np.random.default_rng(1))
    assert np.all(np.abs(g[:, 4:]) <= 2.0)


def test_seed_determinism():
    a = simulate_dataset(STUDY1, 50, np.random.default_rng(3))
    b = simulate_dataset(STUDY1, 50, np.random.default_rng(3))
    np.testing.assert_array_equal(a.covariates, b.covariates)
    np.testing.assert_array_equal(a.treatment, b.treatment)


def test_config_round_trip_and_validation():
    c = builtin_configs()["study2"]
    assert SimStudyConfig.from_dict(c.to_dict()) == c
    with pytest.raises(InvalidArgumentError):
        SimStudyConfig.from_dict({**c.to_dict(), "bogus": 1})
    with pytest.raises(InvalidArgumentError):
        c.replace(beta=(1.0, 2.0))
    with pytest.raises(InvalidArgumentError):
        c.replace(unobserved=11)


def test_builtin_designs_are_feasible():
    for c in builtin_configs().values():
        generate_covariates(c, 10, np.random.default_rng(0))
