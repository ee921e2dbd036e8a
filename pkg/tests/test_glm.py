from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logit

from conftest import make_dataset
from oracles import newton_logit
from sipkit.errors import InvalidArgumentError, SingularDesignError
from sipkit.glm import (
    Dataset,
    canonical_set,
    fit_logistic,
    fit_many,
    linear_predictor,
    log_likelihood,
    score,
)


def test_canonical_set_sorts_and_dedups():
    assert canonical_set([2, 0, 2], 3) == (0, 2)
    with pytest.raises(InvalidArgumentError):
        canonical_set([3], 3)


@pytest.mark.parametrize(
    "z, X, message",
    [
        ([0, 2, 1], np.ones((3, 1)), "only 0 and 1"),
        ([1, 1, 1], np.ones((3, 1)), "at least one 0 and one 1"),
        ([0, 1, 1], [[1.0], [np.nan], [2.0]], "non-finite"),
    ],
)
def test_dataset_validation(z, X, message):
    with pytest.raises(InvalidArgumentError, match=message):
        Dataset(np.array(z), np.array(X))


def test_dataset_default_names_and_ids():
    d = Dataset(np.array([0, 1, 1]), np.arange(6.0).reshape(3, 2), ids=("a", "b", "c"))
    assert d.names == ("X1", "X2")
    assert d.row_of("b") == 1
    with pytest.raises(InvalidArgumentError):
        d.row_of("zz")
    assert d.select([1]).ids == d.ids


def test_intercept_only_is_logit_of_treated_fraction(small_data):
    fit = fit_logistic(small_data)
    assert fit.alpha == pytest.approx(logit(small_data.treatment.mean()), abs=1e-7)


def test_single_binary_covariate_closed_form():
    rng = np.random.default_rng(5)
    x = rng.integers(0, 2, 400)
    z = (rng.random(400) < np.where(x == 1, 0.7, 0.35)).astype(int)
    fit = fit_logistic(Dataset(z, x[:, None].astype(float)), [0])
    p0, p1 = z[x == 0].mean(), z[x == 1].mean()
    assert fit.alpha == pytest.approx(logit(p0), abs=1e-6)
    assert fit.beta[0] == pytest.approx(logit(p1) - logit(p0), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_score_matches_finite_differences(seed, K):
    data = make_dataset(n=60, K=K, seed=seed)
    rng = np.random.default_rng(seed)
    theta = rng.normal(scale=0.5, size=K + 1)
    w = rng.exponential(size=data.n)
    members = tuple(range(K))
    g = score(data, members, theta[0], theta[1:], w)
    h = 1e-6
    fd = np.empty(K + 1)
    for i in range(K + 1):
        e = np.zeros(K + 1)
        e[i] = h
        up = log_likelihood(data, members, *_split(theta + e), w)
        dn = log_likelihood(data, members, *_split(theta - e), w)
        fd[i] = (up - dn) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)


def _split(theta):
    return theta[0], theta[1:]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_log_likelihood_is_concave_along_segments(seed):
    data = make_dataset(n=50, K=2, seed=seed)
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=3), rng.normal(size=3)
    t = rng.random()
    mid = t * a + (1 - t) * b
    lhs = log_likelihood(data, (0, 1), *_split(mid))
    rhs = t * log_likelihood(data, (0, 1), *_split(a)) + (1 - t) * log_likelihood(data, (0, 1), *_split(b))
    assert lhs >= rhs - 1e-12


def test_fit_matches_independent_newton_and_has_zero_score():
    data = make_dataset(n=200, K=3, seed=3)
    w = np.random.default_rng(0).exponential(size=data.n)
    fit = fit_logistic(data, (0, 2), w)
    a, b = newton_logit(data.covariates[:, [0, 2]], data.treatment, w)
    assert fit.converged and not fit.separation_flag
    assert fit.alpha == pytest.approx(a, abs=1e-7)
    np.testing.assert_allclose(fit.beta, b, atol=1e-7)
    assert np.max(np.abs(score(data, (0, 2), fit.alpha, fit.beta, w))) <= 1e-7


def test_integer_weights_equal_row_replication():
    data = make_dataset(n=40, K=2, seed=9)
    w = np.random.default_rng(1).integers(1, 4, data.n).astype(float)
    rep = np.repeat(np.arange(data.n), w.astype(int))
    weighted = fit_logistic(data, (0, 1), w)
    expanded = fit_logistic(Dataset(data.treatment[rep], data.covariates[rep]), (0, 1))
    np.testing.assert_allclose(weighted.beta, expanded.beta, atol=1e-7)


def test_fit_many_agrees_with_single_fits():
    data = make_dataset(n=150, K=4, seed=11)
    sets = [(0, 1, 2, 3), (1, 2), (3,), ()]
    many = fit_many(data, sets)
    for s, f in zip(sets, many):
        single = fit_logistic(data, s)
        assert f.index_set == s
        assert f.alpha == pytest.approx(single.alpha, abs=1e-7)
        np.testing.assert_allclose(f.beta, single.beta, atol=1e-7)


def test_rank_deficiency_names_the_column():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    X = np.column_stack([X, 2 * X[:, 0] + X[:, 1]])
    data = Dataset((rng.random(50) < 0.5).astype(int), X)
    with pytest.raises(SingularDesignError) as info:
        fit_many(data, [(0, 1, 2)])
    assert info.value.columns == ["X3"]


def test_perfect_separation_is_flagged_not_raised():
    d = Dataset(np.array([0, 0, 1, 1]), np.array([[0.0], [1.0], [2.0], [3.0]]))
    fit = fit_logistic(d, [0])
    assert fit.separation_flag and not fit.converged and not fit.usable
    with pytest.raises(InvalidArgumentError):
        linear_predictor(fit, [1.0])
    assert np.isfinite(linear_predictor(fit, [1.0], allow_flagged=True))


def test_linear_predictor_shapes(small_data):
    fit = fit_logistic(small_data, (0, 2))
    x = small_data.covariates
    rows = linear_predictor(fit, x)
    assert rows.shape == (small_data.n,)
    assert linear_predictor(fit, x[4]) == pytest.approx(rows[4])
    with pytest.raises(InvalidArgumentError):
        linear_predictor(fit, x[:, :2])


def test_weights_are_validated(small_data):
    with pytest.raises(InvalidArgumentError):
        fit_logistic(small_data, (), -np.ones(small_data.n))
    with pytest.raises(InvalidArgumentError):
        fit_logistic(small_data, (), np.ones(3))


def test_rescaled_covariate_gives_rescaled_coefficient():
    data = make_dataset(n=80, K=2, seed=2)
    s = np.array([1e-7, 1e7])
    base = fit_logistic(data, (0, 1))
    scaled = fit_logistic(Dataset(data.treatment, data.covariates * s), (0, 1))
    assert scaled.usable
    np.testing.assert_allclose(scaled.beta * s, base.beta, rtol=1e-6)
