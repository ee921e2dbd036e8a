from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from oracles import brute_force_row_sips
from sipkit.errors import FitFailureError, InvalidArgumentError, InvariantError
from sipkit.glm import Dataset, fit_logistic
from sipkit.sip import (
    InfluenceTable,
    enumerate_fit_family,
    family_size,
    fit_family,
    influence_scores,
    row_sips,
    sip_at_point,
    sip_averaged,
    sip_from_scores,
    sip_point,
)


def test_family_enumeration_k3():
    fam = enumerate_fit_family(3)
    assert fam[0] == (0, 1, 2)
    assert set(fam) == {(0, 1, 2), (1, 2), (0, 2), (0, 1), (2,), (1,), (0,)}
    assert len(fam) == len(set(fam)) == family_size(3) == 7


@pytest.mark.parametrize("K", [2, 3, 5, 10, 22])
def test_family_size_formula(K):
    assert family_size(K) == len(enumerate_fit_family(K)) == 1 + K + K * (K - 1) // 2


def test_family_needs_two_covariates():
    with pytest.raises(InvalidArgumentError):
        enumerate_fit_family(1)


def test_fit_count_economy():
    data = make_dataset(n=150, K=5, seed=1)
    fam = fit_family(data)
    assert fam.fit_count == family_size(5) == 16
    assert set(fam.fits) == set(enumerate_fit_family(5))


def test_influence_scores_match_direct_differences():
    data = make_dataset(n=100, K=3, seed=4)
    fam = fit_family(data)
    x = data.covariates[7]

    def e(s):
        f = fit_logistic(data, s)
        return f.alpha + x[list(s)] @ f.beta

    table = influence_scores(data, fam, x)
    assert table.full_scores[0] == pytest.approx(e((0, 1, 2)) - e((1, 2)), abs=1e-7)
    # benchmark for covariate 1 removed from C_0 = {1, 2}
    assert table.benchmark_scores[0, 1] == pytest.approx(e((1, 2)) - e((2,)), abs=1e-7)
    assert np.isnan(np.diag(table.benchmark_scores)).all()


def test_sip_at_point_two_covariates():
    # SIP_1 = I(|d_1| > |d_{2,C_1}|); ties lose
    table = InfluenceTable(np.array([0.5, -0.2]), np.array([[np.nan, 0.3], [0.5, np.nan]]), "x")
    res = sip_at_point(table)
    np.testing.assert_array_equal(res.per_covariate, [1.0, 0.0])
    assert res.overall == 0.5


def test_equal_magnitudes_do_not_count():
    full = np.array([1.0, 1.0, 1.0])
    bench = np.array([[np.nan, -1.0, 1.0], [1.0, np.nan, 0.5], [2.0, 1.0, np.nan]])
    np.testing.assert_array_equal(sip_from_scores(full, bench), [0.0, 0.5, 0.0])


def test_overall_is_mean_of_per_covariate(small_data):
    res = sip_averaged(small_data)
    assert res.overall == np.mean(res.per_covariate)
    pt = sip_point(small_data, small_data.covariates[0])
    assert pt.overall == np.mean(pt.per_covariate)
    assert set(res.as_dict()) == {"X1", "X2", "X3", "overall"}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 5000), st.integers(2, 5))
def test_point_sips_lie_on_grid(seed, K):
    data = make_dataset(n=90, K=K, seed=seed)
    rows = row_sips(data, fit_family(data, permissive=True))
    grid = rows * (K - 1)
    np.testing.assert_allclose(grid, np.round(grid), atol=1e-12)
    assert rows.min() >= 0 and rows.max() <= 1


def test_matches_brute_force_oracle():
    data = make_dataset(n=40, K=3, seed=21)
    rows = row_sips(data, fit_family(data))
    np.testing.assert_array_equal(rows, brute_force_row_sips(data.covariates, data.treatment))


def test_affine_rescaling_invariance():
    data = make_dataset(n=120, K=4, seed=8)
    a = np.array([3.0, 0.01, -2.0, 150.0])
    b = np.array([5.0, -1.0, 0.0, 1e3])
    moved = Dataset(data.treatment, data.covariates * a + b)
    np.testing.assert_allclose(
        sip_averaged(moved).per_covariate, sip_averaged(data).per_covariate, atol=1e-6
    )


def test_permutation_equivariance():
    data = make_dataset(n=120, K=4, seed=8)
    perm = np.array([2, 0, 3, 1])
    shuffled = Dataset(data.treatment, data.covariates[:, perm])
    np.testing.assert_array_equal(
        sip_averaged(shuffled).per_covariate, sip_averaged(data).per_covariate[perm]
    )


def test_missing_cache_entry_is_an_invariant_violation(small_data):
    fam = fit_family(small_data)
    del fam.fits[(0,)]
    with pytest.raises(InvariantError):
        row_sips(small_data, fam)


def test_separated_fit_names_the_covariates():
    rng = np.random.default_rng(0)
    x1 = rng.normal(size=30)
    z = (x1 > 0).astype(int)
    data = Dataset(z, np.column_stack([x1, rng.normal(size=30)]), ("sep", "noise"))
    with pytest.raises(FitFailureError, match="sep"):
        fit_family(data)
    fam = fit_family(data, permissive=True)
    assert fam.flagged
    res = sip_averaged(data, permissive=True)
    assert res.flagged == fam.flagged


def test_point_dimension_checked(small_data):
    with pytest.raises(InvalidArgumentError):
        sip_point(small_data, [1.0, 2.0])
