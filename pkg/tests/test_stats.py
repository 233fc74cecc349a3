from __future__ import annotations

import itertools
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypodisco.stats import (
    EffectSize,
    IRLSLogisticRegression,
    SingularInformationError,
    benjamini_hochberg,
    bonferroni_threshold,
    chi_square_independence,
    describe_effect,
    logistic_regression,
    mann_whitney_u,
    permutation_test,
    two_proportion_z,
    welch_t_test,
)
from hypodisco.stats.special import chi2_cdf, normal_cdf, student_t_cdf


# ---------------------------------------------------------------- distribution functions


def test_student_t_cdf_matches_reference(frozen):
    for t, df, ref in frozen["cdf"]["student_t"]:
        assert student_t_cdf(t, df) == pytest.approx(ref, abs=1e-8)


def test_normal_cdf_matches_reference(frozen):
    for z, ref in frozen["cdf"]["normal"]:
        assert normal_cdf(z) == pytest.approx(ref, abs=1e-8)


def test_chi2_cdf_matches_reference(frozen):
    for x, df, ref in frozen["cdf"]["chi2"]:
        assert chi2_cdf(x, df) == pytest.approx(ref, abs=1e-8)


def test_frozen_cdf_table_agrees_with_mpmath(frozen):
    mp.mp.dps = 30
    for z, ref in frozen["cdf"]["normal"]:
        assert float(mp.ncdf(z)) == pytest.approx(ref, abs=1e-15)


@given(st.floats(-40, 40), st.floats(0.5, 200))
@settings(max_examples=60, deadline=None)
def test_student_t_cdf_is_symmetric(t, df):
    assert student_t_cdf(t, df) + student_t_cdf(-t, df) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- welch t


def test_welch_identical_samples():
    r = welch_t_test([1, 2, 3], [1, 2, 3])
    assert r.statistic == 0.0
    assert r.p_two_sided == 1.0
    assert r.effect.kind == "cohens_d" and r.effect.value == 0.0


def test_welch_degenerate_unequal_means():
    r = welch_t_test([0, 0, 0], [1, 1, 1])
    assert r.p_two_sided == 0.0
    assert r.warnings


def test_welch_degenerate_equal_means():
    r = welch_t_test([2, 2], [2, 2, 2])
    assert r.p_two_sided == 1.0
    assert any("degenerate" in w for w in r.warnings)


def test_welch_matches_independent_reference(frozen):
    ref = frozen["welch_1to5_3to7"]
    r = welch_t_test([1, 2, 3, 4, 5], [3, 4, 5, 6, 7])
    assert r.statistic == pytest.approx(ref["t"], abs=1e-12)
    assert r.p_two_sided == pytest.approx(ref["p"], abs=1e-10)


def test_welch_small_example_against_permutation_oracle():
    a, b = [1, 2, 3, 4, 5], [3, 4, 5, 6, 7]
    oracle = permutation_test(a, b, "mean_diff", iterations=200_000, rng_seed=1)
    assert abs(welch_t_test(a, b).p_two_sided - oracle) <= 0.02


def test_welch_rejects_tiny_groups():
    with pytest.raises(ValueError):
        welch_t_test([1.0], [1.0, 2.0])


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30),
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30),
)
@settings(max_examples=80, deadline=None)
def test_welch_symmetry(a, b):
    ab, ba = welch_t_test(a, b), welch_t_test(b, a)
    assert ab.p_two_sided == ba.p_two_sided
    assert ab.statistic == -ba.statistic or (math.isnan(ab.statistic) and math.isnan(ba.statistic))
    assert 0.0 <= ab.p_two_sided <= 1.0


# ---------------------------------------------------------------- mann-whitney


def test_mann_whitney_same_multiset():
    r = mann_whitney_u([1, 2, 3, 4, 5], [5, 4, 3, 2, 1])
    assert r.effect.value == 0.0
    assert r.p_two_sided >= 0.99


def test_mann_whitney_full_separation():
    r = mann_whitney_u(list(range(10)), list(range(10, 20)))
    assert r.effect.kind == "rank_biserial_r"
    assert r.effect.value == -1.0


def test_mann_whitney_all_identical():
    r = mann_whitney_u([3, 3, 3, 3], [3, 3, 3, 3])
    assert r.p_two_sided == 1.0 and r.effect.value == 0.0


def test_mann_whitney_random_15_vs_15_against_oracle():
    rng = np.random.default_rng(15)
    a, b = rng.normal(0, 1, 15), rng.normal(0.6, 1, 15)
    oracle = permutation_test(a, b, "u_statistic", iterations=200_000, rng_seed=2)
    assert abs(mann_whitney_u(a, b).p_two_sided - oracle) <= 0.02


@given(st.lists(st.integers(0, 5), min_size=4, max_size=25), st.lists(st.integers(0, 5), min_size=4, max_size=25))
@settings(max_examples=60, deadline=None)
def test_mann_whitney_effect_in_range(a, b):
    r = mann_whitney_u(a, b)
    assert -1.0 <= r.effect.value <= 1.0
    assert 0.0 <= r.p_two_sided <= 1.0


# ---------------------------------------------------------------- chi-square


def test_chi_square_independent_table():
    r = chi_square_independence([[10, 10], [10, 10]])
    assert r.statistic == 0.0 and r.p_two_sided == 1.0 and r.effect.value == 0.0


def test_chi_square_strong_association(frozen):
    ref = frozen["chi_square_50_10"]
    r = chi_square_independence([[50, 10], [10, 50]])
    assert r.statistic == pytest.approx(53.33, abs=0.005)
    assert r.statistic == pytest.approx(ref["statistic"], rel=1e-12)
    assert r.p_two_sided < 1e-12
    assert r.p_two_sided == pytest.approx(ref["p"], rel=1e-6)


def test_chi_square_df_for_2x3():
    r = chi_square_independence([[5, 9, 12], [8, 7, 10]])
    assert r.degrees_of_freedom == 2
    assert r.effect.kind == "cramers_v"


def test_chi_square_degenerate_margin():
    with pytest.raises(ValueError, match="degenerate margin"):
        chi_square_independence([[0, 0], [3, 4]])


def test_chi_square_small_expected_warns():
    r = chi_square_independence([[1, 2], [3, 4]])
    assert any("expected" in w for w in r.warnings)


# ---------------------------------------------------------------- two-proportion


def test_two_proportion_null():
    r = two_proportion_z(50, 100, 50, 100)
    assert r.statistic == 0.0 and r.p_two_sided == 1.0
    assert r.effect.kind == "relative_risk" and r.effect.value == 1.0


def test_two_proportion_ab_arithmetic(frozen):
    r = two_proportion_z(15100, 200000, 3400, 200000)
    assert r.effect.value == pytest.approx(4.44, abs=0.01)
    assert (r.effect.value - 1) * 100 == pytest.approx(344, abs=0.5)
    assert r.p_two_sided < 1e-6
    assert r.statistic == pytest.approx(frozen["ab_test"]["z"], rel=1e-9)
    assert {e.kind for e in r.extra_effects} == {"odds_ratio"}


def test_two_proportion_first_comment_relative_risk():
    r = two_proportion_z(995, 5000, 4750, 50000)
    assert r.effect.value == pytest.approx(2.09, abs=0.01)


def test_two_proportion_zero_reference_group():
    r = two_proportion_z(5, 20, 0, 20)
    assert math.isinf(r.effect.value)
    assert r.warnings


# ---------------------------------------------------------------- logistic regression


def _table_design(a: int, b: int, c: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.r_[np.ones(a + b), np.zeros(c + d)]
    y = np.r_[np.ones(a), np.zeros(b), np.ones(c), np.zeros(d)]
    return x[:, None], y


def test_logistic_two_by_two_identity(frozen):
    ref = frozen["logit_2x2"]
    x, y = _table_design(40, 60, 20, 80)
    r = logistic_regression(x, y, names=["x"])
    assert r.coefficients["x"].beta == pytest.approx(math.log(40 * 80 / (60 * 20)), abs=1e-6)
    assert r.coefficients["x"].beta == pytest.approx(0.9808, abs=1e-4)
    assert r.coefficients["x"].std_err == pytest.approx(ref["slope_se"], rel=1e-6)
    assert r.coefficients["x"].p == pytest.approx(ref["slope_p"], rel=1e-6)
    assert r.converged


@given(st.integers(1, 200), st.integers(1, 200), st.integers(1, 200), st.integers(1, 200))
@settings(max_examples=60, deadline=None)
def test_logistic_two_by_two_identity_property(a, b, c, d):
    x, y = _table_design(a, b, c, d)
    r = logistic_regression(x, y, names=["x"])
    assert abs(r.coefficients["x"].beta - math.log(a * d / (b * c))) < 1e-6
    z = r.coefficients["x"].wald_z
    assert abs(r.coefficients["x"].p - float(mp.erfc(abs(z) / mp.sqrt(2)))) < 1e-9


def test_logistic_null_calibration():
    ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1000, 1))
        y = (rng.random(1000) < 0.5).astype(float)
        ok += logistic_regression(x, y, names=["x"]).coefficients["x"].p > 0.05
    assert ok >= 90


def test_logistic_separation_flagged():
    y = np.array([0, 1] * 30, dtype=float)
    r = logistic_regression(y[:, None], y, names=["x"])
    assert not r.converged
    assert any("separation" in w for w in r.warnings)


def test_logistic_singular_design():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(80, 1))
    y = (rng.random(80) < 0.5).astype(float)
    with pytest.raises(SingularInformationError):
        logistic_regression(np.hstack([x, x]), y, names=["a", "b"])


def test_logistic_converges_quickly_on_regular_data():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(200, 3))
    y = (rng.random(200) < 1 / (1 + np.exp(-(x @ [0.5, -0.3, 0.2])))).astype(float)
    r = logistic_regression(x, y, tolerance=1e-8)
    assert r.converged and r.iterations <= 25


def test_logistic_estimator_shape():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(300, 2))
    y = (x[:, 0] + rng.normal(size=300) > 0).astype(int)
    est = IRLSLogisticRegression().fit(x, y)
    proba = est.predict_proba(x)
    assert proba.shape == (300, 2)
    assert np.allclose(proba.sum(axis=1), 1.0)
    assert est.score(x, y) > 0.6


# ---------------------------------------------------------------- corrections


@pytest.mark.parametrize(("alpha", "m", "expected"), [(0.05, 4, 0.0125), (0.05, 1, 0.05), (0.01, 20, 0.0005)])
def test_bonferroni_examples(alpha, m, expected):
    assert bonferroni_threshold(alpha, m) == expected


@given(st.floats(1e-4, 0.5), st.integers(1, 1000))
def test_bonferroni_strictly_decreasing(alpha, m):
    assert bonferroni_threshold(alpha, m + 1) < bonferroni_threshold(alpha, m)


def test_benjamini_hochberg_examples():
    assert benjamini_hochberg([0.001, 0.8], 0.05).tolist() == [True, False]
    assert not benjamini_hochberg([1.0] * 5, 0.05).any()


def _bh_brute_force(p: list[float], q: float) -> list[bool]:
    m = len(p)
    largest = 0
    for k in range(1, m + 1):
        if sum(pi <= k * q / m for pi in p) >= k and sorted(p)[k - 1] <= k * q / m:
            largest = k
    cutoff = sorted(p)[largest - 1] if largest else -1.0
    return [pi <= cutoff for pi in p]


def test_benjamini_hochberg_matches_definition():
    rng = np.random.default_rng(20)
    p = np.sort(np.r_[rng.uniform(0, 0.01, 6), rng.uniform(0, 1, 14)]).tolist()
    assert benjamini_hochberg(p, 0.1).tolist() == _bh_brute_force(p, 0.1)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 0.5))
def test_benjamini_hochberg_monotone(p, q):
    mask = benjamini_hochberg(p, q)
    assert mask.tolist() == _bh_brute_force(p, q)
    for i, j in itertools.product(range(len(p)), repeat=2):
        if mask[i] and p[j] <= p[i]:
            assert mask[j]


# ---------------------------------------------------------------- permutation oracle


def test_permutation_identical_samples():
    assert permutation_test([1, 2, 3, 4], [1, 2, 3, 4], iterations=2000, rng_seed=0) >= 0.99


def test_permutation_full_separation():
    p = permutation_test(list(range(1, 11)), list(range(11, 21)), "mean_diff", iterations=20_000, rng_seed=3)
    assert p <= 2e-4


def test_permutation_deterministic():
    a, b = [1.0, 2.5, 3.0, 0.2], [2.0, 4.0, 5.5, 1.0]
    assert permutation_test(a, b, iterations=5000, rng_seed=9) == permutation_test(a, b, iterations=5000, rng_seed=9)


def test_permutation_requires_enough_iterations():
    with pytest.raises(ValueError):
        permutation_test([1, 2], [3, 4], iterations=10)


# ---------------------------------------------------------------- effect labels


@pytest.mark.parametrize(
    ("effect", "label"),
    [
        (EffectSize("odds_ratio", 2.13), "large"),
        (EffectSize("rank_biserial_r", 0.44), "moderate"),
        (EffectSize("odds_ratio", 1.0), "small"),
        (EffectSize("odds_ratio", 1 / 2.13), "large"),
        (EffectSize("odds_ratio", 1.5), "moderate"),
        (EffectSize("rank_biserial_r", -0.6), "large"),
    ],
)
def test_describe_effect(effect, label):
    assert describe_effect(effect) == label


def test_effect_size_rejects_nonpositive_ratio():
    with pytest.raises(ValueError):
        EffectSize("odds_ratio", -1.0)


def test_logistic_null_rejection_rate_over_many_replications():
    rejections = 0
    for seed in range(1000, 2000):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1000, 1))
        y = (rng.random(1000) < 0.5).astype(float)
        rejections += logistic_regression(x, y, names=["x"]).coefficients["x"].p <= 0.05
    # 3 sigma binomial band around 5% of 1000
    assert 29 <= rejections <= 71
