import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from stabletta.stats import (
    DegenerateRegressorError,
    DegenerateSamplesError,
    HolderFit,
    central_moments,
    holder_fit,
    jb_over_groups,
    jb_p_value,
    jb_test,
    jensen_bound_check,
    logit_variance,
)


def test_jb_p_value_mapping_and_validation():
    assert jb_p_value(0.0) == 1.0
    assert jb_p_value(2.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
    with pytest.raises(ValueError, match="nonnegative"):
        jb_p_value(-0.1)


# --- moments ----------------------------------------------------------------

def test_central_moments_fixture():
    mean, m2, m3, m4 = central_moments([-1.0, 0.0, 1.0])
    assert mean == 0.0
    assert abs(m2 - 2.0 / 3.0) < 1e-15
    assert m3 == 0.0
    assert abs(m4 - 2.0 / 3.0) < 1e-15


def test_central_moments_constant_and_shift():
    _, m2, m3, m4 = central_moments([5.0] * 6)
    assert (m2, m3, m4) == (0.0, 0.0, 0.0)
    a = central_moments([1.0, 4.0, 2.0, 8.0])
    b = central_moments([1.0 + 17, 4.0 + 17, 2.0 + 17, 8.0 + 17])
    np.testing.assert_allclose(a[1:], b[1:], atol=1e-9)


def test_central_moments_needs_two():
    with pytest.raises(ValueError):
        central_moments([1.0])


# --- Jarque-Bera ------------------------------------------------------------

def test_jb_formula_arithmetic_three_points():
    # the statistic evaluated by hand on {-1, 0, 1}: skew 0, kurt 1.5,
    # jb = 3/6 * (1.5 - 3)^2 / 4 = 0.28125, p = exp(-jb/2)
    _, m2, m3, m4 = central_moments([-1.0, 0.0, 1.0])
    skew = m3 / m2**1.5
    kurt = m4 / m2**2
    jb = 3 / 6 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)
    assert skew == 0.0
    assert abs(kurt - 1.5) < 1e-12
    assert abs(jb - 0.28125) < 1e-12
    assert abs(math.exp(-jb / 2) - 0.8688) < 1e-4


def test_jb_test_requires_four_samples():
    with pytest.raises(ValueError):
        jb_test([-1.0, 0.0, 1.0])


def test_jb_six_point_fixture():
    r = jb_test([-1.0, 0.0, 1.0, -1.0, 0.0, 1.0])
    assert abs(r.skew) < 1e-12
    assert abs(r.kurt - 1.5) < 1e-12
    assert abs(r.jb - 0.5625) < 1e-12
    assert abs(r.p_value - math.exp(-r.jb / 2)) < 1e-15
    assert not r.reject()


def test_jb_zero_statistic_gives_p_one():
    # {+-1, four zeros}: skew 0 and kurt exactly n/2 = 3, so jb = 0, p = 1
    r = jb_test([1.0, -1.0, 0.0, 0.0, 0.0, 0.0])
    assert r.skew == 0.0
    assert abs(r.kurt - 3.0) < 1e-12
    assert r.jb < 1e-24
    assert r.p_value > 1 - 1e-12


def test_jb_p_equals_chi2_two_dof_tail():
    r = jb_test(np.random.default_rng(0).normal(size=64))
    assert abs(r.p_value - sps.chi2.sf(r.jb, df=2)) < 1e-12


def test_jb_constant_samples_distinct_error():
    with pytest.raises(DegenerateSamplesError):
        jb_test([2.0, 2.0, 2.0, 2.0])


@given(
    st.lists(st.floats(-100, 100), min_size=8, max_size=64),
    st.floats(0.1, 50),
    st.floats(-100, 100),
)
def test_jb_affine_invariance(xs, a, b):
    x = np.asarray(xs)
    if x.std() < 1e-6:
        return
    r1 = jb_test(x)
    r2 = jb_test(a * x + b)
    assert abs(r1.skew - r2.skew) < 1e-6 * max(1, abs(r1.skew))
    assert abs(r1.kurt - r2.kurt) < 1e-6 * max(1, abs(r1.kurt))
    assert abs(r1.jb - r2.jb) < 1e-5 * max(1, abs(r1.jb))


def test_jb_negative_scale_flips_skew_only():
    x = np.random.default_rng(1).gamma(2.0, size=64)
    r1, r2 = jb_test(x), jb_test(-x)
    assert abs(r1.skew + r2.skew) < 1e-12
    assert abs(r1.kurt - r2.kurt) < 1e-12
    assert abs(r1.jb - r2.jb) < 1e-10


def test_jb_null_rejection_rate_near_simulated_band():
    # exp(-jb/2) over-covers at n=32: the true null rejection rate at
    # alpha=0.05 sits near 0.03, not 0.05
    rng = np.random.default_rng(5)
    mats = rng.normal(size=(400, 32, 5))
    report = jb_over_groups(list(mats), alpha=0.05)
    assert report.skipped == 0
    assert len(report.results) == 2000
    assert 0.015 <= report.rejection_fraction <= 0.055


def test_jb_heavy_tails_reject_more_than_gaussian():
    rng = np.random.default_rng(6)
    gauss = jb_over_groups(list(rng.normal(size=(150, 32, 4))))
    heavy = jb_over_groups(list(rng.standard_t(3, size=(150, 32, 4))))
    assert heavy.rejection_fraction > gauss.rejection_fraction + 0.1


def test_jb_over_groups_counts_degenerates():
    good = np.random.default_rng(2).normal(size=(8, 3))
    bad = np.zeros((8, 3))
    report = jb_over_groups([good, bad])
    assert report.skipped == 3
    assert len(report.results) == 3


def test_ecdf_monotone_and_ends_at_one():
    mats = [np.random.default_rng(3).normal(size=(16, 4))]
    pts = jb_over_groups(mats).ecdf()
    fracs = [f for _, f in pts]
    assert fracs == sorted(fracs)
    assert fracs[-1] == 1.0


# --- variances --------------------------------------------------------------

def test_logit_variance_fixture():
    assert logit_variance([[0.0, 0.0], [2.0, 0.0]]) == 1.0


def test_logit_variance_identical_rows_zero():
    assert logit_variance(np.ones((5, 3)) * 2.5) == 0.0


def test_logit_variance_iid_gaussian_expectation():
    # rows i.i.d. N(0, s^2 I_C): expectation s^2 * C * (N-1)/N
    rng = np.random.default_rng(8)
    s, n, c = 1.7, 16, 6
    vals = [logit_variance(rng.normal(0, s, size=(n, c))) for _ in range(400)]
    expect = s**2 * c * (n - 1) / n
    assert abs(np.mean(vals) - expect) < 0.05 * expect


def test_logit_variance_translation_invariant():
    rows = np.random.default_rng(4).normal(size=(6, 3))
    assert abs(logit_variance(rows) - logit_variance(rows + 17.0)) < 1e-9


def test_logit_variance_needs_two_rows():
    with pytest.raises(ValueError):
        logit_variance([[1.0, 2.0]])


# --- power-law fit ----------------------------------------------------------

def test_holder_fit_exact_half_power_triangle():
    # inputs 0, 1, 4 on a line; logit points placed so that every pairwise
    # distance equals 2*sqrt(input distance) exactly -> c=2, d=0.5, R^2=1
    xs = [np.array([0.0]), np.array([1.0]), np.array([4.0])]
    zs = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0 * math.sqrt(3.0)]])
    fit = holder_fit(xs, zs)
    assert fit.pairs_used == 3
    assert abs(fit.c - 2.0) < 1e-9
    assert abs(fit.d - 0.5) < 1e-9
    assert fit.r2 > 1 - 1e-12


def test_holder_fit_exact_linear_family():
    xs = [np.array([t, 0.0]) for t in (0.0, 1.0, 2.5, 4.0)]
    zs = np.stack([np.array([3.0 * t, 1.0]) for t in (0.0, 1.0, 2.5, 4.0)])
    fit = holder_fit(xs, zs)
    assert abs(fit.d - 1.0) < 1e-9
    assert abs(fit.c - 3.0) < 1e-9
    assert fit.r2 > 1 - 1e-12


def test_holder_fit_matches_polyfit_oracle_on_noisy_data():
    rng = np.random.default_rng(12)
    n = 10
    xs = [rng.normal(size=8) for _ in range(n)]
    zs = rng.normal(size=(n, 5))
    fit = holder_fit(xs, zs)
    u, v = [], []
    for i in range(n):
        for j in range(i + 1, n):
            dx = np.linalg.norm(xs[i] - xs[j])
            if dx < 1e-9:
                continue
            u.append(math.log(dx))
            v.append(math.log(max(np.linalg.norm(zs[i] - zs[j]), 1e-300)))
    d_hat, logc_hat = np.polyfit(u, v, 1)
    assert abs(fit.d - d_hat) < 1e-9
    assert abs(fit.c - math.exp(logc_hat)) < 1e-9 * max(1.0, fit.c)


def test_holder_fit_invariant_to_pass_ordering():
    rng = np.random.default_rng(13)
    xs = [rng.normal(size=6) for _ in range(7)]
    zs = rng.normal(size=(7, 4))
    fit1 = holder_fit(xs, zs)
    perm = [3, 0, 6, 1, 5, 2, 4]
    fit2 = holder_fit([xs[i] for i in perm], zs[perm])
    assert abs(fit1.c - fit2.c) < 1e-9
    assert abs(fit1.d - fit2.d) < 1e-9
    assert fit1.pairs_used == fit2.pairs_used


def test_holder_fit_identical_passes_degenerate():
    xs = [np.ones(4)] * 5
    zs = np.ones((5, 3))
    with pytest.raises(DegenerateRegressorError) as e:
        holder_fit(xs, zs)
    assert "degenerate regressor" in str(e.value)


def test_holder_fit_shape_mismatch():
    with pytest.raises(ValueError):
        holder_fit([np.ones(4)] * 3, np.ones((2, 3)))


# --- Jensen bound -----------------------------------------------------------

def test_jensen_bound_formula_and_satisfied():
    fit = HolderFit(c=2.0, d=1.0, r2=1.0, pairs_used=6)
    rep = jensen_bound_check(fit, var_input=1.0, var_logits=3.9)
    assert rep.applicable
    assert abs(rep.jensen_bound - 4.0) < 1e-12  # 2^(d-1) * c^2 * var_input
    assert rep.satisfied


def test_jensen_bound_zero_input_variance():
    fit = HolderFit(c=2.0, d=0.5, r2=1.0, pairs_used=3)
    rep = jensen_bound_check(fit, var_input=0.0, var_logits=0.0)
    assert rep.applicable
    assert rep.jensen_bound == 0.0
    assert rep.satisfied


def test_jensen_bound_violated():
    fit = HolderFit(c=1.0, d=1.0, r2=1.0, pairs_used=6)
    rep = jensen_bound_check(fit, var_input=1.0, var_logits=1.2)
    assert rep.applicable and not rep.satisfied


def test_jensen_bound_not_applicable_above_one():
    fit = HolderFit(c=1.0, d=1.3, r2=0.9, pairs_used=6)
    rep = jensen_bound_check(fit, var_input=1.0, var_logits=50.0)
    assert not rep.applicable
    assert not rep.satisfied
