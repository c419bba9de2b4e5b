import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from sphbi.stats import StatSummary, betainc, paired_t, t_cdf, t_ppf, welch_t

# published (mean, std) over 10 seeds and the printed 95% interval
TABLE4 = {
    "1": (45.5, 5.7, (41.4, 49.6)),
    "2": (87.6, 4.9, (84.1, 91.1)),
    "2b": (94.4, 2.2, (92.9, 95.9)),
    "3": (84.6, 8.5, (78.5, 90.7)),
    "3b": (94.5, 4.0, (91.6, 97.4)),
}


@pytest.mark.parametrize("aid", sorted(TABLE4))
def test_table4_intervals(aid):
    mean, std, (lo, hi) = TABLE4[aid]
    s = StatSummary.from_moments(mean, std, 10)
    assert abs(s.ci_low - lo) <= 0.15 and abs(s.ci_high - hi) <= 0.15


def test_first_row_to_one_decimal():
    s = StatSummary.from_moments(45.5, 5.7, 10)
    assert (round(s.ci_low, 1), round(s.ci_high, 1)) == (41.4, 49.6)


@pytest.mark.parametrize("a, b, p", [("2b", "2", 0.002), ("2b", "3b", 0.929), ("3b", "3", 0.006)])
def test_published_welch_p_values(a, b, p):
    sa = StatSummary.from_moments(*TABLE4[a][:2], 10)
    sb = StatSummary.from_moments(*TABLE4[b][:2], 10)
    assert welch_t(sa, sb)[2] == pytest.approx(p, abs=0.05)


def test_welch_against_scipy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(90, rng.uniform(1, 8), 10)
        y = rng.normal(88, rng.uniform(1, 8), int(rng.integers(3, 15)))
        t, df, p = welch_t(StatSummary.from_values(x), StatSummary.from_values(y))
        ref = sps.ttest_ind(x, y, equal_var=False)
        assert t == pytest.approx(ref.statistic, rel=1e-10)
        assert p == pytest.approx(ref.pvalue, abs=1e-9)


def test_paired_against_scipy():
    rng = np.random.default_rng(1)
    x = rng.normal(94, 2, 10)
    y = x + rng.normal(0.5, 1, 10)
    t, df, p = paired_t(x, y)
    ref = sps.ttest_rel(x, y)
    assert t == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue, abs=1e-10) and df == 9


def test_identical_samples():
    s = StatSummary.from_values([93.0] * 10)
    assert s.std == 0 and s.ci_low == s.ci_high == 93.0
    assert welch_t(s, s) == (0.0, 18.0, 1.0)
    assert paired_t([1, 2, 3], [1, 2, 3])[2] == 1.0


def test_small_n_errors():
    one = StatSummary.from_values([1.0])
    assert math.isnan(one.ci_low)
    with pytest.raises(ValueError):
        welch_t(one, StatSummary.from_values([1.0, 2.0]))
    with pytest.raises(ValueError):
        paired_t([1.0], [2.0])


@given(st.floats(-10, 10), st.integers(1, 50))
def test_t_cdf_four_decimals(t, df):
    assert abs(t_cdf(t, df) - sps.t.cdf(t, df)) < 1e-6


@given(st.floats(0.001, 0.999), st.floats(1, 60))
def test_t_ppf_inverts(q, df):
    assert t_ppf(q, df) == pytest.approx(sps.t.ppf(q, df), abs=1e-8)


@given(st.floats(0.1, 30), st.floats(0.1, 30), st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    from scipy.special import betainc as ref

    assert betainc(a, b, x) == pytest.approx(ref(a, b, x), abs=1e-10)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=20))
def test_half_width_formula(values):
    s = StatSummary.from_values(values)
    hw = sps.t.ppf(0.975, len(values) - 1) * np.std(values, ddof=1) / math.sqrt(len(values))
    assert s.half_width == pytest.approx(hw, rel=1e-9, abs=1e-9)
    assert s.ci_low <= s.mean <= s.ci_high
