
import numpy as np
import pytest
from scipy import stats as sps

from seqjsp.stats import betainc, paired_ttest, student_t_cdf, ttest_decision

# one-sided critical values t_{0.95, df} and t_{0.999, df} from standard tables
T95 = {1: 6.314, 2: 2.920, 5: 2.015, 10: 1.812, 30: 1.697, 99: 1.660}
T999 = {5: 5.893, 10: 4.144, 30: 3.385}


@pytest.mark.parametrize("df,crit", sorted(T95.items()))
def test_tabulated_95(df, crit):
    assert student_t_cdf(crit, df) == pytest.approx(0.95, abs=5e-4)
    assert student_t_cdf(-crit, df) == pytest.approx(0.05, abs=5e-4)


@pytest.mark.parametrize("df,crit", sorted(T999.items()))
def test_tabulated_999(df, crit):
    assert student_t_cdf(-crit, df) == pytest.approx(0.001, abs=5e-5)


def test_cdf_against_scipy():
    for df in (1, 2, 3.5, 10, 99, 999):
        for t in (-40, -5, -1.3, -0.2, 0.0, 0.7, 3.0, 12.0):
            assert student_t_cdf(t, df) == pytest.approx(sps.t.cdf(t, df), rel=1e-9, abs=1e-300)


def test_betainc_edges():
    assert betainc(2, 3, 0.0) == 0.0
    assert betainc(2, 3, 1.0) == 1.0
    assert betainc(1, 1, 0.3) == pytest.approx(0.3)


def test_identical_models_no_replacement():
    costs = np.arange(50, dtype=float)
    replace, _ = ttest_decision(costs, costs, 0.05)
    assert not replace


def test_constant_improvement_replaces():
    base = np.arange(50, dtype=float) + 100
    assert ttest_decision(base - 5, base, 0.05)[0]
    assert not ttest_decision(base + 5, base, 0.05)[0]


def test_normal_differences_replace():
    diffs = np.random.default_rng(0).normal(-3, 1, size=100)
    t, p = paired_ttest(diffs)
    assert t == pytest.approx(diffs.mean() / (diffs.std(ddof=1) / 10))
    assert p < 1e-4
    assert p == pytest.approx(sps.t.cdf(t, 99), rel=1e-6)
    assert ttest_decision(diffs, np.zeros(100), 0.05) == (True, p)


def test_worse_candidate_never_replaces():
    rng = np.random.default_rng(1)
    for _ in range(200):
        diffs = rng.normal(0.5, 1, size=30)
        replace, p = ttest_decision(diffs, np.zeros(30), 0.05)
        assert not replace or diffs.mean() < 0
