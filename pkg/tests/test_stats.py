import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special
from scipy import stats as sps

from thermocast.errors import ContractError
from thermocast.stats import betainc, student_t_sf_two_sided, welch_t_test


def test_example_pair():
    t, df, p = welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert t == pytest.approx(-1.0, abs=1e-14)
    assert df == pytest.approx(8.0, abs=1e-12)
    assert p == pytest.approx(0.3465935070873343, abs=1e-12)


def test_identical_samples():
    t, _, p = welch_t_test([0.1, 0.2, 0.4], [0.1, 0.2, 0.4])
    assert t == 0.0 and p == 1.0


def test_zero_variance_equal_means():
    assert welch_t_test([3.0, 3.0], [3.0, 3.0]).p == 1.0


def test_zero_variance_different_means():
    assert welch_t_test([3.0, 3.0], [4.0, 4.0]).p == 0.0


def test_far_separated():
    rng = np.random.default_rng(0)
    assert welch_t_test(rng.normal(0, 1, 8), rng.normal(100, 1, 8)).p < 1e-6


def test_too_small():
    with pytest.raises(ContractError):
        welch_t_test([1.0], [1.0, 2.0])


def test_against_scipy():
    rng = np.random.default_rng(42)
    for _ in range(100):
        na, nb = rng.integers(2, 12, 2)
        a = rng.normal(rng.normal(), rng.uniform(0.1, 3), na)
        b = rng.normal(rng.normal(), rng.uniform(0.1, 3), nb)
        ours = welch_t_test(a, b)
        ref = sps.ttest_ind(a, b, equal_var=False)
        assert ours.t == pytest.approx(ref.statistic, rel=1e-10)
        assert abs(ours.p - ref.pvalue) < 1e-10


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=10),
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=10),
)
def test_symmetry(a, b):
    ab, ba = welch_t_test(a, b), welch_t_test(b, a)
    assert ab.t == -ba.t
    assert ab.p == pytest.approx(ba.p, abs=1e-15)
    assert 0.0 <= ab.p <= 1.0


@pytest.mark.parametrize("a,b", [(0.5, 0.5), (2.0, 7.5), (30.0, 0.5), (0.5, 400.0), (4.0, 4.0)])
def test_betainc_matches_scipy(a, b):
    for x in np.linspace(0, 1, 41):
        assert abs(betainc(a, b, x) - special.betainc(a, b, x)) < 1e-12


def test_t_tail():
    for df in (1.0, 2.5, 8.0, 60.0):
        for t in (0.0, 0.3, 2.0, 12.0):
            assert abs(student_t_sf_two_sided(t, df) - 2 * sps.t.sf(t, df)) < 1e-12


def test_tiny_variance_df_is_finite():
    r = welch_t_test([0.0, 0.0], [0.0, 2e-125])
    assert r.df == pytest.approx(1.0) and 0.0 <= r.p <= 1.0
