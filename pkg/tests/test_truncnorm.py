import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fusionkit.errors import DataError
from fusionkit.truncnorm import TruncatedNormalSpec, mills, tn_moments, tn_sample

from oracles import quad_moments


def test_half_normal_moments():
    e1, e2 = tn_moments(0.0, 1.0)
    assert e1 == pytest.approx(np.sqrt(2 / np.pi), rel=1e-15)
    assert e2 == pytest.approx(1.0, rel=1e-15)


def test_far_tail_is_finite_and_close_to_series():
    e1, e2 = tn_moments(-30.0, 1.0)
    assert 0 < e1 < 1 / 30
    assert e1 == pytest.approx(1 / 30 - 2 / 30**3, rel=1e-4)
    assert np.isfinite(e2) and e2 > e1 * e1


@pytest.mark.parametrize("m,c", [(3.0, 2.0), (-5.0, 1.0), (-19.9999, 1.0), (-20.0001, 1.0), (-39.0, 0.5), (1.0, 0.1)])
def test_moments_match_quadrature(m, c):
    e1, e2 = tn_moments(m, c)
    r1, r2 = quad_moments(m, c)
    assert e1 == pytest.approx(r1, rel=1e-10)
    assert e2 == pytest.approx(r2, rel=1e-10)


def test_vectorised_matches_scalar():
    m = np.array([-35.0, -3.0, 0.0, 2.0])
    c = np.array([1.0, 0.5, 2.0, 1.5])
    e1, e2 = tn_moments(m, c)
    for i in range(4):
        assert (e1[i], e2[i]) == tn_moments(m[i], c[i])


def test_mills_stable_where_naive_ratio_underflows():
    t = np.array([-38.0, -45.0, -100.0])
    assert np.all(np.isfinite(mills(t)))
    assert mills(-100.0) == pytest.approx(100.0, rel=1e-3)


def test_invalid_scale():
    with pytest.raises(DataError):
        tn_moments(0.0, 0.0)
    with pytest.raises(DataError):
        TruncatedNormalSpec(0.0, -1.0)


@given(st.floats(-40, 8), st.floats(0.05, 20))
def test_conditional_variance_bounds(t, c):
    e1, e2 = tn_moments(t * c, c)
    var = e2 - e1 * e1
    assert 0 < var <= c * c * (1 + 1e-12)


@given(st.floats(-40, 8), st.floats(1e-3, 1.0), st.floats(0.1, 5))
def test_mean_increasing_in_m(t, step, c):
    lo, _ = tn_moments(t * c, c)
    hi, _ = tn_moments((t + step) * c, c)
    assert hi > lo


def _check_sample(spec, n, seed):
    x = tn_sample(spec, np.random.default_rng(seed), size=n)
    assert np.all(x >= spec.lower_bound)
    c = np.sqrt(spec.variance)
    e1, e2 = tn_moments(spec.mean - spec.lower_bound, c)
    e1 += spec.lower_bound
    e2 += 2 * spec.lower_bound * (e1 - spec.lower_bound) + spec.lower_bound**2
    se1 = x.std() / np.sqrt(n)
    se2 = (x * x).std() / np.sqrt(n)
    assert abs(x.mean() - e1) < 3 * se1
    assert abs((x * x).mean() - e2) < 3 * se2


@pytest.mark.parametrize(
    "spec", [TruncatedNormalSpec(0.0, 1.0, 0.0), TruncatedNormalSpec(-7.0, 1.0, 0.0), TruncatedNormalSpec(2.0, 4.0, 1.0)]
)
def test_sample_moments(spec):
    _check_sample(spec, 200_000, 11)


def test_sample_far_lower_bound_is_plain_normal():
    spec = TruncatedNormalSpec(1.5, 4.0, 1.5 - 40 * 2.0)
    x = tn_sample(spec, np.random.default_rng(2), size=200_000)
    assert abs(x.mean() - 1.5) < 3 * 2 / np.sqrt(len(x))
    assert abs(x.var() - 4.0) < 3 * 4 * np.sqrt(2 / len(x))


def test_sample_scalar_and_determinism():
    spec = TruncatedNormalSpec(0.0, 1.0)
    assert isinstance(tn_sample(spec, 3), float)
    a = tn_sample(spec, np.random.default_rng(5), size=10)
    b = tn_sample(spec, np.random.default_rng(5), size=10)
    assert np.array_equal(a, b)
