import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fusionkit.data_model import BlockSpec, fixture_paths, load_csv, stack
from fusionkit.errors import DataError, NumericalError
from fusionkit.gaussian import (
    conditional_mean,
    factored_loglik,
    fit_eta_gaussian,
    fit_gaussian,
    gaussian_loglik_rows,
)
from fusionkit.params import (
    GaussianParams,
    constraint_residual,
    eta_to_theta,
    params_from_dict,
    params_to_dict,
    theta_to_eta,
)

from conftest import split_files
from oracles import numerical_mle


def fixture_dataset():
    a, b = fixture_paths()
    spec = BlockSpec.default()
    return stack(load_csv(a, spec, "A"), load_csv(b, spec, "B"), spec)


def test_matches_numerical_maximiser():
    ds = fixture_dataset()
    mu, sig = numerical_mle(ds)
    fit = fit_gaussian(ds)
    assert np.max(np.abs(fit.mu - mu)) < 1e-6
    assert np.max(np.abs(fit.sigma - sig)) < 1e-6


def test_fast_on_fixture():
    ds = fixture_dataset()
    t = time.perf_counter()
    fit_gaussian(ds)
    assert time.perf_counter() - t < 1.0


def test_constraint_exact_and_loglik_factorises():
    ds = fixture_dataset()
    fit = fit_gaussian(ds)
    assert constraint_residual(fit) < 1e-12
    eta = fit_eta_gaussian(ds)
    # the joint observed-data log-likelihood equals the sum of the three factors
    assert gaussian_loglik_rows(ds, fit).sum() == pytest.approx(sum(factored_loglik(ds, eta)), rel=1e-12)


def test_closed_form_is_a_maximum():
    ds = fixture_dataset()
    fit = fit_gaussian(ds)
    base = gaussian_loglik_rows(ds, fit).sum()
    rng = np.random.default_rng(0)
    for _ in range(20):
        step = 1e-3 * rng.standard_normal((3, 3))
        pert = GaussianParams(fit.mu + 1e-3 * rng.standard_normal(3), fit.sigma + step @ step.T, fit.dims)
        assert gaussian_loglik_rows(ds, pert).sum() < base


def spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


@given(st.integers(0, 10_000), st.sampled_from([(1, 1, 1), (2, 1, 3), (3, 2, 2)]))
def test_reparameterisation_roundtrip(seed, dims):
    rng = np.random.default_rng(seed)
    d = sum(dims)
    g = GaussianParams(rng.standard_normal(d), spd(rng, d), dims)
    back = eta_to_theta(theta_to_eta(g))
    assert constraint_residual(back) < 1e-12
    sx = slice(0, dims[0])
    sy = slice(dims[0], dims[0] + dims[1])
    sz = slice(dims[0] + dims[1], d)
    # everything but the non-identified cross block survives the round trip
    for a, b in ((sx, sx), (sx, sy), (sx, sz), (sy, sy), (sz, sz)):
        np.testing.assert_allclose(back.sigma[a, b], g.sigma[a, b], rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(back.mu, g.mu, atol=1e-10)
    again = eta_to_theta(theta_to_eta(back))
    np.testing.assert_allclose(again.sigma, back.sigma, atol=1e-10)


def test_multivariate_blocks_and_json():
    rng = np.random.default_rng(4)
    dims = (2, 2, 1)
    g = GaussianParams(rng.standard_normal(5), spd(rng, 5), dims)
    w = rng.multivariate_normal(g.mu, g.sigma, 400)
    ds = split_files(w, 200, BlockSpec.default(*dims))
    fit = fit_gaussian(ds)
    assert constraint_residual(fit) < 1e-12
    back = params_from_dict(params_to_dict(fit))
    assert np.array_equal(back.mu, fit.mu) and np.array_equal(back.sigma, fit.sigma)


def test_flat_regression_conditional_mean():
    g = GaussianParams(np.array([0.0, 1.0, 2.5]), np.diag([1.0, 2.0, 3.0]), (1, 1, 1))
    out = conditional_mean(g, np.array([[0.3], [-4.0]]), tag="A")
    assert np.allclose(out, 2.5)


def test_too_few_rows():
    spec = BlockSpec.default()
    ds = stack([[0.0, 1.0]], [[1.0, 2.0], [2.0, 0.0]], spec)
    with pytest.raises(DataError):
        fit_gaussian(ds)


def test_singular_x_raises_numerical_error():
    spec = BlockSpec.default()
    a = np.column_stack([np.ones(5), np.arange(5.0)])
    b = np.column_stack([np.ones(5), np.arange(5.0) ** 2])
    with pytest.raises(NumericalError):
        fit_gaussian(stack(a, b, spec))
