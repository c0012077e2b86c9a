"""Closed-form maximum likelihood matching for the multivariate normal model.

Under ``Sigma_YZ = Sigma_YX Sigma_XX^{-1} Sigma_XZ`` the observed-data
likelihood factors into the X marginal (all rows), the Y|X regression
(file A) and the Z|X regression (file B), each maximised in closed form.
"""

import numpy as np

from ._linalg import cholesky, mvn_logpdf, sym
from .em import expected_regression
from .errors import DataError
from .params import (
    EtaParams,
    GaussianParams,
    RegressionBlock,
    XBlock,
    eta_to_theta,
    theta_to_eta,
)

__all__ = [
    "GaussianParams",
    "RegressionBlock",
    "EtaParams",
    "theta_to_eta",
    "eta_to_theta",
    "fit_gaussian",
    "gaussian_loglik_rows",
    "factored_loglik",
]


def _check_rows(ds):
    dx, dy, dz = ds.spec.dims
    if ds.n < dx + 2:
        raise DataError(f"need at least {dx + 2} rows in total, got {ds.n}")
    if ds.n_a < dx + dy + 1:
        raise DataError(f"file A needs at least {dx + dy + 1} rows, got {ds.n_a}")
    if ds.n_b < dx + dz + 1:
        raise DataError(f"file B needs at least {dx + dz + 1} rows, got {ds.n_b}")


def _regression(x, resp, what):
    w = np.ones(len(x))
    fit = expected_regression(w, np.hstack([np.ones((len(x), 1)), x]), resp, what=what)
    return RegressionBlock(fit.coef[0], fit.coef[1:].T, fit.omega)


def fit_eta_gaussian(ds):
    """Maximum likelihood estimate of the regression parameterisation."""
    _check_rows(ds)
    x = ds.x
    mu_x = x.mean(axis=0)
    xc = x - mu_x
    s_xx = sym(xc.T @ xc) / ds.n
    cholesky(s_xx, "sample covariance of X")
    ry = _regression(ds.xa, ds.ya, "Y|X regression (file A)")
    rz = _regression(ds.xb, ds.zb, "Z|X regression (file B)")
    return EtaParams(XBlock(mu_x, s_xx), ry, rz)


def fit_gaussian(ds):
    """Closed-form constrained MLE of the joint normal model.

    Covariances use 1/n denominators: Sigma_XX over all n rows, Omega_Y over
    n_A and Omega_Z over n_B.
    """
    return eta_to_theta(fit_eta_gaussian(ds))


def gaussian_loglik_rows(ds, params):
    """Per-row observed-data log density (A rows use (X,Y), B rows (X,Z))."""
    out = np.empty(ds.n)
    for tag, rows, data in (("A", slice(0, ds.n_a), ds.a_block), ("B", slice(ds.n_a, ds.n), ds.b_block)):
        mean, cov = params.marginal(tag)
        out[rows] = mvn_logpdf(data, mean, cov)
    return out


def factored_loglik(ds, eta):
    """The three factors of the observed-data log-likelihood at ``eta``.

    Returns (X marginal over all rows, Y|X over file A, Z|X over file B).
    """
    lx = mvn_logpdf(ds.x, eta.x.mu, eta.x.sigma).sum()
    ly = mvn_logpdf(ds.ya - eta.y.mean(ds.xa), 0.0, eta.y.omega).sum()
    lz = mvn_logpdf(ds.zb - eta.z.mean(ds.xb), 0.0, eta.z.omega).sum()
    return float(lx), float(ly), float(lz)


def conditional_mean(params, x, obs=None, tag="A"):
    """Mean of the missing block given X under the constrained joint.

    Under the identification constraint the missing block of a row is
    independent of its other observed block given X, so ``obs`` is unused.
    """
    eta = theta_to_eta(params)
    reg = eta.z if tag == "A" else eta.y
    return reg.mean(x)
