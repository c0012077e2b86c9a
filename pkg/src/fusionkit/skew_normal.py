"""Skew-normal density, sampling, conditional law and constrained EM fit.

The model is W = mu + delta U + V with U ~ TN(0, 1, 0) and V ~ N(0, Sigma).
Its density is 2 phi(w; mu, Lambda) Phi(alpha^T (w - mu)) with
Lambda = Sigma + delta delta^T and
alpha = Lambda^{-1} delta / sqrt(1 - delta^T Lambda^{-1} delta).

The fit imposes Sigma_YZ = Sigma_YX Sigma_XX^{-1} Sigma_XZ, which makes Y and
Z conditionally independent given (X, U). Each EM iteration then needs only
E[U_i] and E[U_i^2] given the row's observed block, followed by three
separate regressions with design rows [1, u_i, x_i].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from ._linalg import cholesky, is_psd, mvn_logpdf, spd_solve, sym
from .em import EMConfig, FitReport, converged, expected_regression
from .errors import DataError, NumericalError
from .gaussian import fit_gaussian
from .params import (
    EtaParams,
    RegressionBlock,
    SkewNormalParams,
    XBlock,
    eta_to_theta,
    theta_to_eta,
)
from .truncnorm import TruncatedNormalSpec, tn_moments, tn_sample, tn_sample_array

__all__ = [
    "SkewNormalParams",
    "TruncatedNormalSpec",
    "ConditionalSkewNormal",
    "SNEStep",
    "sn_logpdf",
    "sn_density",
    "sn_sample",
    "tn_moments",
    "tn_sample",
    "conditional_sn",
    "sn_e_step",
    "sn_m_step",
    "fit_sn_em",
    "sn_loglik_rows",
    "default_init",
]

_LOG2 = np.log(2.0)
_B = np.sqrt(2.0 / np.pi)


def _latent_posterior(w, mean, cov, delta):
    """Posterior of U given an observed skew-normal block.

    Returns (m, c, logpdf): U | w ~ TN(m, c^2, 0) and the marginal log density
    of each row of ``w``.
    """
    lam = sym(cov + np.outer(delta, delta))
    chol = cholesky(lam, "Lambda")
    a = spd_solve(lam, delta, "Lambda")
    q = float(delta @ a)
    if not (np.isfinite(q) and q < 1.0):
        raise NumericalError(f"invalid skewness: delta^T Lambda^-1 delta = {q:.6g}")
    c = np.sqrt(1.0 - q)
    m = (w - mean) @ a
    logpdf = _LOG2 + mvn_logpdf(w, mean, lam, chol=chol) + log_ndtr(m / c)
    return m, c, logpdf


def sn_logpdf(w, params):
    """Log density of the skew-normal at each row of ``w``."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return _latent_posterior(w, params.mu, params.sigma, params.delta)[2]


def sn_density(w, params):
    """Skew-normal density at a point (1-D ``w``) or at each row of ``w``."""
    w = np.asarray(w, dtype=float)
    out = np.exp(sn_logpdf(w, params))
    return float(out[0]) if w.ndim == 1 else out


def _mvn_draw(rng, n, cov):
    cov = np.atleast_2d(cov)
    w, v = np.linalg.eigh(sym(cov))
    if w.size and w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise NumericalError("covariance is not positive semi-definite")
    root = v * np.sqrt(np.maximum(w, 0.0))
    return rng.standard_normal((n, cov.shape[0])) @ root.T


def sn_sample(params, n, rng_seed=None):
    """n i.i.d. draws via the latent representation mu + delta U + V."""
    rng = np.random.default_rng(rng_seed)
    u = tn_sample_array(np.zeros(n), 1.0, 0.0, rng)
    v = _mvn_draw(rng, n, params.sigma)
    return params.mu + np.outer(u, params.delta) + v


def sn_sample_latent(params, n, rng):
    """Like :func:`sn_sample` but also returns the latent U."""
    u = tn_sample_array(np.zeros(n), 1.0, 0.0, rng)
    v = _mvn_draw(rng, n, params.sigma)
    return params.mu + np.outer(u, params.delta) + v, u


# -- conditional law given X ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConditionalSkewNormal:
    """(Y, Z) | X = x  as  mu_given_x + delta_given_x U_X + V.

    U_X ~ TN(tau_x, gamma_x, 0) (gamma_x is a variance) and
    V ~ N(0, sigma_given_x); both vectors are ordered (Y, Z).
    """

    mu_given_x: np.ndarray
    tau_x: np.ndarray | float
    gamma_x: float
    sigma_given_x: np.ndarray
    delta_given_x: np.ndarray
    d_y: int

    @property
    def sigma_yy(self):
        return self.sigma_given_x[: self.d_y, : self.d_y]

    @property
    def sigma_yz(self):
        return self.sigma_given_x[: self.d_y, self.d_y :]

    @property
    def sigma_zz(self):
        return self.sigma_given_x[self.d_y :, self.d_y :]

    @property
    def delta_y(self):
        return self.delta_given_x[: self.d_y]

    @property
    def delta_z(self):
        return self.delta_given_x[self.d_y :]

    @property
    def mu_y(self):
        return self.mu_given_x[..., : self.d_y]

    @property
    def mu_z(self):
        return self.mu_given_x[..., self.d_y :]

    def moments(self):
        """Conditional mean(s) and covariance of (Y, Z)."""
        e1, e2 = tn_moments(self.tau_x, np.sqrt(self.gamma_x))
        var_u = np.asarray(e2) - np.asarray(e1) ** 2
        mean = self.mu_given_x + np.multiply.outer(e1, self.delta_given_x)
        cov = self.sigma_given_x + np.multiply.outer(var_u, np.outer(self.delta_given_x, self.delta_given_x))
        return mean, cov


def conditional_sn(params, x):
    """Conditional distribution of (Y, Z) given X = x.

    ``x`` may be a single d_X-vector or an (n, d_X) matrix, in which case the
    location and ``tau_x`` are per row.
    """
    dx, dy, dz = params.dims
    x = np.asarray(x, dtype=float)
    s_xx = params.block("X", "X")
    d_x = params.skew("X")
    lam_xx = sym(s_xx + np.outer(d_x, d_x))
    a = spd_solve(lam_xx, d_x, "Sigma_XX + delta_X delta_X^T")
    gamma = 1.0 - float(d_x @ a)
    if not gamma > 0:
        raise NumericalError("conditional latent variance is not positive")
    s_rx = np.vstack([params.block("Y", "X"), params.block("Z", "X")])
    beta = spd_solve(s_xx, s_rx.T, "Sigma_XX").T
    mu_r = np.r_[params.mean("Y"), params.mean("Z")]
    d_r = np.r_[params.skew("Y"), params.skew("Z")]
    xc = x - params.mean("X")
    mu = mu_r + xc @ beta.T
    tau = xc @ a
    s_rr = np.block(
        [[params.block("Y", "Y"), params.block("Y", "Z")], [params.block("Z", "Y"), params.block("Z", "Z")]]
    )
    cov = sym(s_rr - beta @ s_rx.T)
    delta = d_r - beta @ d_x
    return ConditionalSkewNormal(mu, tau if tau.ndim else float(tau), gamma, cov, delta, dy)


# -- EM -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SNEStep:
    """Latent moments per row: U_i | observed block ~ TN(m_i, c_i^2, 0)."""

    e1: np.ndarray
    e2: np.ndarray
    m: np.ndarray
    c: np.ndarray
    logpdf: np.ndarray

    @property
    def loglik(self):
        return float(self.logpdf.sum())


def sn_e_step(ds, params):
    """Posterior moments of U for every row, plus the observed-data log density."""
    n_a = ds.n_a
    m = np.empty(ds.n)
    c = np.empty(ds.n)
    lp = np.empty(ds.n)
    for tag, rows, data in (("A", slice(0, n_a), ds.a_block), ("B", slice(n_a, ds.n), ds.b_block)):
        mean, cov, delta = params.marginal(tag)
        mm, cc, ll = _latent_posterior(data, mean, cov, delta)
        m[rows], c[rows], lp[rows] = mm, cc, ll
    e1, e2 = tn_moments(m, c)
    return SNEStep(e1, e2, m, c, lp)


def sn_loglik_rows(ds, params):
    lp = np.empty(ds.n)
    for tag, rows, data in (("A", slice(0, ds.n_a), ds.a_block), ("B", slice(ds.n_a, ds.n), ds.b_block)):
        mean, cov, delta = params.marginal(tag)
        lp[rows] = _latent_posterior(data, mean, cov, delta)[2]
    return lp


def _design(e1, x):
    return np.column_stack([np.ones(len(e1)), e1, x])


def sn_m_step_eta(ds, e1, e2, weights=None):
    """Closed-form M-step in the regression parameterisation.

    The X block regresses x_i on [1, u_i] (intercept mu_X, slope delta_X,
    residual covariance Sigma_XX); the Y and Z blocks regress the observed
    responses on [1, u_i, x_i]. ``weights`` (default all ones) are the
    component responsibilities in the mixture case.
    """
    n_a = ds.n_a
    w = np.ones(ds.n) if weights is None else np.asarray(weights, dtype=float)
    var_u = np.maximum(e2 - e1 * e1, 0.0)
    fx = expected_regression(w, np.column_stack([np.ones(ds.n), e1]), ds.x, var_u, what="X block")
    fy = expected_regression(
        w[:n_a], _design(e1[:n_a], ds.xa), ds.ya, var_u[:n_a], what="Y regression (file A)"
    )
    fz = expected_regression(
        w[n_a:], _design(e1[n_a:], ds.xb), ds.zb, var_u[n_a:], what="Z regression (file B)"
    )
    x_block = XBlock(fx.coef[0], fx.omega, fx.coef[1])
    ry = RegressionBlock(fy.coef[0], fy.coef[2:].T, fy.omega, fy.coef[1])
    rz =RegressionBlock(fz.coef[0], fz.coef[2:].T, fz.omega, fz.coef[1])
    return EtaParams(x_block, ry, rz)


def sn_m_step(ds, estep, weights=None):
    return eta_to_theta(sn_m_step_eta(ds, estep.e1, estep.e2, weights))


def guard_delta(params, report=None, iteration=None, max_halvings=60):
    """Halve delta until delta^T Lambda^{-1} delta < 1 (recording the event)."""
    if not is_psd(params.sigma):
        raise NumericalError("M-step produced a covariance that is not PSD", iteration=iteration)
    for k in range(max_halvings + 1):
        try:
            q = params.skew_quadratic()
        except NumericalError:
            q = np.inf
        if np.isfinite(q) and q < 1.0 - 1e-12:
            if k and report is not None:
                report.event(iteration, "delta_shrunk", {"halvings": k, "quadratic": q})
            return params
        params = SkewNormalParams(params.mu, params.sigma, params.delta * 0.5, params.dims)
    raise NumericalError("could not restore a valid skewness vector", iteration=iteration)


def _observed_columns(ds):
    """Observed values of every column: X from all rows, Y from A, Z from B."""
    return [ds.x[:, j] for j in range(ds.x.shape[1])] + [ds.ya[:, j] for j in range(ds.ya.shape[1])] + [
        ds.zb[:, j] for j in range(ds.zb.shape[1])
    ]


def default_init(ds, strategy="moments", rng=None):
    """Starting point: Gaussian MLE for location/scale plus a skewness guess.

    ``moments``: delta_j = sign(sample skewness_j) * 0.5 * sd_j.
    ``random``: delta_j = U(-1, 1) * sd_j.
    The location and scale are shifted so the starting model keeps the
    Gaussian fit's mean and (where it stays PD) covariance.
    """
    g = fit_gaussian(ds)
    sd = np.sqrt(np.maximum(np.diag(g.sigma), 1e-300))
    if strategy == "random":
        rng = np.random.default_rng(rng)
        delta = rng.uniform(-1.0, 1.0, g.d) * sd
    else:
        skew = []
        for col in _observed_columns(ds):
            cc = col - col.mean()
            m2 = np.mean(cc**2)
            skew.append(np.mean(cc**3) / m2**1.5 if m2 > 0 else 0.0)
        delta = np.where(np.asarray(skew) < 0, -1.0, 1.0) * 0.5 * sd
    mu = g.mu - _B * delta
    sigma = g.sigma - (1.0 - _B**2) * np.outer(delta, delta)
    try:
        cholesky(sigma)
    except NumericalError:
        sigma = g.sigma
    start = SkewNormalParams(mu, sigma, delta, g.dims)
    return eta_to_theta(theta_to_eta(start))


def fit_sn_em(ds, init=None, config=None):
    """Constrained EM for the skew-normal matching model.

    Returns (SkewNormalParams, FitReport). Iterates until the relative change
    in observed-data log-likelihood drops below ``config.tol``.
    """
    config = config or EMConfig()
    strategy = "moments" if config.init_strategy in ("default", "kmeans") else config.init_strategy
    if init is None:
        init = default_init(ds, strategy, config.seed)
    elif not isinstance(init, SkewNormalParams) or init.dims != ds.spec.dims:
        raise DataError("init must be SkewNormalParams matching the dataset blocks")
    report = FitReport("skew_normal")
    report.conventions = {
        "x_block_normaliser": "n",
        "latent_scale": "sqrt(1 - delta^T Lambda^-1 delta)",
        "init_strategy": strategy,
    }
    params = guard_delta(init, report, 0)
    return _run_em(ds, params, config, report)


def _run_em(ds, params, config, report):
    prev = None
    for it in range(config.max_iters + 1):
        try:
            est = sn_e_step(ds, params)
        except NumericalError as exc:
            raise NumericalError(str(exc), iteration=it) from exc
        ll = est.loglik
        if not np.isfinite(ll):
            raise NumericalError("non-finite log-likelihood", iteration=it)
        report.trace.append(ll)
        if prev is not None and converged(prev, ll, config.tol):
            report.converged = True
            break
        if it == config.max_iters:
            break
        prev = ll
        try:
            params = guard_delta(sn_m_step(ds, est), report, it + 1)
        except NumericalError as exc:
            raise NumericalError(str(exc), iteration=it + 1) from exc
        report.n_iter = it + 1
    report.loglik = report.trace[-1]
    return params, report
