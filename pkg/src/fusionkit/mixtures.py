"""Constrained EM for Gaussian and skew-normal mixture matching.

Each component h carries its own restriction
Sigma_YZ^(h) = Sigma_YX^(h) [Sigma_XX^(h)]^{-1} Sigma_XZ^(h), imposed by
building every component from its regression parameterisation. The M-step
is the single-family M-step with responsibilities as row weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from ._linalg import floor_eigenvalues, mvn_logpdf
from .em import EMConfig, FitReport, converged, expected_regression
from .errors import DataError, NumericalError
from .gaussian import _check_rows, fit_gaussian, gaussian_loglik_rows
from .params import (
    EtaParams,
    GaussianParams,
    RegressionBlock,
    SkewNormalParams,
    XBlock,
    eta_to_theta,
    params_from_dict,
    params_to_dict,
    theta_to_eta,
)
from .skew_normal import (
    _latent_posterior,
    default_init,
    guard_delta,
    sn_e_step,
    sn_loglik_rows,
    sn_m_step_eta,
)

__all__ = [
    "MixtureParams",
    "Responsibilities",
    "EMConfig",
    "posterior_class_probs",
    "x_class_probs",
    "fit_gmm_matching",
    "fit_snmix_matching",
    "observed_loglik",
    "model_to_dict",
    "model_from_dict",
    "align_components",
]

FAMILIES = {"gmm": GaussianParams, "snmix": SkewNormalParams}


@dataclass(frozen=True, eq=False)
class MixtureParams:
    pi: np.ndarray
    components: tuple

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if len(comps) == 0 or len(comps) != len(pi):
            raise DataError("pi and components must have the same non-zero length")
        if not np.all(pi > 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise DataError("mixing proportions must be positive and sum to 1")
        kinds = {type(c) for c in comps}
        if len(kinds) != 1 or kinds.pop() not in (GaussianParams, SkewNormalParams):
            raise DataError("components must all be GaussianParams or all SkewNormalParams")
        if len({c.dims for c in comps}) != 1:
            raise DataError("components have different block dimensions")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "components", comps)

    @property
    def g(self):
        return len(self.components)

    @property
    def dims(self):
        return self.components[0].dims

    @property
    def family(self):
        return "snmix" if isinstance(self.components[0], SkewNormalParams) else "gmm"


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """Posterior class probabilities tau[i, h]."""

    tau: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 2 or np.any(tau < 0) or np.any(tau > 1):
            raise DataError("responsibilities must be an n x g matrix in [0, 1]")
        if not np.allclose(tau.sum(axis=1), 1.0, rtol=0, atol=1e-10):
            raise DataError("responsibility rows must sum to 1")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)


def _component_logpdf(ds, comp):
    if isinstance(comp, SkewNormalParams):
        return sn_loglik_rows(ds, comp)
    return gaussian_loglik_rows(ds, comp)


def _log_joint(ds, params):
    """n x g matrix of log pi_h + log f_h(observed block of row i)."""
    return np.column_stack([_component_logpdf(ds, c) for c in params.components]) + np.log(params.pi)


def _normalise(logj):
    lse = logsumexp(logj, axis=1)
    bad = ~np.isfinite(lse)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"all component densities are zero at row {row}", row=row)
    return np.exp(logj - lse[:, None]), lse


def posterior_class_probs(ds, params):
    """tau[i, h] from the (X, Y) marginal for file-A rows and (X, Z) for file B."""
    tau, _ = _normalise(_log_joint(ds, params))
    return Responsibilities(tau)


def x_logpdf(comp, x):
    """Log density of the X marginal of one component at each row of ``x``."""
    x = np.atleast_2d(x)
    mu, s = comp.mean("X"), comp.block("X", "X")
    if isinstance(comp, SkewNormalParams):
        return _latent_posterior(x, mu, s, comp.skew("X"))[2]
    return mvn_logpdf(x, mu, s)


def x_class_probs(params, x):
    """Class probabilities given X alone: pi_h f_h(x) / sum_k pi_k f_k(x)."""
    logj = np.column_stack([x_logpdf(c, x) for c in params.components]) + np.log(params.pi)
    return _normalise(logj)[0]


def observed_loglik(ds, params):
    """Observed-data log-likelihood for any fitted family."""
    if isinstance(params, MixtureParams):
        rows = logsumexp(_log_joint(ds, params), axis=1)
    else:
        rows = _component_logpdf(ds, params)
    bad = ~np.isfinite(rows)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite log density at row {row}", row=row)
    return float(rows.sum())


# -- M-steps -----------------------------------------------------------------------


class _Degenerate(Exception):
    pass


def _floor(a, report, iteration, h, what):
    out, clipped = floor_eigenvalues(a)
    if clipped:
        report.event(iteration, "eigenvalue_floor", {"component": h, "matrix": what})
    return out


def _check_mass(ds, w, h):
    dx, dy, dz = ds.spec.dims
    tot, ma, mb = w.sum(), w[: ds.n_a].sum(), w[ds.n_a :].sum()
    if tot < sum(ds.spec.dims) + 1 or ma < dx + 2 or mb < dx + 2:
        raise _Degenerate(f"component {h} has responsibility mass {tot:.3g} (A {ma:.3g}, B {mb:.3g})")


def _floored_eta(eta, report, iteration, h):
    x = XBlock(eta.x.mu, _floor(eta.x.sigma, report, iteration, h, "Sigma_XX"), eta.x.delta)
    y = RegressionBlock(eta.y.alpha, eta.y.beta, _floor(eta.y.omega, report, iteration, h, "Omega_Y"), eta.y.lam)
    z = RegressionBlock(eta.z.alpha, eta.z.beta, _floor(eta.z.omega, report, iteration, h, "Omega_Z"), eta.z.lam)
    return EtaParams(x, y, z)


def _gaussian_m_step(ds, w, h, report, iteration):
    _check_mass(ds, w, h)
    n_a = ds.n_a
    try:
        fx = expected_regression(w, np.ones((ds.n, 1)), ds.x, what="X block")
        fy = expected_regression(w[:n_a], np.column_stack([np.ones(n_a), ds.xa]), ds.ya, what="Y regression")
        fz = expected_regression(w[n_a:], np.column_stack([np.ones(ds.n_b), ds.xb]), ds.zb, what="Z regression")
    except NumericalError as exc:
        raise _Degenerate(f"component {h}: {exc}") from exc
    eta = EtaParams(
        XBlock(fx.coef[0], fx.omega),
        RegressionBlock(fy.coef[0], fy.coef[1:].T, fy.omega),
        RegressionBlock(fz.coef[0], fz.coef[1:].T, fz.omega),
    )
    return eta_to_theta(_floored_eta(eta, report, iteration, h))


def _sn_m_step(ds, w, e1, e2, h, report, iteration):
    _check_mass(ds, w, h)
    try:
        eta = sn_m_step_eta(ds, e1, e2, weights=w)
    except NumericalError as exc:
        raise _Degenerate(f"component {h}: {exc}") from exc
    theta = eta_to_theta(_floored_eta(eta, report, iteration, h))
    return guard_delta(theta, report, iteration)


# -- initialisation ------------------------------------------------------------------


def _kmeans_labels(ds, g, rng):
    """k-means++ labels per file, matched across files through the X centroids."""
    sd = np.r_[ds.x.std(axis=0), ds.ya.std(axis=0), ds.zb.std(axis=0)]
    sd = np.where(sd > 0, sd, 1.0)
    dx, dy, _ = ds.spec.dims
    sa = np.r_[sd[:dx], sd[dx : dx + dy]]
    sb = np.r_[sd[:dx], sd[dx + dy :]]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ca, la = kmeans2(ds.a_block / sa, g, minit="++", seed=rng)
        cb, lb = kmeans2(ds.b_block / sb, g, minit="++", seed=rng)
    cost = ((ca[:, None, :dx] - cb[None, :, :dx]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    relabel = np.empty(g, dtype=int)
    relabel[cols] = rows
    return np.r_[la, relabel[lb]]


def _initial_tau(ds, g, strategy, rng):
    if strategy == "random":
        return rng.dirichlet(np.ones(g), size=ds.n)
    labels = _kmeans_labels(ds, g, rng)
    tau = np.zeros((ds.n, g))
    tau[np.arange(ds.n), labels] = 1.0
    return tau


def _weighted_skew_delta(ds, w, comp):
    """delta_j = sign(weighted skewness_j) * 0.5 * sd_j for one component."""
    cols = [(ds.x[:, j], w) for j in range(ds.x.shape[1])]
    cols += [(ds.ya[:, j], w[: ds.n_a]) for j in range(ds.ya.shape[1])]
    cols += [(ds.zb[:, j], w[ds.n_a :]) for j in range(ds.zb.shape[1])]
    sign = []
    for v, ww in cols:
        m = ww @ v / ww.sum()
        sign.append(-1.0 if ww @ (v - m) ** 3 < 0 else 1.0)
    return np.asarray(sign) * 0.5 * np.sqrt(np.diag(comp.sigma))


def _sn_from_gaussian(ds, w, comp):
    b = np.sqrt(2.0 / np.pi)
    delta = _weighted_skew_delta(ds, w, comp)
    sigma = comp.sigma - (1.0 - b * b) * np.outer(delta, delta)
    if np.linalg.eigvalsh(sigma)[0] <= 0:
        sigma = comp.sigma
    start = SkewNormalParams(comp.mu - b * delta, sigma, delta, comp.dims)
    return eta_to_theta(theta_to_eta(start))


# -- EM driver -------------------------------------------------------------------


def _m_step(ds, tau, skew, estep, report, iteration):
    comps = []
    for h in range(tau.shape[1]):
        w = tau[:, h]
        if skew:
            comps.append(_sn_m_step(ds, w, estep[h].e1, estep[h].e2, h, report, iteration))
        else:
            comps.append(_gaussian_m_step(ds, w, h, report, iteration))
    pi = tau.mean(axis=0)
    return MixtureParams(pi / pi.sum(), tuple(comps))


def _e_step(ds, params, skew):
    if skew:
        est = [sn_e_step(ds, c) for c in params.components]
        logf = np.column_stack([e.logpdf for e in est])
    else:
        est = None
        logf = np.column_stack([gaussian_loglik_rows(ds, c) for c in params.components])
    tau, lse = _normalise(logf + np.log(params.pi))
    return tau, float(lse.sum()), est


def _single_run(ds, g, skew, config, rng, report, strategy):
    """One EM run from a fresh start; returns (params, loglik, n_iter, converged)."""
    if g == 1:
        start = default_init(ds) if skew else fit_gaussian(ds)
        params = MixtureParams(np.ones(1), (start,))
    else:
        tau = _initial_tau(ds, g, strategy, rng)
        comps = []
        for h in range(g):
            comp = _gaussian_m_step(ds, tau[:, h], h, report, 0)
            comps.append(_sn_from_gaussian(ds, tau[:, h], comp) if skew else comp)
        pi = tau.mean(axis=0)
        params = MixtureParams(pi / pi.sum(), tuple(comps))
    trace = []
    prev = None
    n_iter = 0
    done = False
    for it in range(config.max_iters + 1):
        try:
            tau, ll, est = _e_step(ds, params, skew)
        except NumericalError as exc:
            raise NumericalError(str(exc), iteration=it, row=getattr(exc, "row", None)) from exc
        if not np.isfinite(ll):
            raise NumericalError("non-finite log-likelihood", iteration=it)
        trace.append(ll)
        if prev is not None and converged(prev, ll, config.tol):
            done = True
            break
        if it == config.max_iters:
            break
        prev = ll
        params = _m_step(ds, tau, skew, est, report, it + 1)
        n_iter = it + 1
    return params, trace, n_iter, done


def _canonical_order(params):
    """Sort components by their mean vectors so output order is deterministic."""
    keys = [tuple(c.mu) for c in params.components]
    order = sorted(range(params.g), key=lambda h: keys[h])
    return MixtureParams(params.pi[order], tuple(params.components[h] for h in order))


def _fit_mixture(ds, g, config, skew):
    _check_rows(ds)
    if int(g) != g or g < 1:
        raise DataError("g must be a positive integer")
    g = int(g)
    config = config or EMConfig()
    strategy = "random" if config.init_strategy == "random" else "kmeans"
    report = FitReport("snmix" if skew else "gmm")
    report.conventions = {
        "pi_update": "mean responsibility",
        "init_strategy": strategy if g > 1 else "single_family",
        "eigenvalue_floor": "1e-8 * trace / dim",
    }
    n_runs = 1 if g == 1 else config.n_restarts
    seeds = np.random.SeedSequence(config.seed).spawn(n_runs)
    best = None
    for r in range(n_runs):
        rng = np.random.default_rng(seeds[r])
        run_report = FitReport(report.family)
        try:
            params, trace, n_iter, done = _single_run(ds, g, skew, config, rng, run_report, strategy)
        except _Degenerate as exc:
            report.restarts.append({"restart": r, "loglik": None, "note": f"degenerate: {exc}"})
            continue
        report.restarts.append(
            {"restart": r, "loglik": trace[-1], "n_iter": n_iter, "converged": done, "note": None}
        )
        for ev in run_report.events:
            report.events.append(dict(ev, restart=r))
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace, n_iter, done, r)
    if best is None:
        raise NumericalError(f"all {n_runs} restarts produced a degenerate component")
    params, trace, n_iter, done, r = best
    report.trace = trace
    report.loglik = trace[-1]
    report.n_iter = n_iter
    report.converged = done
    report.chosen_restart = r
    return _canonical_order(params), report


def fit_gmm_matching(ds, g, config=None):
    """Gaussian-mixture matching by constrained EM; best of ``config.n_restarts``."""
    return _fit_mixture(ds, g, config, skew=False)


def fit_snmix_matching(ds, g, config=None):
    """Skew-normal-mixture matching by constrained EM; best of ``config.n_restarts``."""
    return _fit_mixture(ds, g, config, skew=True)


# -- serialisation and comparison ------------------------------------------------------


def model_to_dict(model, spec=None):
    if not isinstance(model, MixtureParams):
        return params_to_dict(model, spec)
    out = {"family": model.family, "g": model.g, "pi": model.pi.tolist(), "dims": list(model.dims)}
    if spec is not None:
        out["columns"] = spec.to_dict()
    out["components"] = [params_to_dict(c) for c in model.components]
    return out


def model_from_dict(d):
    try:
        family = d["family"]
        if family in FAMILIES:
            comps = tuple(params_from_dict(c) for c in d["components"])
            if int(d.get("g", len(comps))) != len(comps):
                raise DataError("model g does not match the number of components")
            return MixtureParams(np.asarray(d["pi"], dtype=float), comps)
        if family in ("gaussian", "skew_normal"):
            return params_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed model description: {exc}") from exc
    raise DataError(f"unknown model family {family!r}")


def align_components(reference, fitted):
    """Permutation of ``fitted`` components best matching ``reference`` by mean distance.

    Returns ``perm`` with ``fitted.components[perm[h]]`` aligned to reference h.
    Used for evaluation only.
    """
    ref = np.array([c.mu for c in reference.components])
    fit = np.array([c.mu for c in fitted.components])
    cost = ((ref[:, None, :] - fit[None, :, :]) ** 2).sum(axis=2)
    _, cols = linear_sum_assignment(cost)
    return cols
