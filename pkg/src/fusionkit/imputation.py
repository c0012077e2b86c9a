"""Nearest-neighbour hot-deck and model-based imputation of the missing blocks.

Also provides exact samplers of the large-sample distribution produced by
nearest-neighbour matching, f(x) f(y|x) f(z|x), for the skew-normal and
mixture families, and the correlation summaries used to compare methods.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.ndimage import gaussian_filter, maximum_filter
from scipy.spatial import cKDTree

from .data_model import NN, PARAMETRIC, ImputedDataset
from .errors import DataError, NumericalError
from .mixtures import MixtureParams, posterior_class_probs, x_class_probs, x_logpdf
from .params import (
    GaussianParams,
    SkewNormalParams,
    constraint_residual,
    marginal_index,
    theta_to_eta,
)
from .skew_normal import _latent_posterior, _mvn_draw, conditional_sn
from .truncnorm import tn_moments, tn_sample_array

__all__ = [
    "NNConfig",
    "ImputationRequest",
    "nearest_donors",
    "impute_nn",
    "impute_parametric",
    "impute",
    "asymptotic_nn_sample_sn",
    "asymptotic_nn_sample_mixture",
    "mismatch_probability",
    "Summary",
    "summarize",
    "yz_grid",
    "count_local_maxima",
    "row_rngs",
]

#: Rows per independent RNG stream in parametric imputation.
CHUNK = 1024
DRAW_MODES = ("posterior_draw", "conditional_mean")
_K_CANDIDATES = 8
_TIE_RTOL = 1e-9


# -- nearest neighbour -------------------------------------------------------------


@dataclass(frozen=True)
class NNConfig:
    """Exact nearest-neighbour search on the X block.

    ``search`` is ``"tree"`` (k-d tree candidates, exact re-ranking) or
    ``"brute"`` (full scan); both return identical donors. ``standardize``
    rescales X columns by their pooled sd before measuring distance.
    """

    search: str = "tree"
    standardize: bool = False
    metric: str = field(default="euclidean", init=False)
    tie_break: str = field(default="lowest_index", init=False)

    def __post_init__(self):
        if self.search not in ("tree", "brute"):
            raise DataError(f"unknown NN search {self.search!r}")


def _sqdist(q, d):
    """Squared distance accumulated column by column (identical in both search paths)."""
    acc = np.zeros(np.broadcast_shapes(q.shape, d.shape)[:-1])
    for j in range(q.shape[-1]):
        diff = q[..., j] - d[..., j]
        acc += diff * diff
    return acc


def _brute(queries, donors):
    out = np.empty(len(queries), dtype=np.int64)
    step = max(1, 4_000_000 // max(len(donors), 1))
    for s in range(0, len(queries), step):
        d2 = _sqdist(queries[s : s + step, None, :], donors[None, :, :])
        out[s : s + step] = np.argmin(d2, axis=1)  # first minimum = lowest index
    return out


def _tree(queries, donors):
    nd = len(donors)
    tree = cKDTree(donors)
    k = min(_K_CANDIDATES, nd)
    dist, idx = tree.query(queries, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    thr = dist[:, 0] * (1.0 + _TIE_RTOL) + 1e-300
    within = dist <= thr[:, None]
    d2 = np.where(within, _sqdist(queries[:, None, :], donors[idx]), np.inf)
    best = d2.min(axis=1)
    out = np.where(d2 == best[:, None], idx, nd).min(axis=1)
    if k < nd:
        # candidate lists that may be truncated by near-ties beyond k
        for i in np.flatnonzero(within[:, -1]):
            cand = np.asarray(sorted(tree.query_ball_point(queries[i], thr[i])), dtype=np.int64)
            cd = _sqdist(queries[i][None, :], donors[cand])
            out[i] = cand[np.flatnonzero(cd == cd.min())[0]]
    return out


def nearest_donors(queries, donors, search="tree"):
    """Index of the nearest donor row for each query (ties: lowest index)."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    donors = np.atleast_2d(np.asarray(donors, dtype=float))
    if len(donors) == 0:
        raise DataError("empty donor pool")
    return _tree(queries, donors) if search == "tree" else _brute(queries, donors)


def impute_nn(ds, cfg=None):
    """Hot-deck: each row takes the missing block of its nearest X-neighbour in the other file."""
    cfg = cfg or NNConfig()
    xa, xb = ds.xa, ds.xb
    if cfg.standardize:
        sd = ds.x.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        xa, xb = xa / sd, xb / sd
    da = nearest_donors(xa, xb, cfg.search)  # B-row indices for A recipients
    db = nearest_donors(xb, xa, cfg.search)  # A-row indices for B recipients
    values = np.array(ds.values)
    values[: ds.n_a, ds.spec.sz] = ds.zb[da]
    values[ds.n_a :, ds.spec.sy] = ds.ya[db]
    donor = np.r_[da + ds.n_a, db]
    meta = {"method": "nn", "search": cfg.search, "standardize": cfg.standardize}
    return ImputedDataset(values, ds.n_a, ds.n_b, ds.spec, (NN,) * ds.n, donor, meta=meta)


# -- parametric ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImputationRequest:
    """What to impute with: ``model`` is a fitted bundle or the string ``"nn"``."""

    model: object
    seed: int | None = None
    draw_mode: str = "posterior_draw"
    hard_assign: bool = False
    nn: NNConfig = field(default_factory=NNConfig)

    def __post_init__(self):
        if self.draw_mode not in DRAW_MODES:
            raise DataError(f"draw_mode must be one of {DRAW_MODES}")
        needs_rng = self.model != "nn" and (
            self.draw_mode == "posterior_draw" or (isinstance(self.model, MixtureParams) and not self.hard_assign)
        )
        if needs_rng and self.seed is None:
            raise DataError("a seed is required for sampled imputations")


def row_rngs(seed, n):
    """Per-chunk generators: rows [k*CHUNK, (k+1)*CHUNK) share stream k."""
    for k, s in enumerate(range(0, n, CHUNK)):
        yield slice(s, min(s + CHUNK, n)), np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def _as_sn(comp):
    if isinstance(comp, SkewNormalParams):
        return comp
    return SkewNormalParams(comp.mu, comp.sigma, np.zeros(comp.d), comp.dims)


def _component_draw(comp, tag, data, x, rng, mode):
    """Missing block for rows of one file under one component.

    ``tag`` names the observed file (A: fill Z, B: fill Y). ``data`` is the
    observed block, ``x`` its X columns.
    """
    eta = theta_to_eta(comp)
    reg = eta.z if tag == "A" else eta.y
    mean = reg.mean(x)
    skewed = isinstance(comp, SkewNormalParams)
    if skewed:
        mu, cov, delta = comp.marginal(tag)
        m, c, _ = _latent_posterior(data, mu, cov, delta)
    if mode == "conditional_mean":
        if skewed:
            e1, _ = tn_moments(m, np.full_like(m, c))
            mean = mean + np.outer(e1, reg.lam)
        return mean
    if skewed:
        u = tn_sample_array(m, c, 0.0, rng)
        mean = mean + np.outer(u, reg.lam)
    return mean + _mvn_draw(rng, len(x), reg.omega)


def _check_model(ds, model):
    comps = model.components if isinstance(model, MixtureParams) else (model,)
    if not isinstance(comps[0], (GaussianParams, SkewNormalParams)):
        raise DataError("unsupported model type")
    if comps[0].dims != ds.spec.dims:
        raise DataError(f"model blocks {comps[0].dims} do not match data blocks {ds.spec.dims}")
    for h, c in enumerate(comps):
        r = constraint_residual(c)
        if not r <= 1e-8:
            raise DataError(f"component {h} violates the identification restriction (residual {r:.3g})")


def impute_parametric(ds, model, request):
    """Fill each row's missing block from the fitted conditional given its observed block."""
    _check_model(ds, model)
    mode = request.draw_mode
    values = np.array(ds.values)
    comps = model.components if isinstance(model, MixtureParams) else (model,)
    g = len(comps)
    if g > 1:
        tau = posterior_class_probs(ds, model).tau
    else:
        tau = np.ones((ds.n, 1))
    component = np.full(ds.n, -1, dtype=np.int64)
    seed = 0 if request.seed is None else request.seed
    for rows, rng in row_rngs(seed, ds.n):
        idx = np.arange(ds.n)[rows]
        t = tau[rows]
        if g == 1:
            lab = np.zeros(len(idx), dtype=np.int64)
        elif request.hard_assign:
            lab = np.argmax(t, axis=1)
        elif mode == "conditional_mean":
            lab = None
        else:
            cum = np.cumsum(t, axis=1)
            lab = np.minimum((rng.random(len(idx))[:, None] > cum).sum(axis=1), g - 1)
        if lab is not None and g > 1:
            component[idx] = lab
        for tag, sel in (("A", idx < ds.n_a), ("B", idx >= ds.n_a)):
            if not sel.any():
                continue
            rid = idx[sel]
            miss = ds.spec.sz if tag == "A" else ds.spec.sy
            obs = ds.values[rid][:, marginal_index(ds.spec.dims, tag)]
            x = obs[:, : ds.spec.sx.stop]
            if lab is None:
                out = sum(
                    t[sel, h][:, None] * _component_draw(comps[h], tag, obs, x, rng, mode) for h in range(g)
                )
            else:
                out = np.empty((len(rid), miss.stop - miss.start))
                ls = lab[sel]
                for h in range(g):
                    on = ls == h
                    if on.any():
                        out[on] = _component_draw(comps[h], tag, obs[on], x[on], rng, mode)
            values[rid, miss] = out
    meta = {"method": "parametric", "family": getattr(model, "family", None), "draw_mode": mode,
            "hard_assign": request.hard_assign, "seed": request.seed}
    return ImputedDataset(
        values, ds.n_a, ds.n_b, ds.spec, (PARAMETRIC,) * ds.n, np.full(ds.n, -1), component, meta
    )


def impute(ds, request):
    if isinstance(request.model, str):
        if request.model != "nn":
            raise DataError(f"unknown imputation method {request.model!r}")
        return impute_nn(ds, request.nn)
    return impute_parametric(ds, request.model, request)


# -- asymptotic nearest-neighbour distributions ----------------------------------------


def _conditional_block_draw(cond, which, rng):
    """One draw of Y (``which='Y'``) or Z given X, with its own latent U."""
    tau = np.atleast_1d(cond.tau_x)
    u = tn_sample_array(tau, np.sqrt(cond.gamma_x), 0.0, rng)
    if which == "Y":
        mean, delta, cov = np.atleast_2d(cond.mu_y), cond.delta_y, cond.sigma_yy
    else:
        mean, delta, cov = np.atleast_2d(cond.mu_z), cond.delta_z, cond.sigma_zz
    return mean + np.outer(u, delta) + _mvn_draw(rng, len(tau), cov)


def asymptotic_nn_sample_sn(params, n, seed):
    """Draws from f(x) f(y|x) f(z|x) for a skew-normal (or Gaussian) model.

    Y and Z each get an independent latent U ~ TN(tau_X, gamma_X, 0) given X.
    """
    rng = np.random.default_rng(seed)
    p = _as_sn(params)
    u0 = tn_sample_array(np.zeros(n), 1.0, 0.0, rng)
    x = p.mean("X") + np.outer(u0, p.skew("X")) + _mvn_draw(rng, n, p.block("X", "X"))
    cond = conditional_sn(p, x)
    y = _conditional_block_draw(cond, "Y", rng)
    z = _conditional_block_draw(cond, "Z", rng)
    return np.hstack([x, y, z])


def asymptotic_nn_sample_mixture(params, n, seed, return_latent=False):
    """Draws from f(x) f(y|x) f(z|x) for a mixture.

    X comes from the mixture X marginal; S and T are drawn independently from
    the class probabilities given X; Y follows component S and Z component T.
    With ``return_latent`` also returns (C, S, T), C being the component that
    generated X.
    """
    rng = np.random.default_rng(seed)
    comps = [_as_sn(c) for c in params.components]
    g = len(comps)
    dx = comps[0].dims[0]
    lab = rng.choice(g, size=n, p=params.pi)
    x = np.empty((n, dx))
    for h in range(g):
        on = lab == h
        k = int(on.sum())
        if k:
            c = comps[h]
            u0 = tn_sample_array(np.zeros(k), 1.0, 0.0, rng)
            x[on] = c.mean("X") + np.outer(u0, c.skew("X")) + _mvn_draw(rng, k, c.block("X", "X"))
    tau = x_class_probs(params, x)
    cum = np.cumsum(tau, axis=1)
    s = np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), g - 1)
    t = np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), g - 1)
    dy, dz = comps[0].dims[1:]
    y = np.empty((n, dy))
    z = np.empty((n, dz))
    for h in range(g):
        for out, sel, which in ((y, s == h, "Y"), (z, t == h, "Z")):
            if sel.any():
                out[sel] = _conditional_block_draw(conditional_sn(comps[h], x[sel]), which, rng)
    w = np.hstack([x, y, z])
    return (w, (lab, s, t)) if return_latent else w


def mismatch_probability(params, n_mc=200_000, seed=0):
    """P(S != T) = E_X[1 - sum_h tau_h(X)^2] for the mixture's X marginal.

    Adaptive quadrature when X is scalar; Monte Carlo with ``n_mc`` draws
    otherwise.
    """
    if params.dims[0] == 1:
        def f(v):
            x = np.array([[v]])
            dens = sum(p * np.exp(x_logpdf(c, x)[0]) for p, c in zip(params.pi, params.components))
            tau = x_class_probs(params, x)[0]
            return dens * (1.0 - tau @ tau)

        centres = [float(c.mean("X")[0]) for c in params.components]
        spread = max(float(np.sqrt(c.block("X", "X")[0, 0]) + np.abs(_as_sn(c).skew("X")[0]))
                     for c in params.components)
        lo, hi = min(centres) - 40 * spread, max(centres) + 40 * spread
        val, _ = integrate.quad(f, lo, hi, points=sorted(centres), limit=200, epsabs=1e-12)
        return float(val)
    w, _ = asymptotic_nn_sample_mixture(params, n_mc, seed, return_latent=True)
    tau = x_class_probs(params, w[:, : params.dims[0]])
    return float(np.mean(1.0 - (tau * tau).sum(axis=1)))


# -- summaries -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Summary:
    """Correlation table plus block means and covariances of a completed table."""

    rows: list
    means: dict
    covariances: dict

    def write_csv(self, path):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "y", "z", "rho_yz", "n"])
            for r in self.rows:
                w.writerow([r["group"], r["y"], r["z"], format(r["rho_yz"], ".17g"), r["n"]])
        return path

    def to_dict(self):
        return {"rows": self.rows, "means": self.means, "covariances": self.covariances}

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return Path(path)


def _pearson(a, b):
    ac = a - a.mean()
    bc = b - b.mean()
    den = np.sqrt((ac @ ac) * (bc @ bc))
    if den == 0:
        raise NumericalError("zero variance column in correlation")
    return float(np.clip((ac @ bc) / den, -1.0, 1.0))


def summarize(imputed, labels=None):
    """rho_YZ (every Y column against every Z column) overall and per label group."""
    spec = imputed.spec
    vals = imputed.values
    groups = [("all", np.ones(imputed.n, dtype=bool))]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (imputed.n,):
            raise DataError("labels must have one entry per row")
        for lab in sorted(set(labels.tolist()), key=str):
            groups.append((str(lab), labels == lab))
    rows = []
    for name, sel in groups:
        k = int(sel.sum())
        if k < 3:
            raise DataError(f"group {name!r} has {k} rows; at least 3 are needed")
        for j, yc in enumerate(spec.y):
            for l, zc in enumerate(spec.z):
                rho = _pearson(vals[sel, spec.sy.start + j], vals[sel, spec.sz.start + l])
                rows.append({"group": name, "y": yc, "z": zc, "rho_yz": rho, "n": k})
    means = {b: vals[:, s].mean(axis=0).tolist() for b, s in zip("XYZ", (spec.sx, spec.sy, spec.sz))}
    cov = np.atleast_2d(np.cov(vals, rowvar=False))
    covs = {}
    for a, sa in zip("XYZ", (spec.sx, spec.sy, spec.sz)):
        for b, sb in zip("XYZ", (spec.sx, spec.sy, spec.sz)):
            covs[f"{a}{b}"] = cov[sa, sb].tolist()
    return Summary(rows, means, covs)


def yz_grid(y, z, bins=None, ranges=None):
    """Normalised 2-D histogram of (y, z): (density, y_centres, z_centres).

    The default bin count per axis is sqrt(n) clipped to [10, 60].
    """
    y = np.asarray(y, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if bins is None:
        bins = int(np.clip(np.sqrt(len(y)), 10, 60))
    if ranges is None:
        ranges = [np.quantile(y, [0.001, 0.999]), np.quantile(z, [0.001, 0.999])]
        ranges = [(lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo)) for lo, hi in ranges]
    h, ey, ez = np.histogram2d(y, z, bins=bins, range=ranges, density=True)
    return h, 0.5 * (ey[1:] + ey[:-1]), 0.5 * (ez[1:] + ez[:-1])


def count_local_maxima(grid, smooth=1.0, min_rel_height=0.05):
    """Number of strict-neighbourhood peaks of a lightly smoothed grid above a height floor."""
    s = gaussian_filter(np.asarray(grid, dtype=float), smooth, mode="constant")
    peak = (s == maximum_filter(s, size=3, mode="constant")) & (s > min_rel_height * s.max())
    return int(peak.sum())


def write_grid_csv(path, grid, yc, zc):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "z", "density"])
        for i, yv in enumerate(yc):
            for j, zv in enumerate(zc):
                w.writerow([format(yv, ".17g"), format(zv, ".17g"), format(grid[i, j], ".17g")])
    return path
