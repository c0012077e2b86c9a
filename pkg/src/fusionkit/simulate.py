"""Seeded replication harness comparing nearest-neighbour and parametric matching.

Each replication draws a fresh pair of files from a known generator, fits the
chosen family, imputes with every requested method and records long-format
statistics ``(replication, method, statistic, value)``.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import BlockSpec, stack
from .em import EMConfig
from .errors import DataError, FusionError
from .gaussian import fit_gaussian
from .imputation import (
    ImputationRequest,
    asymptotic_nn_sample_mixture,
    asymptotic_nn_sample_sn,
    impute_nn,
    impute_parametric,
    mismatch_probability,
    summarize,
)
from .mixtures import MixtureParams, align_components, fit_gmm_matching, fit_snmix_matching
from .params import GaussianParams, SkewNormalParams
from .skew_normal import _mvn_draw, fit_sn_em
from .truncnorm import tn_sample_array

__all__ = [
    "SimulationScenario",
    "BUILTIN_SCENARIOS",
    "builtin_scenario",
    "generator_from_dict",
    "sample_generator",
    "true_rho_yz",
    "run_scenario",
    "write_results",
    "RESULT_COLUMNS",
]

RESULT_COLUMNS = ("replication", "method", "statistic", "value")
METHODS = ("nn", "parametric")
FIT_FAMILIES = ("gaussian", "skew_normal", "gmm", "snmix")


@dataclass(frozen=True, eq=False)
class SimulationScenario:
    name: str
    generator: object
    n_a: int
    n_b: int
    replications: int = 20
    methods: tuple = METHODS
    fit_family: str = "skew_normal"
    g: int = 1
    draw_mode: str = "posterior_draw"
    em: EMConfig = field(default_factory=EMConfig)

    def __post_init__(self):
        if self.replications < 1:
            raise DataError("replication count must be >= 1")
        if self.n_a < 1 or self.n_b < 1:
            raise DataError("n_a and n_b must be positive")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise DataError(f"methods must be a non-empty subset of {METHODS}")
        if self.fit_family not in FIT_FAMILIES:
            raise DataError(f"fit family must be one of {FIT_FAMILIES}")


def _sn515():
    return SkewNormalParams(np.zeros(3), np.eye(3), np.array([1.0, 3.0, 5.0]), (1, 1, 1))


def _gmm_overlap():
    comps = tuple(
        GaussianParams(np.array(m), 0.01 * np.eye(3), (1, 1, 1)) for m in ([-0.1, 0.0, 0.0], [0.1, 1.0, 1.0])
    )
    return MixtureParams(np.array([0.5, 0.5]), comps)


BUILTIN_SCENARIOS = {
    "sn-515": dict(generator=_sn515, n_a=500, n_b=500, replications=20, fit_family="skew_normal", g=1),
    "gmm-overlap": dict(generator=_gmm_overlap, n_a=500, n_b=500, replications=20, fit_family="gmm", g=2),
}


def builtin_scenario(name, **overrides):
    if name not in BUILTIN_SCENARIOS:
        raise DataError(f"unknown scenario {name!r}; builtin: {sorted(BUILTIN_SCENARIOS)}")
    kw = dict(BUILTIN_SCENARIOS[name])
    kw["generator"] = kw["generator"]()
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return SimulationScenario(name=name, **kw)


def generator_from_dict(d):
    """Generator parameters from full (mu, sigma[, delta]) arrays, or a mixture thereof."""
    try:
        family = d["family"]
        if family in ("gmm", "snmix"):
            sub = "gaussian" if family == "gmm" else "skew_normal"
            comps = tuple(generator_from_dict(dict(c, family=sub, dims=d["dims"])) for c in d["components"])
            return MixtureParams(np.asarray(d["pi"], dtype=float), comps)
        dims = tuple(int(v) for v in d["dims"])
        mu = np.asarray(d["mu"], dtype=float)
        sigma = np.asarray(d["sigma"], dtype=float)
        if family == "gaussian":
            return GaussianParams(mu, sigma, dims)
        if family == "skew_normal":
            return SkewNormalParams(mu, sigma, np.asarray(d["delta"], dtype=float), dims)
    except KeyError as exc:
        raise DataError(f"generator is missing field {exc}") from exc
    raise DataError(f"unknown generator family {family!r}")


def _draw_component(comp, n, rng):
    v = _mvn_draw(rng, n, comp.sigma)
    if isinstance(comp, SkewNormalParams):
        u = tn_sample_array(np.zeros(n), 1.0, 0.0, rng)
        return comp.mu + np.outer(u, comp.delta) + v
    return comp.mu + v


def sample_generator(gen, n, rng):
    """n joint draws and their component labels (all zero for a single family)."""
    if isinstance(gen, MixtureParams):
        lab = rng.choice(gen.g, size=n, p=gen.pi)
        w = np.empty((n, sum(gen.dims)))
        for h, c in enumerate(gen.components):
            on = lab == h
            if on.any():
                w[on] = _draw_component(c, int(on.sum()), rng)
        return w, lab
    return _draw_component(gen, n, rng), np.zeros(n, dtype=np.int64)


def _moments(gen):
    if isinstance(gen, SkewNormalParams):
        return gen.moments()
    if isinstance(gen, GaussianParams):
        return gen.mu, gen.sigma
    parts = [_moments(c) for c in gen.components]
    mean = sum(p * m for p, (m, _) in zip(gen.pi, parts))
    cov = sum(p * (s + np.outer(m - mean, m - mean)) for p, (m, s) in zip(gen.pi, parts))
    return mean, cov


def true_rho_yz(gen):
    """Correlation of the first Y and first Z coordinates under the generator."""
    _, cov = _moments(gen)
    dx, dy, _ = gen.dims
    iy, iz = dx, dx + dy
    return float(cov[iy, iz] / np.sqrt(cov[iy, iy] * cov[iz, iz]))


def _fit(ds, sc):
    if sc.fit_family == "gaussian":
        return fit_gaussian(ds)
    if sc.fit_family == "skew_normal":
        return fit_sn_em(ds, config=sc.em)[0]
    fit = fit_gmm_matching if sc.fit_family == "gmm" else fit_snmix_matching
    return fit(ds, sc.g, sc.em)[0]


def _cross_rate(imputed, labels, method, model, gen):
    """Share of rows whose imputed block came from another true component."""
    if method == "nn":
        return float(np.mean(labels[imputed.donor] != labels))
    if not isinstance(model, MixtureParams) or model.g != gen.g:
        return None
    perm = align_components(gen, model)  # fitted perm[h] <-> true h
    to_true = np.empty(model.g, dtype=np.int64)
    to_true[perm] = np.arange(model.g)
    return float(np.mean(to_true[imputed.component] != labels))


_STAGE_ERRORS = (FusionError, ArithmeticError, ValueError, np.linalg.LinAlgError)


def _error_dict(exc):
    return exc.to_dict() if isinstance(exc, FusionError) else {"error": type(exc).__name__, "message": str(exc)}


def _run_method(method, ds, sc, impute_ss, fitted):
    if method == "nn":
        return impute_nn(ds), None
    model = fitted["model"]
    seed = int(impute_ss.generate_state(1)[0])
    return impute_parametric(ds, model, ImputationRequest(model, seed=seed, draw_mode=sc.draw_mode)), model


def _replication(sc, r, seq, want_samples):
    """One generate/split/fit/impute/summarize cycle; a failing method does not stop the others."""
    spec = BlockSpec.default(*sc.generator.dims)
    rows, errors, samples = [], [], {}
    data_ss, impute_ss = seq.spawn(2)
    gen = sc.generator
    w, labels = sample_generator(gen, sc.n_a + sc.n_b, np.random.default_rng(data_ss))
    a = np.hstack([w[: sc.n_a, spec.sx], w[: sc.n_a, spec.sy]])
    b = np.hstack([w[sc.n_a :, spec.sx], w[sc.n_a :, spec.sz]])
    ds = stack(a, b, spec)
    rows.append((r, "truth", "rho_yz", true_rho_yz(gen)))
    fitted = {}
    for method in sc.methods:
        stage = "fit" if method == "parametric" and "model" not in fitted else f"impute:{method}"
        try:
            if stage == "fit":
                fitted["model"] = _fit(ds, sc)
                stage = f"impute:{method}"
            imp, model = _run_method(method, ds, sc, impute_ss, fitted)
            stage = f"summarize:{method}"
            for row in summarize(imp).rows:
                stat = "rho_yz" if (row["y"], row["z"]) == (spec.y[0], spec.z[0]) else f"rho_{row['y']}_{row['z']}"
                rows.append((r, method, stat, row["rho_yz"]))
            if isinstance(gen, MixtureParams):
                rate = _cross_rate(imp, labels, method, model, gen)
                if rate is not None:
                    rows.append((r, method, "cross_component_rate", rate))
            if want_samples:
                samples[method] = imp.values[:, [spec.sy.start, spec.sz.start]]
        except _STAGE_ERRORS as exc:
            errors.append(dict(_error_dict(exc), replication=r, stage=stage))
    return rows, errors, samples


def _replication_task(args):
    return _replication(*args)


def run_scenario(sc, seed, samples=None, workers=1):
    """Run every replication; returns (result rows, per-replication errors).

    Replication r draws from ``SeedSequence(seed).spawn(...)[r]``, so output is
    identical for any ``workers``; with ``workers > 1`` replications run in a
    process pool. ``samples``, if a dict, receives replication 0's imputed
    (Y, Z) pairs per method plus draws from the large-sample NN distribution
    of the generator.
    """
    spec = BlockSpec.default(*sc.generator.dims)
    rep_seqs = np.random.SeedSequence(seed).spawn(sc.replications)
    tasks = [(sc, r, seq, samples is not None and r == 0) for r, seq in enumerate(rep_seqs)]
    if workers > 1 and sc.replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication_task, tasks))
    else:
        results = [_replication_task(t) for t in tasks]
    rows, errors = [], []
    for rr, errs, smp in results:
        rows.extend(rr)
        errors.extend(errs)
        if samples is not None:
            samples.update(smp)
    stage = "oracle"
    try:
        if isinstance(sc.generator, MixtureParams):
            p = mismatch_probability(sc.generator)
            rows.extend((r, "oracle", "mismatch_probability", p) for r in range(sc.replications))
        if samples is not None:
            stage = "asymptotic_nn"
            n = sc.n_a + sc.n_b
            asym_seed = np.random.SeedSequence(seed, spawn_key=(sc.replications,))
            if isinstance(sc.generator, MixtureParams):
                w = asymptotic_nn_sample_mixture(sc.generator, n, asym_seed)
            else:
                w = asymptotic_nn_sample_sn(sc.generator, n, asym_seed)
            samples["asymptotic_nn"] = w[:, [spec.sy.start, spec.sz.start]]
    except _STAGE_ERRORS as exc:
        errors.append(dict(_error_dict(exc), replication=None, stage=stage))
    rows.sort(key=lambda t: (t[0], _method_order(t[1]), t[2]))
    return rows, errors


def _method_order(m):
    order = ("truth", "oracle", "nn", "parametric")
    return order.index(m) if m in order else len(order)


def write_results(path, rows):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r, method, stat, value in rows:
            w.writerow([r, method, stat, format(value, ".17g")])
    return path


def write_samples(path, samples):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "y", "z"])
        for method in sorted(samples):
            for y, z in samples[method]:
                w.writerow([method, format(y, ".17g"), format(z, ".17g")])
    return path


def write_errors(path, errors):
    Path(path).write_text(json.dumps(errors, indent=2) + "\n", encoding="utf-8")
    return Path(path)
