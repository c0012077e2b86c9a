"""Command-line front end: ``fusionkit fit|impute|simulate|report``.

Every subcommand reads a TOML config (``--config``); ``--seed`` and ``--out``
override the config's ``seed`` and ``out`` keys. Exit codes: 0 success,
2 invalid input, 3 numerical failure. Failures print a JSON object to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data_model import BlockSpec, emit_csv, load_column, load_csv, stack
from .em import EMConfig
from .errors import DataError, NumericalError
from .gaussian import fit_gaussian
from .imputation import (
    ImputationRequest,
    NNConfig,
    count_local_maxima,
    impute,
    summarize,
    write_grid_csv,
    yz_grid,
)
from .mixtures import fit_gmm_matching, fit_snmix_matching, model_from_dict, model_to_dict
from .simulate import (
    RESULT_COLUMNS,
    SimulationScenario,
    builtin_scenario,
    generator_from_dict,
    run_scenario,
    write_errors,
    write_results,
    write_samples,
)
from .skew_normal import fit_sn_em

EXIT_OK, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3
FAMILIES = ("gaussian", "skew_normal", "gmm", "snmix")


@dataclass
class RunConfig:
    """Parsed config: raw TOML sections plus resolved seed and output directory."""

    command: str
    raw: dict
    base: Path
    out: Path
    seed: int | None = None
    spec: BlockSpec = field(default_factory=BlockSpec.default)

    def section(self, name):
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise DataError(f"config section [{name}] must be a table")
        return sec

    def path(self, value, what):
        if not isinstance(value, str) or not value:
            raise DataError(f"config: {what} must be a file path")
        p = Path(value)
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise DataError(f"config: {what} {str(p)!r} does not exist")
        return p

    def em(self):
        try:
            return EMConfig.from_dict(dict(self.section("em"), **({"seed": self.seed} if self.seed is not None else {})))
        except TypeError as exc:
            raise DataError(f"config [em]: {exc}") from exc

    def require_seed(self):
        if self.seed is None:
            raise DataError(f"'{self.command}' needs a seed (config key 'seed' or --seed)")
        return self.seed


def load_config(command, config_path, seed=None, out=None):
    path = Path(config_path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"invalid TOML in {path}: {exc}") from exc
    base = path.resolve().parent
    cfg_seed = raw.get("seed")
    if seed is None and cfg_seed is not None:
        if not isinstance(cfg_seed, int) or isinstance(cfg_seed, bool) or cfg_seed < 0:
            raise DataError("config: seed must be a non-negative integer")
        seed = cfg_seed
    out_dir = Path(out) if out is not None else base / raw.get("out", "fusionkit-out")
    cfg = RunConfig(command, raw, base, out_dir, seed)
    cols = raw.get("columns")
    if cols is not None:
        try:
            cfg.spec = BlockSpec.from_dict(cols)
        except (KeyError, TypeError) as exc:
            raise DataError(f"config [columns]: {exc}") from exc
    return cfg


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _load_data(cfg):
    sec = cfg.section("data")
    ignore = tuple(sec.get("ignore", ()))
    a = load_csv(cfg.path(sec.get("a"), "data.a"), cfg.spec, "A", ignore)
    b = load_csv(cfg.path(sec.get("b"), "data.b"), cfg.spec, "B", ignore)
    return stack(a, b, cfg.spec)


# -- subcommands -------------------------------------------------------------------


def cmd_fit(cfg):
    sec = cfg.section("fit")
    family = sec.get("family", "gaussian")
    if family not in FAMILIES:
        raise DataError(f"fit.family must be one of {FAMILIES}")
    ds = _load_data(cfg)
    em = cfg.em()
    if family == "gaussian":
        model, report = fit_gaussian(ds), {"family": "gaussian", "closed_form": True}
    elif family == "skew_normal":
        model, rep = fit_sn_em(ds, config=em)
        report = rep.to_dict()
    else:
        g = sec.get("g", 2)
        if not isinstance(g, int) or g < 1:
            raise DataError("fit.g must be a positive integer")
        fit = fit_gmm_matching if family == "gmm" else fit_snmix_matching
        model, rep = fit(ds, g, em)
        report = rep.to_dict()
    if family != "gaussian":
        report["config"] = em.to_dict()
    _write_json(cfg.out / "model.json", model_to_dict(model, cfg.spec))
    _write_json(cfg.out / "fit_report.json", report)
    return [cfg.out / "model.json", cfg.out / "fit_report.json"]


def cmd_impute(cfg):
    sec = cfg.section("impute")
    seed = cfg.require_seed()
    method = sec.get("method", "parametric")
    ds = _load_data(cfg)
    nn = NNConfig(sec.get("search", "tree"), bool(sec.get("standardize", False)))
    if method == "nn":
        model = "nn"
    elif method == "parametric":
        mpath = cfg.path(sec.get("model"), "impute.model")
        try:
            mdict = json.loads(mpath.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{mpath}: invalid JSON: {exc}") from exc
        model = model_from_dict(mdict)
        if "columns" in mdict and BlockSpec.from_dict(mdict["columns"]) != cfg.spec:
            raise DataError("model columns do not match the configured columns")
    else:
        raise DataError("impute.method must be 'nn' or 'parametric'")
    req = ImputationRequest(
        model, seed, sec.get("draw_mode", "posterior_draw"), bool(sec.get("hard_assign", False)), nn
    )
    imp = impute(ds, req)
    out_csv, side = emit_csv(imp, cfg.out / "imputed.csv")
    labels = None
    if "labels" in sec:
        lab = sec["labels"]
        sec_data = cfg.section("data")
        labels = np.array(
            load_column(cfg.path(sec_data.get("a"), "data.a"), lab) + load_column(cfg.path(sec_data.get("b"), "data.b"), lab),
            dtype=object,
        )
    summ = summarize(imp, labels)
    summ.write_csv(cfg.out / "summary.csv")
    summ.write_json(cfg.out / "summary.json")
    return [out_csv, side, cfg.out / "summary.csv", cfg.out / "summary.json"]


def _scenario(cfg):
    sec = cfg.section("simulate")
    em = cfg.em()
    common = {
        "replications": sec.get("replications"),
        "n_a": sec.get("n_a"),
        "n_b": sec.get("n_b"),
        "fit_family": sec.get("fit_family"),
        "g": sec.get("g"),
        "draw_mode": sec.get("draw_mode"),
        "methods": tuple(sec["methods"]) if "methods" in sec else None,
        "em": em,
    }
    name = sec.get("scenario")
    try:
        if name is not None:
            return builtin_scenario(name, **common)
        if "generator" not in sec:
            raise DataError("[simulate] needs 'scenario' or a [simulate.generator] table")
        kw = {k: v for k, v in common.items() if v is not None}
        for k in ("n_a", "n_b"):
            if k not in kw:
                raise DataError(f"[simulate] needs {k} for a custom generator")
        return SimulationScenario(name=sec.get("name", "custom"), generator=generator_from_dict(sec["generator"]), **kw)
    except TypeError as exc:
        raise DataError(f"[simulate]: {exc}") from exc


def cmd_simulate(cfg):
    seed = cfg.require_seed()
    sc = _scenario(cfg)
    workers = cfg.section("simulate").get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise DataError("simulate.workers must be a positive integer")
    samples = {}
    rows, errors = run_scenario(sc, seed, samples, workers=workers)
    cfg.out.mkdir(parents=True, exist_ok=True)
    paths = [write_results(cfg.out / "results.csv", rows), write_errors(cfg.out / "errors.json", errors)]
    paths.append(write_samples(cfg.out / "yz_samples.csv", samples))
    return paths


# -- report ------------------------------------------------------------------------


def read_results(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_COLUMNS:
            raise DataError(f"{path}: header must be {list(RESULT_COLUMNS)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields", row=lineno)
            try:
                rows.append((int(rec[0]), rec[1], rec[2], float(rec[3])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}", row=lineno) from exc
    if not rows:
        raise DataError(f"{path}: no results to report")
    return rows


def aggregate(rows):
    """Median, quartiles and count per (method, statistic), in first-seen order."""
    groups = {}
    for _, method, stat, value in rows:
        groups.setdefault((method, stat), []).append(value)
    out = []
    for (method, stat), vals in groups.items():
        v = np.asarray(vals)
        q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
        out.append({"method": method, "statistic": stat, "n": len(v), "median": float(med),
                    "q25": float(q25), "q75": float(q75), "mean": float(v.mean())})
    return out


def format_table(agg):
    """Statistics as rows, methods as columns: ``median [q25, q75]``."""
    methods = list(dict.fromkeys(a["method"] for a in agg))
    stats = list(dict.fromkeys(a["statistic"] for a in agg))
    cell = {(a["statistic"], a["method"]): f"{a['median']:.3f} [{a['q25']:.3f}, {a['q75']:.3f}]" for a in agg}
    table = [["statistic"] + methods] + [[s] + [cell.get((s, m), "-") for m in methods] for s in stats]
    widths = [max(len(r[j]) for r in table) for j in range(len(table[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _read_samples(path):
    groups = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["method", "y", "z"]:
            raise DataError(f"{path}: header must be ['method', 'y', 'z']")
        for rec in reader:
            groups.setdefault(rec["method"], []).append((float(rec["y"]), float(rec["z"])))
    return {m: np.asarray(v) for m, v in groups.items()}


def cmd_report(cfg):
    sec = cfg.section("report")
    rows = read_results(cfg.path(sec.get("results"), "report.results"))
    agg = aggregate(rows)
    table = format_table(agg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "report.txt").write_text(table, encoding="utf-8")
    with (cfg.out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = ["method", "statistic", "n", "median", "q25", "q75", "mean"]
        w.writerow(keys)
        for a in agg:
            w.writerow([a[k] if k in ("method", "statistic", "n") else format(a[k], ".17g") for k in keys])
    sys.stdout.write(table)
    paths = [cfg.out / "report.txt", cfg.out / "report.csv"]
    if "samples" in sec:
        bins = sec.get("bins")
        grid_dir = cfg.out / "grids"
        grid_dir.mkdir(exist_ok=True)
        peaks = {}
        for method, yz in sorted(_read_samples(cfg.path(sec["samples"], "report.samples")).items()):
            grid, yc, zc = yz_grid(yz[:, 0], yz[:, 1], bins=bins)
            paths.append(write_grid_csv(grid_dir / f"{method}.csv", grid, yc, zc))
            peaks[method] = count_local_maxima(grid)
        paths.append(_write_json(grid_dir / "local_maxima.json", peaks))
    return paths


COMMANDS = {"fit": cmd_fit, "impute": cmd_impute, "simulate": cmd_simulate, "report": cmd_report}


def build_parser():
    p = argparse.ArgumentParser(prog="fusionkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__ or name)
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory (default: config 'out')")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.seed, args.out)
        paths = COMMANDS[args.command](cfg)
    except DataError as exc:
        return _fail(exc, EXIT_DATA)
    except NumericalError as exc:
        return _fail(exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail(DataError(str(exc)), EXIT_DATA)
    for p in paths:
        print(f"wrote {p}", file=sys.stderr)
    return EXIT_OK


def _fail(exc, code):
    payload = dict(exc.to_dict(), exit_code=code)
    print(json.dumps(payload), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
