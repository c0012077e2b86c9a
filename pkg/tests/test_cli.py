import csv
import hashlib
import json

import numpy as np
import pytest

from fusionkit.cli import aggregate, main, read_results
from fusionkit.data_model import BlockSpec, fixture_paths, load_csv, load_imputed, stack
from fusionkit.imputation import nearest_donors
from fusionkit.mixtures import model_from_dict
from fusionkit.params import eta_to_theta, theta_to_eta

FIX_A, FIX_B = fixture_paths()


def write_config(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def data_section(a=FIX_A, b=FIX_B):
    return f'[data]\na = "{a}"\nb = "{b}"\n'


def run(capsys, *argv):
    code = main(list(argv))
    err = capsys.readouterr().err
    return code, err


def error_json(err):
    return json.loads([ln for ln in err.splitlines() if ln.startswith("{")][-1])


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def fixture_ds():
    spec = BlockSpec.default()
    return stack(load_csv(FIX_A, spec, "A"), load_csv(FIX_B, spec, "B"), spec)


# -- fit --------------------------------------------------------------------------


def test_fit_gaussian_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path, data_section() + '[fit]\nfamily = "gaussian"\n')
    assert run(capsys, "fit", "--config", cfg, "--out", str(tmp_path / "o1"))[0] == 0
    assert run(capsys, "fit", "--config", cfg, "--out", str(tmp_path / "o2"))[0] == 0
    assert sha(tmp_path / "o1" / "model.json") == sha(tmp_path / "o2" / "model.json")
    model = json.loads((tmp_path / "o1" / "model.json").read_text())
    assert model["family"] == "gaussian"


def test_fit_snmix_seeded_identical(tmp_path, capsys):
    cfg = write_config(tmp_path, "seed = 11\n" + data_section() + '[fit]\nfamily = "snmix"\ng = 2\n[em]\nn_restarts = 2\nmax_iters = 200\n')
    for d in ("o1", "o2"):
        code, err = run(capsys, "fit", "--config", cfg, "--out", str(tmp_path / d))
        assert code == 0, err
    for f in ("model.json", "fit_report.json"):
        assert sha(tmp_path / "o1" / f) == sha(tmp_path / "o2" / f)
    report = json.loads((tmp_path / "o1" / "fit_report.json").read_text())
    assert len(report["restarts"]) == 2


def test_malformed_csv_names_cell(tmp_path, capsys):
    bad = tmp_path / "a.csv"
    bad.write_text("x1,y1\n0.5,1.0\n0.7,abc\n")
    cfg = write_config(tmp_path, data_section(a=bad))
    code, err = run(capsys, "fit", "--config", cfg)
    assert code == 2
    payload = error_json(err)
    assert payload["row"] == 3 and payload["column"] == "y1" and payload["exit_code"] == 2


def test_missing_file_and_bad_family(tmp_path, capsys):
    cfg = write_config(tmp_path, data_section(a=tmp_path / "nope.csv"))
    assert run(capsys, "fit", "--config", cfg)[0] == 2
    cfg = write_config(tmp_path, data_section() + '[fit]\nfamily = "t"\n')
    assert run(capsys, "fit", "--config", cfg)[0] == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("x1,y1\n" + "".join(f"1.0,{i}\n" for i in range(6)))
    b.write_text("x1,z1\n" + "".join(f"1.0,{i * i}\n" for i in range(6)))
    cfg = write_config(tmp_path, data_section(a, b))
    code, err = run(capsys, "fit", "--config", cfg)
    assert code == 3 and error_json(err)["exit_code"] == 3


# -- impute -------------------------------------------------------------------------


def test_impute_nn_matches_scan(tmp_path, capsys):
    cfg = write_config(tmp_path, "seed = 1\n" + data_section() + '[impute]\nmethod = "nn"\n')
    assert run(capsys, "impute", "--config", cfg, "--out", str(tmp_path / "o"))[0] == 0
    imp = load_imputed(tmp_path / "o" / "imputed.csv", BlockSpec.default())
    ds = fixture_ds()
    for i in range(ds.n):
        own, other = (ds.xa, ds.xb) if i < ds.n_a else (ds.xb, ds.xa)
        q = ds.values[i, 0]
        dist = [abs(q - v) for v in other[:, 0]]
        j = dist.index(min(dist))
        assert imp.donor[i] == (j + ds.n_a if i < ds.n_a else j)
    assert np.array_equal(imp.donor[: ds.n_a] - ds.n_a, nearest_donors(ds.xa, ds.xb, "brute"))
    summary = list(csv.DictReader((tmp_path / "o" / "summary.csv").open()))
    assert summary[0]["group"] == "all"


def test_impute_parametric_conditional_mean(tmp_path, capsys):
    cfg_fit = write_config(tmp_path, data_section() + "[fit]\nfamily = \"gaussian\"\n", "fit.toml")
    assert run(capsys, "fit", "--config", cfg_fit, "--out", str(tmp_path / "fit"))[0] == 0
    model_path = tmp_path / "fit" / "model.json"
    text = (
        "seed = 5\n" + data_section()
        + f'[impute]\nmethod = "parametric"\nmodel = "{model_path}"\ndraw_mode = "conditional_mean"\n'
    )
    cfg = write_config(tmp_path, text)
    assert run(capsys, "impute", "--config", cfg, "--out", str(tmp_path / "o"))[0] == 0
    imp = load_imputed(tmp_path / "o" / "imputed.csv", BlockSpec.default())
    g = eta_to_theta(theta_to_eta(model_from_dict(json.loads(model_path.read_text()))))
    ds = fixture_ds()
    s, mu = g.sigma, g.mu
    for i in range(ds.n):
        miss = 2 if i < ds.n_a else 1
        x = ds.values[i, 0]
        want = mu[miss] + s[miss, 0] / s[0, 0] * (x - mu[0])
        assert abs(imp.values[i, miss] - want) < 1e-12


def test_impute_same_seed_same_hash(tmp_path, capsys):
    cfg_fit = write_config(tmp_path, "seed = 2\n" + data_section() + '[fit]\nfamily = "skew_normal"\n', "fit.toml")
    assert run(capsys, "fit", "--config", cfg_fit, "--out", str(tmp_path / "fit"))[0] == 0
    text = "seed = 3\n" + data_section() + f'[impute]\nmodel = "{tmp_path / "fit" / "model.json"}"\n'
    cfg = write_config(tmp_path, text)
    for d in ("o1", "o2"):
        assert run(capsys, "impute", "--config", cfg, "--out", str(tmp_path / d))[0] == 0
    for f in ("imputed.csv", "imputed.provenance.csv", "summary.csv", "summary.json"):
        assert sha(tmp_path / "o1" / f) == sha(tmp_path / "o2" / f)
    assert run(capsys, "impute", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "o3"))[0] == 0
    assert sha(tmp_path / "o1" / "imputed.csv") != sha(tmp_path / "o3" / "imputed.csv")


def test_impute_dimension_mismatch(tmp_path, capsys):
    model = {"family": "gaussian", "dims": [2, 1, 1], "mu": [0.0] * 4, "sigma": np.eye(4).tolist()}
    mp = tmp_path / "model.json"
    mp.write_text(json.dumps(model))
    cfg = write_config(tmp_path, "seed = 1\n" + data_section() + f'[impute]\nmodel = "{mp}"\n')
    code, err = run(capsys, "impute", "--config", cfg)
    assert code == 2 and error_json(err)["exit_code"] == 2


def test_impute_requires_seed(tmp_path, capsys):
    cfg = write_config(tmp_path, data_section() + '[impute]\nmethod = "nn"\n')
    code, err = run(capsys, "impute", "--config", cfg)
    assert code == 2 and "seed" in error_json(err)["message"]


# -- simulate and report ----------------------------------------------------------


def test_simulate_single_replication_bit_identical(tmp_path, capsys):
    text = 'seed = 9\n[simulate]\nscenario = "sn-515"\nreplications = 1\nn_a = 200\nn_b = 200\n'
    cfg = write_config(tmp_path, text)
    for d in ("o1", "o2"):
        assert run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path / d))[0] == 0
    for f in ("results.csv", "errors.json", "yz_samples.csv"):
        assert sha(tmp_path / "o1" / f) == sha(tmp_path / "o2" / f)
    rows = read_results(tmp_path / "o1" / "results.csv")
    assert {m for _, m, _, _ in rows} == {"truth", "nn", "parametric"}


def test_simulate_requires_seed(tmp_path, capsys):
    cfg = write_config(tmp_path, '[simulate]\nscenario = "sn-515"\n')
    assert run(capsys, "simulate", "--config", cfg)[0] == 2


def test_simulate_records_failures_and_continues(tmp_path, capsys):
    # singular X block: every fit fails, NN still runs
    text = (
        "seed = 1\n[simulate]\nreplications = 2\nn_a = 50\nn_b = 50\nfit_family = \"gaussian\"\n"
        "[simulate.generator]\nfamily = \"gaussian\"\ndims = [2, 1, 1]\nmu = [0, 0, 0, 0]\n"
        "sigma = [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]\n"
    )
    cfg = write_config(tmp_path, text)
    code, err = run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0, err
    errors = json.loads((tmp_path / "o" / "errors.json").read_text())
    assert [(e["replication"], e["stage"]) for e in errors] == [(0, "fit"), (1, "fit"), (None, "asymptotic_nn")]
    rows = read_results(tmp_path / "o" / "results.csv")
    assert sum(m == "nn" and s == "rho_yz" for _, m, s, _ in rows) == 2


def test_simulate_workers_do_not_change_output(tmp_path, capsys):
    base = 'seed = 9\n[simulate]\nscenario = "sn-515"\nreplications = 3\nn_a = 100\nn_b = 100\n'
    for d, extra in (("o1", ""), ("o2", "workers = 3\n")):
        cfg = write_config(tmp_path, base + extra, f"{d}.toml")
        assert run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path / d))[0] == 0
    for f in ("results.csv", "yz_samples.csv"):
        assert sha(tmp_path / "o1" / f) == sha(tmp_path / "o2" / f)


def write_results_file(path, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "method", "statistic", "value"])
        w.writerows(rows)


def test_report_single_method_table(tmp_path, capsys):
    res = tmp_path / "results.csv"
    write_results_file(res, [(r, "nn", "rho_yz", 0.1 * r) for r in range(5)])
    cfg = write_config(tmp_path, f'[report]\nresults = "{res}"\n')
    code = main(["report", "--config", cfg, "--out", str(tmp_path / "o")])
    out = capsys.readouterr().out
    assert code == 0
    header = out.splitlines()[0].split()
    assert header == ["statistic", "nn"]
    assert "0.200 [0.100, 0.300]" in out


def test_report_aggregation_matches_recomputation(tmp_path):
    rng = np.random.default_rng(0)
    for k in range(10):
        n = int(rng.integers(1, 40))
        rows = [(r, str(rng.choice(["nn", "parametric"])), str(rng.choice(["rho_yz", "x"])), float(v))
                for r, v in enumerate(rng.standard_normal(n))]
        agg = aggregate(rows)
        for a in agg:
            vals = sorted(v for _, m, s, v in rows if m == a["method"] and s == a["statistic"])
            m = len(vals)
            med = vals[m // 2] if m % 2 else 0.5 * (vals[m // 2 - 1] + vals[m // 2])
            assert a["n"] == m and a["median"] == pytest.approx(med, abs=1e-15)
            assert a["mean"] == pytest.approx(sum(vals) / m, abs=1e-12)
        assert sum(a["n"] for a in agg) == n


def test_report_empty_and_schema(tmp_path, capsys):
    res = tmp_path / "results.csv"
    write_results_file(res, [])
    cfg = write_config(tmp_path, f'[report]\nresults = "{res}"\n')
    code, err = run(capsys, "report", "--config", cfg)
    assert code == 2 and "no results" in error_json(err)["message"]
    res.write_text("rep,method\n1,nn\n")
    assert run(capsys, "report", "--config", cfg)[0] == 2


def test_report_writes_lossless_csv_and_grids(tmp_path, capsys):
    text = 'seed = 4\n[simulate]\nscenario = "gmm-overlap"\nreplications = 2\nn_a = 300\nn_b = 300\n[em]\nn_restarts = 2\n'
    cfg = write_config(tmp_path, text)
    out = tmp_path / "sim"
    assert run(capsys, "simulate", "--config", cfg, "--out", str(out))[0] == 0
    rcfg = write_config(
        tmp_path, f'[report]\nresults = "{out / "results.csv"}"\nsamples = "{out / "yz_samples.csv"}"\n', "r.toml"
    )
    assert main(["report", "--config", rcfg, "--out", str(tmp_path / "rep")]) == 0
    capsys.readouterr()
    rows = list(csv.DictReader((tmp_path / "rep" / "report.csv").open()))
    agg = aggregate(read_results(out / "results.csv"))
    for row, a in zip(rows, agg):
        assert float(row["median"]) == a["median"]
    peaks = json.loads((tmp_path / "rep" / "grids" / "local_maxima.json").read_text())
    assert set(peaks) == {"asymptotic_nn", "nn", "parametric"}
    assert (tmp_path / "rep" / "grids" / "nn.csv").exists()
