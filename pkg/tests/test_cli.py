import csv
import json

import numpy as np
import pytest
import yaml

from rismimo import cli
from rismimo.config import ConfigError, load_config, parse_config, run_statistics
from rismimo.covariance import waterfill
from rismimo.experiments import CSV_HEADER, evaluate_scheme, parse_sweep
from rismimo.large_system import rate_no_ris, solve_fixed_point
from rismimo.linalg import LinAlgFailure
from rismimo.persist import load_matrix, save_matrix
from rismimo.rate import apply_replacements, assemble_F

SMALL = {
    "dims": {"n": 4, "l": 4, "k": 4},
    "mc": {"trials": 128, "seed": 3},
    "optimize": {"restarts": 1},
}


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def _merge(base, extra):
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def test_rate_default_agrees_with_monte_carlo(tmp_path, capsys):
    assert cli.main(["rate", "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "rate.json").read_text())
    assert out["scheme"] == "uniform_random" and out["status"] == "ok"
    assert abs(out["rate_analytic_bits"] - out["rate_mc_bits"]) <= 3 * out["rate_mc_stderr"]
    assert "analytic" in capsys.readouterr().out


def test_rate_vanishing_power(tmp_path):
    cfg = _write(tmp_path, _merge(SMALL, {"power": {"p_dbm": -100.0}}))
    assert cli.main(["rate", "--config", cfg, "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "rate.json").read_text())
    assert 0 <= out["rate_analytic_bits"] < 1e-3
    assert abs(out["rate_mc_bits"]) < 1e-3


def test_no_ris_scheme_matches_reduction(tmp_path):
    cfg = parse_config(_merge(SMALL, {"scenario": {"zero_links": [1, 2]}, "scheme": "no_ris"}))
    row = evaluate_scheme(cfg, "no_ris", 0, 64)
    stats = run_statistics(cfg)
    eff = apply_replacements(stats, row["_Q"], np.zeros(stats.dims.l))
    assert row["rate_analytic_bits"] == pytest.approx(rate_no_ris(eff).bits, abs=1e-9)
    path = _write(tmp_path, _merge(SMALL, {"scenario": {"zero_links": [1, 2]}, "scheme": "no_ris"}))
    assert cli.main(["rate", "--config", path]) == 0


def test_config_errors_exit_2(tmp_path, capsys):
    cases = [
        ({"dims": {"n": -1}}, "dims.n"),
        ({"power": {"p_dbmm": 3}}, "power.p_dbmm"),
        ({"arrays": {"link1": {"rx": {"delta_deg": 0}}}}, "arrays.link1.rx"),
        ({"scheme": "best"}, "scheme"),
        ({"mc": {"trials": 1.5}}, "mc.trials"),
    ]
    for i, (data, key) in enumerate(cases):
        cfg = _write(tmp_path, data, f"bad{i}.yaml")
        assert cli.main(["rate", "--config", cfg]) == cli.EXIT_CONFIG
        assert key in capsys.readouterr().err
    assert cli.main(["rate", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    bad = tmp_path / "broken.yaml"
    bad.write_text("dims: [1, 2\n")
    assert cli.main(["rate", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["rate", "--trials", "0"]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "--sweep", "power_dbm=5,1"]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "--sweep", "power_dbm=1", "--scheme", "nope"]) == cli.EXIT_CONFIG


def test_numerical_failure_exit_3(monkeypatch, capsys):
    def boom(*a, **k):
        raise LinAlgFailure("singular pivot")

    monkeypatch.setattr(cli, "evaluate_scheme", boom)
    assert cli.main(["rate"]) == cli.EXIT_NUMERIC
    assert "singular pivot" in capsys.readouterr().err


def test_optimize_artifacts(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["optimize", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["optimize", "--config", cfg, "--out", str(b)]) == 0
    for name in ("Q.mat", "Q_eigenvectors.mat", "Q_eigenvalues.txt", "theta.txt", "trace.csv", "optimize.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    trace = np.loadtxt(a / "trace.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(trace[:, 1]) >= -1e-8)
    meta = json.loads((a / "optimize.json").read_text())
    assert meta["theta_relevant"] is True
    Q = load_matrix(a / "Q.mat")
    U = load_matrix(a / "Q_eigenvectors.mat")
    lam = np.loadtxt(a / "Q_eigenvalues.txt")
    assert np.allclose(U @ np.diag(lam) @ U.conj().T, Q, atol=1e-12)
    assert np.trace(Q).real == pytest.approx(meta["budget"], rel=1e-10)


def test_optimize_without_ris(tmp_path):
    data = _merge(SMALL, {"scenario": {"zero_links": [1, 2]}})
    cfg = _write(tmp_path, data)
    assert cli.main(["optimize", "--config", cfg, "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "optimize.json").read_text())
    assert meta["theta_relevant"] is False
    # Q is a fixed point of waterfilling on the no-RIS F
    rc = parse_config(data)
    stats = run_statistics(rc)
    Q = load_matrix(tmp_path / "Q.mat")
    x = solve_fixed_point(apply_replacements(stats, Q, np.zeros(4)))
    F = assemble_F(stats, np.zeros(4), x).F
    assert np.allclose(waterfill(F, stats.power_budget).Q.Q, Q, atol=1e-3 * stats.power_budget)


def test_sweep_csv(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["sweep", "--config", cfg, "--sweep", "power_dbm=0,10", "--scheme", "uniform_random,optimized,no_ris", "--no-timing"]
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    with open(a / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    body = rows[1:]
    assert [(r[1], r[2]) for r in body] == [
        (v, s) for v in ("0.0", "10.0") for s in ("uniform_random", "optimized", "no_ris")
    ]
    assert all(r[-1] == "ok" for r in body)
    rate = {(r[1], r[2]): float(r[3]) for r in body}
    for v in ("0.0", "10.0"):
        assert rate[(v, "optimized")] >= rate[(v, "uniform_random")]
    meta = json.loads((a / "sweep.json").read_text())
    assert meta["x"]["variable"] == "power_dbm" and meta["values"] == [0.0, 10.0]
    assert set(meta["schemes"]) == {"uniform_random", "optimized", "no_ris"}


def test_sweep_records_failures(tmp_path, monkeypatch):
    import rismimo.experiments as ex

    real = ex.evaluate_scheme

    def flaky(cfg, scheme, *a, **k):
        if scheme == "no_ris":
            raise LinAlgFailure("forced")
        return real(cfg, scheme, *a, **k)

    monkeypatch.setattr(ex, "evaluate_scheme", flaky)
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["sweep", "--config", cfg, "--sweep", "power_dbm=0", "--scheme", "uniform_random,no_ris",
                     "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv", newline="")))
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"].startswith("failed: LinAlgFailure")


def test_validate_default_passes(tmp_path, capsys):
    assert cli.main(["validate", "--trials", "256", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "validate.json").read_text())
    assert report["passed"]
    names = {c["name"] for c in report["checks"]}
    assert {"trace_normalization", "reduction_rayleigh", "phase_gradient_fd", "stieltjes_mc"} <= names


def test_validate_detects_trace_fault(tmp_path, capsys):
    cfg = _write(tmp_path, _merge(SMALL, {"faults": {"trace_scale": {"link1": 1.5}}}))
    assert cli.main(["validate", "--config", cfg]) == cli.EXIT_VALIDATION
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if "trace_normalization" in l)
    assert line.startswith("FAIL") and "link1 tr T" in line


def test_validate_rayleigh_config(tmp_path, capsys):
    cfg = _write(tmp_path, _merge(SMALL, {"rician": {"kappa0": 0, "kappa1": 0, "kappa2": 0}}))
    assert cli.main(["validate", "--config", cfg, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "validate.json").read_text())
    ray = next(c for c in report["checks"] if c["name"] == "reduction_rayleigh")
    assert ray["passed"] and ray["error"] <= 1e-10


def test_parse_sweep():
    assert parse_sweep("power_dbm=0,5,10") == ("power_dbm", [0.0, 5.0, 10.0])
    var, vals = parse_sweep("ris_elements=8,16")
    assert var == "ris_elements" and vals == [8, 16]
    for bad in ("power_dbm", "power=1,2", "power_dbm=", "power_dbm=1,1", "ris_elements=8.5", "power_dbm=a"):
        with pytest.raises(ConfigError):
            parse_sweep(bad)


def test_load_config_defaults(tmp_path):
    assert load_config(None).scenario.dims.n == 8
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(str(empty)) == load_config(None)


def test_matrix_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    M = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    M[0, 0] = 1e-300 - 3e300j
    save_matrix(tmp_path / "m.mat", M)
    assert np.array_equal(load_matrix(tmp_path / "m.mat"), M)
    (tmp_path / "bad.mat").write_text("hello\n")
    with pytest.raises(ValueError):
        load_matrix(tmp_path / "bad.mat")
