import csv
import json
import math

import numpy as np
import pytest

from multispike.classic_tests import beta_john_lw_cm, envelope_lambda, envelope_mu
from multispike.errors import DataFormatError, DomainError
from multispike.harness import (
    ExperimentSpec,
    emit_figure,
    iso_envelope_point,
    load_spec,
    report_json,
    run_convergence_experiment,
    run_data_test,
    run_experiment,
    run_power_experiment,
    run_size_experiment,
)
from multispike.spiked_sim import SpikedParams, generate_data, stream, write_matrix

FAST_GRID = {"points_per_axis": 8, "cv_draws": 4000, "power_draws": 2000}


def spec(**kw):
    base = dict(kind="size", model=SpikedParams(40, 80), replications=60, seed=5, grid=FAST_GRID)
    base.update(kw)
    return ExperimentSpec(**base)


def test_spec_validation():
    with pytest.raises(DomainError):
        spec(kind="bogus")
    with pytest.raises(DomainError):
        spec(replications=0)
    with pytest.raises(DomainError):
        spec(tests=["john", "roy"])
    with pytest.raises(DomainError):
        spec(kind="figure", figure="fig9")


def test_spec_files(tmp_path):
    raw = {"kind": "size", "model": {"p": 20, "n": 40, "h": [0.1]}, "tests": ["john"], "replications": 3}
    (tmp_path / "a.json").write_text(json.dumps(raw))
    (tmp_path / "a.toml").write_text(
        'kind = "size"\ntests = ["john"]\nreplications = 3\n[model]\np = 20\nn = 40\nh = [0.1]\n'
    )
    assert load_spec(tmp_path / "a.json") == load_spec(tmp_path / "a.toml")


def test_size_report_structure_and_se():
    rep = run_size_experiment(spec())
    assert set(rep["tests"]) == {"john", "lw", "clr", "caima", "tw", "lr_lambda", "lr_mu"}
    for entry in rep["tests"].values():
        assert 0.0 <= entry["rate"] <= 1.0
        assert entry["std_error"] == pytest.approx(math.sqrt(entry["rate"] * (1 - entry["rate"]) / 60))
    assert rep["metadata"]["seed"] == 5


def test_single_replication_is_degenerate():
    rep = run_size_experiment(spec(replications=1, tests=["john", "tw"]))
    for entry in rep["tests"].values():
        assert entry["rate"] in (0.0, 1.0)
        assert entry["std_error"] == 0.0 and entry["degenerate"]


def test_size_ignores_spikes():
    a = run_size_experiment(spec(tests=["john"]))
    b = run_size_experiment(spec(tests=["john"], model=SpikedParams(40, 80, (0.5,))))
    assert a["tests"] == b["tests"]


def test_power_at_null_matches_size():
    s = spec(tests=["john", "lw"])
    assert run_power_experiment(s)["tests"] == run_size_experiment(s)["tests"]


def test_reports_byte_identical_across_workers(tmp_path):
    one = report_json(run_size_experiment(spec(replications=120, workers=1)))
    three = report_json(run_size_experiment(spec(replications=120, workers=3)))
    assert one == three


def test_power_report_predictions():
    s = spec(kind="power", model=SpikedParams(40, 80, (0.4, 0.3)), tests=["john", "lr_lambda", "tw"])
    rep = run_power_experiment(s)
    assert rep["tests"]["john"]["asymptotic"] == pytest.approx(beta_john_lw_cm([0.4, 0.3], 0.5, 0.05))
    assert rep["tests"]["tw"]["asymptotic"] == 0.05
    assert rep["tests"]["lr_lambda"]["asymptotic"] <= rep["envelope_lambda"] + 0.03
    assert rep["envelope_lambda"] == pytest.approx(envelope_lambda([0.4, 0.3], 0.5, 0.05))


def test_convergence_report():
    s = spec(kind="convergence", model=SpikedParams(60, 120), replications=100, esd_dims=[20, 80], esd_replications=10)
    rep = run_convergence_experiment(s)
    pt = rep["points"][0]
    assert pt["lambda"]["limit_mean"] == pytest.approx(-0.5 * pt["lambda"]["limit_variance"])
    assert 0.0 <= pt["mu"]["ks_pvalue"] <= 1.0
    assert rep["esd"][1]["mean_kolmogorov"] < rep["esd"][0]["mean_kolmogorov"]


def read_curves(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_figure_header_and_fig1_null_value(tmp_path):
    path = emit_figure("fig1", {"surface_steps": 5}, tmp_path / "f1.csv")
    rows = read_curves(path)
    assert list(rows[0]) == ["x", "y", "series", "params_hash"]
    at_null = [r for r in rows if float(r["x"]) == 0.0 and r["series"].endswith("h2=0.0000")]
    assert at_null and all(float(r["y"]) == pytest.approx(0.05) for r in at_null)


def test_fig6_john_below_mu_envelope(tmp_path):
    rows = read_curves(emit_figure("fig6", None, tmp_path / "f6.csv"))
    john = [float(r["y"]) for r in rows if r["series"].startswith("john")]
    env = [float(r["y"]) for r in rows if r["series"].startswith("envelope_mu")]
    assert len(john) == len(env) > 0
    assert all(j <= e + 1e-12 for j, e in zip(john, env))


def test_figure_unknown_id(tmp_path):
    with pytest.raises(DomainError):
        emit_figure("fig8", None, tmp_path / "x.csv")


@pytest.mark.parametrize("variant", ["lambda", "mu"])
def test_iso_envelope_points(variant):
    env = envelope_lambda if variant == "lambda" else envelope_mu
    for q in (0.25, 0.5, 0.75, 0.9):
        for t in np.linspace(0, 1, 6):
            h = iso_envelope_point(q, t, 0.05, variant)
            assert abs(env(h, 1.0, 0.05) - q) <= 1e-8
            assert h[1] == pytest.approx(t * h[0])


def test_figure_experiment_kind(tmp_path):
    out = tmp_path / "f7.csv"
    rep = run_experiment(spec(kind="figure", figure="fig7", output=str(out)))
    assert rep["path"] == str(out) and out.exists()


def test_data_test_sigma_normalisation(tmp_path):
    X = generate_data(SpikedParams(30, 60), 3)
    write_matrix(X, tmp_path / "unit.csv")
    write_matrix(2.0 * X, tmp_path / "scaled.csv")
    tests = ["john", "lw", "clr", "caima", "tw", "lr_lambda"]
    opts = {"points_per_axis": 8, "cv_draws": 4000}
    a = run_data_test(tmp_path / "unit.csv", tests, 0.05, 1.0, grid_opts=opts)
    b = run_data_test(tmp_path / "scaled.csv", tests, 0.05, 4.0, grid_opts=opts, output=tmp_path / "o.json")
    assert a == b
    assert all(math.isfinite(o.standardized) for o in a)
    assert len(json.loads((tmp_path / "o.json").read_text())) == len(tests)


def test_data_test_errors(tmp_path):
    bad = tmp_path / "nan.csv"
    bad.write_text("1,2,3\n4,5,nan\n")
    with pytest.raises(DataFormatError, match="row 2, column 3"):
        run_data_test(bad, ["john"])
    small = tmp_path / "small.csv"
    small.write_text("1,2,3\n")
    with pytest.raises(DataFormatError):
        run_data_test(small, ["john"])
    write_matrix(np.ones((3, 4)) + np.eye(3, 4), tmp_path / "ok.csv")
    with pytest.raises(DomainError):
        run_data_test(tmp_path / "ok.csv", ["roy"])
    with pytest.raises(DomainError):
        run_data_test(tmp_path / "ok.csv", ["john"], sigma2_known=0.0)


def test_white_noise_files_reject_at_nominal_rate(tmp_path):
    rejects = []
    for i in range(100):
        path = tmp_path / f"w{i}.bin"
        write_matrix(generate_data(SpikedParams(40, 80), stream(901, i)), path)
        rejects.append([o.reject for o in run_data_test(path, ["john", "lw", "caima"], 0.05)])
    rate = np.mean(rejects, axis=0)
    # 100 files: 3σ binomial band around α is ±0.066
    assert np.all(np.abs(rate - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / 100))
