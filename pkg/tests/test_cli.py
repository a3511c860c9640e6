import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from kalsmooth import cli


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.reader(fh))


def write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config), encoding="utf-8")
    return str(path)


def test_minimal_config_is_valid():
    assert cli.validate({"command": "smooth", "scenario": "sine", "method": "linear"}) == []


def test_negative_variance_names_field():
    errors = cli.validate({"command": "smooth", "scenario": "sine", "method": "linear", "model": {"R": -1.0}})
    assert len(errors) == 1 and "model.R" in errors[0]


def test_unknown_method_lists_choices():
    (msg,) = cli.validate({"command": "smooth", "scenario": "sine", "method": "kalman"})
    for name in cli.METHODS:
        assert name in msg


def test_validate_collects_every_problem():
    errors = cli.validate({"command": "smooth", "scenario": "vanderpol", "method": "plq", "seed": -1,
                           "colour": "red", "noise": {"p": 0.2}})
    text = " | ".join(errors)
    for needle in ("colour", "seed", "noise.phi", "linear scenario"):
        assert needle in text
    assert cli.validate([]) == ["config must be a JSON object"]


def test_penalty_and_sparse_checks():
    base = {"command": "smooth", "scenario": "sine"}
    assert cli.validate(dict(base, method="plq", penalty={"measurement": "huber(1.5)"})) == []
    assert cli.validate(dict(base, method="plq", penalty={"measurement": "cauchy"}))
    assert cli.validate(dict(base, method="sparse", sparse={"lam": 1.0, "tau": 1.0}))
    assert cli.validate(dict(base, method="sparse", sparse={"tau": 1.0})) == []
    assert cli.validate(dict(base, method="constrained"))


def test_validate_subcommand_exit_codes(tmp_path, capsys):
    good = write_config(tmp_path, {"command": "smooth", "scenario": "sine", "method": "linear"})
    code, out, _ = run(["validate", good], capsys)
    assert code == 0 and json.loads(out) == {"ok": True}
    bad = write_config(tmp_path, {"command": "smooth", "scenario": "sine", "method": "nope"}, "bad.json")
    code, out, _ = run(["validate", bad], capsys)
    assert code == 2 and not json.loads(out)["ok"]
    code, _, err = run(["validate", str(tmp_path / "missing.json")], capsys)
    assert code == 4 and json.loads(err)["category"] == "io"
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    code, _, err = run(["validate", str(broken)], capsys)
    assert code == 2 and json.loads(err)["category"] == "config"


def test_smooth_sine_linear_artifacts(tmp_path, capsys):
    out_dir = tmp_path / "sine"
    code, out, _ = run(["smooth", "--scenario", "sine", "--method", "linear", "--out", str(out_dir)], capsys)
    assert code == 0
    result = json.loads(out)["result"]
    assert result["status"] == "converged" and result["mse"] < 0.2
    rows = read_csv(out_dir / "estimate.csv")
    assert rows[0][:5] == ["k", "t", "x_1", "x_2", "z_1"]
    assert len(rows) == 101
    # full double precision survives the round trip
    assert float(rows[1][2]) == float(repr(float(rows[1][2])))
    for name in ("diagnostics.csv", "summary.csv", "estimate.svg", "smooth_meta.json"):
        assert (out_dir / name).exists()
    assert (out_dir / "estimate.svg").read_text(encoding="utf-8").startswith("<svg")


def test_smooth_output_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["smooth", "--scenario", "sine", "--method", "l1", "--seed", "3", "--out", str(tmp_path / name)],
                   capsys)[0] == 0
    for f in ("estimate.csv", "diagnostics.csv", "summary.csv", "estimate.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_smooth_vanderpol_gn(tmp_path, capsys):
    code, out, _ = run(["smooth", "--scenario", "vanderpol", "--method", "gn", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(out)["result"]["mse"] < 1.0
    assert len(read_csv(tmp_path / "diagnostics.csv")) > 1


def test_smooth_from_config_with_flag_override(tmp_path, capsys):
    cfg = write_config(tmp_path, {"command": "smooth", "scenario": "box", "method": "constrained",
                                  "model": {"N": 40}, "seed": 1, "output": str(tmp_path / "ignored")})
    code, out, _ = run(["smooth", "--config", cfg, "--out", str(tmp_path / "box")], capsys)
    assert code == 0
    assert json.loads(out)["result"]["max_violation"] <= 1e-8
    assert (tmp_path / "box" / "estimate.csv").exists() and not (tmp_path / "ignored").exists()


@pytest.mark.parametrize("extra", [
    ["--method", "plq", "--measurement-penalty", "vapnik(0.2)"],
    ["--method", "sparse", "--lam", "0.5"],
    ["--method", "sparse", "--tau", "5"],
])
def test_smooth_other_linear_methods(tmp_path, capsys, extra):
    code, out, err = run(["smooth", "--scenario", "robust-linear", "--out", str(tmp_path)] + extra, capsys)
    assert code == 0, err
    assert json.loads(out)["ok"]


def test_table_smoke(tmp_path, capsys):
    code, out, _ = run(["table", "--scenario", "robust-linear", "--reps", "2", "--seed", "7", "--out", str(tmp_path)],
                       capsys)
    assert code == 0
    summary = read_csv(tmp_path / "robust_linear_summary.csv")
    assert summary[0] == ["cell_p", "cell_phi", "method", "median", "lo95", "hi95"]
    # five cells times three methods
    assert len(summary) == 16
    meta = json.loads((tmp_path / "robust_linear_meta.json").read_text(encoding="utf-8"))
    assert meta["seed"] == 7 and meta["replications"] == 2


def test_cv_smoke(tmp_path, capsys):
    code, out, _ = run(["cv", "--samples", "40", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(out)["result"]["samples"] == 40
    assert len(read_csv(tmp_path / "cv_fit.csv")) == 41


def test_bench_smoke(tmp_path, capsys):
    code, out, _ = run(["bench", "--sizes", "50", "100", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "ratio" in json.loads(out)["result"]


def test_config_error_exit_code(tmp_path, capsys):
    code, _, err = run(["smooth", "--scenario", "sine", "--method", "bogus", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert json.loads(err)["category"] == "config"


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"command": "smooth", "scenario": "robust-linear", "method": "sparse",
                                  "sparse": {"lam": 0.5}, "solver": {"max_iter": 1}})
    code, _, err = run(["smooth", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 3
    report = json.loads(err)
    assert report["module"] == "sparse" and "MaxIterReached" in report["message"]


def test_io_error_exit_code(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    code, _, err = run(["smooth", "--scenario", "sine", "--method", "linear", "--out", str(blocker / "sub")], capsys)
    assert code == 4 and json.loads(err)["category"] == "io"


def test_output_dir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert run(["bench", "--sizes", "20", "40"], capsys)[0] == 0
    assert (tmp_path / "env" / "bench.csv").exists()


@settings(max_examples=25, deadline=None)
@given(N=st.integers(-3, 60), R=st.floats(-1.0, 1.0), method=st.sampled_from(["linear", "l1", "plq", "gn", "x"]))
def test_accepted_configs_run_without_config_error(N, R, method, tmp_path_factory):
    config = {"command": "smooth", "scenario": "sine", "method": method, "model": {"N": N, "R": R}}
    if cli.validate(config):
        return
    out = str(tmp_path_factory.mktemp("run"))
    assert cli.main(["smooth", "--scenario", "sine", "--method", method, "--out", out,
                     "--config", write_config(tmp_path_factory.mktemp("cfg"), config)]) in (0, 3)
