import json
import os

import pandas as pd
import pytest

from gauge_arb.cli import main, parse_config
from gauge_arb.config import REPORT_SUFFIX


@pytest.fixture
def scenario(scenario_dir):
    return lambda name: os.path.join(scenario_dir, f"{name}.json")


def load_report(out, name):
    with open(os.path.join(out, f"{name}{REPORT_SUFFIX}"), encoding="utf-8") as f:
        return json.load(f)


def test_parse_config_applies_file_defaults(tmp_path):
    defaults = tmp_path / "defaults.json"
    defaults.write_text(json.dumps({"grid": 5, "seed": 3, "epsilon-kernel": 1e-6}), encoding="utf-8")
    config = parse_config(["spectrum", "--scenario", "x.json", "--config", str(defaults)])
    assert (config.grid, config.seed, config.epsilon_kernel) == (5, 3, 1e-6)
    config = parse_config(["spectrum", "--scenario", "x.json", "--config", str(defaults), "--grid", "7"])
    assert config.grid == 7
    config = parse_config(["utility", "--scenario", "x.json", "--u", "exp", "--x-ref", "1", "1"])
    assert config.utility == "exponential"
    assert config.x_ref == (1.0, 1.0)
    config = parse_config(["spectrum", "--scenario", "x.json"])
    assert config.epsilon_kernel is None
    assert config.mode == "nelson"
    assert parse_config(["spectrum", "--scenario", "x.json", "--mode", "classical"]).mode == "classical"


def test_zc_test_on_flat_scenario(tmp_path, scenario, capsys):
    out = str(tmp_path)
    assert main(["zc-test", "--scenario", scenario("flat"), "--out", out]) == 0
    report = load_report(out, "zc_test")
    assert report["results"]["verdict"] == "ZC"
    assert report["scenario"] == "flat"
    assert os.path.join(out, "zc-test_residuals.csv") in capsys.readouterr().out


def test_spectrum_detects_arbitrage(tmp_path, scenario):
    out = str(tmp_path)
    assert main(["spectrum", "--scenario", scenario("arb2"), "--out", out, "--grid", "5", "--k", "2"]) == 0
    results = load_report(out, "spectrum")["results"]
    assert results["verdict"] == "ARBITRAGE"
    assert results["completeness"] == "ARBITRAGE"
    assert results["lambda_min"] > 0.0
    assert results["lambda_min"] > 10.0 * results["epsilon_kernel"]
    assert results["kernel_dim"] == 0
    assert results["mode"] == "nelson"
    assert os.path.exists(os.path.join(out, "spectrum_sections.csv"))


def test_curvature_and_utility_on_arbitrage_scenario(tmp_path, scenario):
    out = str(tmp_path)
    assert main(["curvature", "--scenario", scenario("arb2"), "--out", out, "--grid", "5"]) == 0
    assert load_report(out, "curvature")["results"]["verdict"] == "NOT-ZC"
    assert main(["utility", "--scenario", scenario("arb2"), "--out", out, "--grid", "5"]) == 0
    results = load_report(out, "utility")["results"]
    assert results["verdict"] == "ARBITRAGE-CONSISTENT"
    assert results["strategy"][0] == [0.5, 1.5]


def test_kernel_on_flat_scenario(tmp_path, scenario):
    out = str(tmp_path)
    assert main(["kernel", "--scenario", scenario("flat"), "--out", out, "--grid", "9"]) == 0
    results = load_report(out, "kernel")["results"]
    assert results["x_ref"] == [1.0]
    assert results["beta"] == pytest.approx([1.0] * 17, abs=1e-8)
    assert results["radon_nikodym"] == pytest.approx([1.0] * 17, abs=1e-8)
    assert results["verdict"] == "ARBITRAGE-FREE"


def test_kernel_requires_deterministic_scenario(tmp_path, scenario, capsys):
    code = main(["kernel", "--scenario", scenario("gbm"), "--out", str(tmp_path)])
    assert code == 2
    assert "cli.ConfigInvalid" in capsys.readouterr().err


def test_simulate_replays(tmp_path, scenario):
    out = str(tmp_path)
    args = ["simulate", "--scenario", scenario("gbm"), "--out", out, "--paths", "20", "--steps", "10"]
    assert main(args) == 0
    results = load_report(out, "simulate")["results"]
    assert results["replay_ok"] is True
    assert results["seed"] == 20240607
    assert results["paths"] == 20
    assert len(pd.read_csv(os.path.join(out, "simulate_ensemble.csv"))) == 20 * 11


def test_model_spectrum_analyzes_paths(tmp_path, scenario):
    out = str(tmp_path)
    args = ["spectrum", "--scenario", scenario("gbm"), "--out", out, "--paths", "20", "--steps", "8",
            "--grid", "5", "--seed", "1"]
    assert main(args) == 0
    results = load_report(out, "spectrum")["results"]
    assert results["paths"] == list(range(8))
    assert results["verdict"] == "ARBITRAGE-FREE"
    assert results["completeness"] == "NOT-APPLICABLE"
    # 与确定性分支输出相同的键
    assert len(results["lambda"]) == len(results["residuals"]) == 8
    assert results["kernel_dim"] >= 1
    assert results["mode"] == "nelson"
    assert max(results["lambda_min"]) < results["epsilon_kernel"]


def test_missing_scenario_is_a_config_error(tmp_path, capsys):
    code = main(["spectrum", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path)])
    assert code == 2
    assert "cli.ConfigInvalid" in capsys.readouterr().err


def test_stochastic_run_needs_a_seed(tmp_path, capsys):
    document = {"model": {"drift": [0.05], "volatility": [[0.2]], "initial_assets": [1.0], "initial_rates": [0.0]}}
    path = tmp_path / "unseeded.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    assert main(["simulate", "--scenario", str(path), "--out", str(tmp_path / "runs")]) == 2
    assert "cli.ConfigInvalid" in capsys.readouterr().err


def test_reports_are_not_overwritten_without_force(tmp_path, scenario, capsys):
    out = str(tmp_path)
    args = ["zc-test", "--scenario", scenario("flat"), "--out", out]
    assert main(args) == 0
    capsys.readouterr()
    assert main(args) == 2
    assert "cli.IoError" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_reports_are_reproducible(tmp_path, scenario):
    outputs = [str(tmp_path / "a"), str(tmp_path / "b")]
    for out in outputs:
        assert main(["spectrum", "--scenario", scenario("flat"), "--out", out, "--grid", "5"]) == 0
    first, second = (open(os.path.join(out, f"spectrum{REPORT_SUFFIX}"), "rb").read() for out in outputs)
    assert first == second


def test_report_summarizes_runs(tmp_path, scenario):
    out = str(tmp_path)
    assert main(["report", "--out", out]) == 2
    assert main(["zc-test", "--scenario", scenario("flat"), "--out", out]) == 0
    assert main(["curvature", "--scenario", scenario("flat"), "--out", out, "--grid", "5"]) == 0
    assert main(["report", "--out", out]) == 0
    summary = pd.read_csv(os.path.join(out, "summary.csv"))
    assert summary["subcommand"].tolist() == ["curvature", "zc-test"]
    assert summary["verdict"].tolist() == ["ZC", "ZC"]
    assert os.path.exists(os.path.join(out, "summary.json"))
