import numpy as np
import pandas as pd
import pytest

from conftest import exponential_scenario
from gauge_arb.arbitrage import curvature_field, scenario_range_report
from gauge_arb.data_processor import DataProcessor
from gauge_arb.laplacian import extract_pricing_kernel, spectrum
from gauge_arb.nelson import forward_derivative
from gauge_arb.simulation import simulate


def test_ensemble_export(tmp_path, gbm_model):
    ensemble = simulate(gbm_model, 1.0, 4, 3, seed=1)
    path = tmp_path / "paths.csv"
    assert DataProcessor.export_ensemble(ensemble, str(path))
    df = pd.read_csv(path)
    assert list(df.columns) == ["path", "step", "time", "asset_1", "rate_1"]
    assert len(df) == 3 * 5
    np.testing.assert_allclose(df["asset_1"].to_numpy(), ensemble.assets[:, :, 0].ravel(), rtol=1e-15)


def test_curvature_export(tmp_path, arbitrage_scenario):
    axes = [np.linspace(0.5, 1.5, 3)] * 2
    field = curvature_field(arbitrage_scenario, axes)
    path = tmp_path / "curvature.csv"
    assert DataProcessor.export_curvature(field, str(path))
    df = pd.read_csv(path)
    assert len(df) == 9 * arbitrage_scenario.time_grid.size
    assert {"x_1", "x_2", "time", "bin", "R_1", "R_2", "norm", "usable"} <= set(df.columns)
    row = df[(df["x_1"] == 1.0) & (df["x_2"] == 1.0) & (df["time"] == 0.0)].iloc[0]
    assert row["norm"] == pytest.approx(field.norm[1, 1, 0, 0], rel=1e-15)


def test_estimate_export_skips_empty_bins(tmp_path, gbm_model):
    ensemble = simulate(gbm_model, 1.0, 3, 10, seed=2)
    estimate = forward_derivative(ensemble, 0, n_bins=4, min_bin_count=2)
    path = tmp_path / "forward.csv"
    assert DataProcessor.export_estimate(estimate, str(path))
    df = pd.read_csv(path)
    assert len(df) == 3 * 4
    assert df["n"].sum() == 3 * 10


def test_section_and_kernel_export(tmp_path, flat_scenario):
    axes = [np.linspace(0.5, 1.5, 5)]
    result = spectrum(flat_scenario, axes, k=2)
    path = tmp_path / "sections.csv"
    assert DataProcessor.export_sections(result, str(path))
    df = pd.read_csv(path)
    assert list(df.columns) == ["time", "x_1", "section_0", "section_1"]
    assert len(df) == flat_scenario.time_grid.size * 5

    kernel = extract_pricing_kernel(result.section(0), flat_scenario, [1.0])
    path = tmp_path / "kernel.csv"
    assert DataProcessor.export_pricing_kernel(kernel, np.ones_like(kernel.values), str(path))
    assert list(pd.read_csv(path).columns) == ["time", "beta", "radon_nikodym"]


def test_range_report_export(tmp_path):
    reports = scenario_range_report(exponential_scenario([0.01, 0.03], [0.0, 0.0], n_times=3))
    path = tmp_path / "zc.csv"
    assert DataProcessor.export_range_reports(reports, str(path))
    assert list(pd.read_csv(path)["verdict"]) == ["NOT-ZC"] * 3


def test_summary(tmp_path):
    reports = [
        {"subcommand": "spectrum", "config_hash": "h1", "version": "1", "results": {"verdict": "ARBITRAGE"}},
        {"subcommand": "simulate", "config_hash": "h2", "version": "1", "results": {"replay_ok": True}},
    ]
    summary = DataProcessor.summarize_reports(reports)
    assert summary["verdict"].tolist() == ["ARBITRAGE", ""]
    assert not DataProcessor.export_summary([], str(tmp_path / "summary.csv"))
    assert DataProcessor.export_summary(reports, str(tmp_path / "summary.csv"))


def test_write_failure_returns_false(tmp_path, gbm_model):
    ensemble = simulate(gbm_model, 1.0, 2, 2, seed=0)
    assert not DataProcessor.export_ensemble(ensemble, str(tmp_path / "missing" / "paths.csv"))
