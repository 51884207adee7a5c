"""
命令行模块 - 情景载入 → 模拟 → 曲率 / 值域检验 / 谱分析 / 定价核 / 效用，输出机器可读报告
"""

import argparse
import dataclasses
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from gauge_arb.arbitrage import (
    curvature_field,
    scenario_range_report,
    zc_range_report,
)
from gauge_arb.config import (
    APP_NAME,
    APP_VERSION,
    CURVATURE_TOL,
    DEFAULT_EIGEN_TOL,
    DEFAULT_EIGENPAIRS,
    DEFAULT_PORTFOLIO_BOUNDS,
    DEFAULT_SIMULATION,
    ENSEMBLE_SPECTRUM_PATHS,
    EXIT_NUMERICAL_ERROR,
    EXIT_OK,
    REPORT_SUFFIX,
    SUMMARY_CSV,
    SUMMARY_JSON,
    UTILITY_MAX_HORIZON,
)
from gauge_arb.data_processor import DataProcessor
from gauge_arb.errors import ConfigInvalid, GaugeArbError, IoError, ScenarioInvalid
from gauge_arb.laplacian import (
    analyze_ensemble,
    extract_pricing_kernel,
    is_complete,
    is_nflvr,
    radon_nikodym,
    spectrum,
)
from gauge_arb.market_model import MarketScenario, load_scenario
from gauge_arb.settings_manager import SUBCOMMANDS, RunConfig, SettingsManager
from gauge_arb.simulation import ItoModelSpec, PathEnsemble, simulate
from gauge_arb.utility import UtilityFunction, maximize_expected_utility
from gauge_arb.utils import canonical_json, config_hash

logger = logging.getLogger(__name__)

Inputs = Tuple[Dict[str, Any], Optional[MarketScenario], Optional[ItoModelSpec]]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description="几何套利分析：曲率、值域条件与联络拉普拉斯谱")
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--scenario", help="情景JSON文件")
    parser.add_argument("--out", default="runs", help="运行目录")
    parser.add_argument("--config", help="提供参数默认值的JSON文件")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--grid", type=int, help="每个组合轴的节点数")
    parser.add_argument("--k", type=int, default=DEFAULT_EIGENPAIRS, help="特征对数量")
    parser.add_argument("--tol", type=float, default=DEFAULT_EIGEN_TOL, help="特征求解容差")
    parser.add_argument("--epsilon-kernel", dest="epsilon_kernel", type=float,
                        help="核判定阈值，缺省时自动校准")
    parser.add_argument("--mode", choices=("classical", "nelson"), default="nelson", help="时间方向导数模式")
    parser.add_argument("--horizon", type=float)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--paths", type=int)
    parser.add_argument("--u", dest="utility", choices=("log", "power", "exp"), default="log")
    parser.add_argument("--gamma", type=float, default=2.0)
    parser.add_argument("--a", type=float, default=1.0)
    parser.add_argument("--start", type=float, default=0.0)
    parser.add_argument("--x-ref", dest="x_ref", type=float, nargs="+")
    parser.add_argument("--force", action="store_true", help="允许覆盖已有报告")
    parser.add_argument("--verbose", action="store_true", help="输出 INFO 级日志")
    return parser


def parse_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """解析命令行；--config 文件中的键作为参数默认值，命令行显式参数优先"""
    parser = build_parser()
    known, _ = parser.parse_known_args(argv)
    if known.config:
        defaults = SettingsManager.load_json(known.config)
        if defaults is None:
            raise ConfigInvalid(f"无法读取配置文件: {known.config}")
        parser.set_defaults(**{key.replace("-", "_"): value for key, value in defaults.items()})
    args = parser.parse_args(argv)
    values = vars(args)
    values.pop("config")
    if values["utility"] == "exp":
        values["utility"] = "exponential"
    if values["x_ref"] is not None:
        values["x_ref"] = tuple(values["x_ref"])
    return RunConfig(**values)


def load_inputs(config: RunConfig) -> Inputs:
    """读取情景文档，返回 (文档, 确定性情景, Itô 模型)"""
    document = SettingsManager.load_json(config.scenario)
    if document is None:
        raise ConfigInvalid(f"无法读取情景文件: {config.scenario}")
    scenario = load_scenario(document) if "assets" in document else None
    spec = ItoModelSpec.from_config(document["model"]) if "model" in document else None
    if scenario is None and spec is None:
        raise ConfigInvalid("情景文件需要包含 'assets'（确定性情景）或 'model'（Itô 模型）")
    return document, scenario, spec


def _simulation_params(config: RunConfig, document: Dict[str, Any]) -> Dict[str, Any]:
    params = dict(DEFAULT_SIMULATION)
    params.update(document.get("simulation", {}))
    for key in ("steps", "paths", "seed"):
        if getattr(config, key) is not None:
            params[key] = getattr(config, key)
    if config.subcommand == "simulate" and config.horizon is not None:
        params["horizon"] = config.horizon
    if params.get("seed") is None:
        raise ConfigInvalid("随机运行必须提供 --seed 或情景中的 simulation.seed")
    return params


def _ensemble(config: RunConfig, document: Dict[str, Any], spec: ItoModelSpec) -> PathEnsemble:
    params = _simulation_params(config, document)
    return simulate(spec, float(params["horizon"]), int(params["steps"]), int(params["paths"]), int(params["seed"]))


def _axes(config: RunConfig, document: Dict[str, Any], n_assets: int) -> List[np.ndarray]:
    domain = document.get("portfolio_domain", [list(DEFAULT_PORTFOLIO_BOUNDS)] * n_assets)
    if len(domain) != n_assets:
        raise ScenarioInvalid("portfolio_domain 的维数与资产数不一致")
    return [np.linspace(lo, hi, config.grid_size()) for lo, hi in domain]


def _source(config: RunConfig, inputs: Inputs) -> Union[MarketScenario, PathEnsemble]:
    document, scenario, spec = inputs
    return scenario if scenario is not None else _ensemble(config, document, spec)


def _artifact(config: RunConfig, name: str) -> str:
    return os.path.join(config.out, f"{config.subcommand}_{name}.csv")


def _run_simulate(config: RunConfig, inputs: Inputs) -> Tuple[Dict[str, Any], List[str]]:
    document, _, spec = inputs
    if spec is None:
        raise ConfigInvalid("simulate 子命令需要情景中的 'model'")
    ensemble = _ensemble(config, document, spec)
    terminal = ensemble.assets[:, -1, :]
    path = _artifact(config, "ensemble")
    artifacts = [path] if DataProcessor.export_ensemble(ensemble, path) else []
    results = {
        "paths": ensemble.n_paths,
        "steps": ensemble.n_steps,
        "seed": ensemble.seed,
        "horizon": float(ensemble.time_grid[-1]),
        "terminal_mean": terminal.mean(axis=0),
        "terminal_stderr": terminal.std(axis=0, ddof=1) / np.sqrt(ensemble.n_paths) if ensemble.n_paths > 1
        else np.zeros(ensemble.n_assets),
        "replay_ok": ensemble.replay(),
    }
    return results, artifacts


def _run_curvature(config: RunConfig, inputs: Inputs) -> Tuple[Dict[str, Any], List[str]]:
    source = _source(config, inputs)
    field = curvature_field(source, _axes(config, inputs[0], source.n_assets))
    norm = field.norm
    times = []
    for i, t in enumerate(field.time_grid):
        usable = field.usable[i]
        residual = float(np.max(norm[..., i, :][..., usable])) if np.any(usable) else float("nan")
        times.append({"time": float(t), "residual": residual,
                      "verdict": "ZC" if residual < CURVATURE_TOL else "NOT-ZC"})
    path = _artifact(config, "grid")
    artifacts = [path] if DataProcessor.export_curvature(field, path) else []
    results = {"sup_norm": field.sup_norm, "tolerance": CURVATURE_TOL,
               "verdict": "ZC" if field.sup_norm < CURVATURE_TOL else "NOT-ZC", "times": times}
    return results, artifacts


def _run_zc_test(config: RunConfig, inputs: Inputs) -> Tuple[Dict[str, Any], List[str]]:
    document, scenario, spec = inputs
    if scenario is not None:
        reports = scenario_range_report(scenario)
    else:
        ensemble = _ensemble(config, document, spec)
        reports = zc_range_report(spec, ensemble.time_grid, ensemble)
    path = _artifact(config, "residuals")
    artifacts = [path] if DataProcessor.export_range_reports(reports, path) else []
    results = {
        "verdict": "ZC" if all(r.verdict == "ZC" for r in reports) else "NOT-ZC",
        "max_residual": max(r.residual for r in reports),
        "times": [{"time": r.time, "residual": r.residual, "verdict": r.verdict,
                   "market_price_of_risk": r.market_price_of_risk, "rank_deficient": r.rank_deficient}
                  for r in reports],
    }
    return results, artifacts


def _run_spectrum(config: RunConfig, inputs: Inputs) -> Tuple[Dict[str, Any], List[str]]:
    document, scenario, spec = inputs
    if scenario is None:
        ensemble = _ensemble(config, document, spec)
        analysis = analyze_ensemble(ensemble, _axes(config, document, spec.n_assets), config.k, config.tol,
                                    config.epsilon_kernel, paths=range(min(ENSEMBLE_SPECTRUM_PATHS, ensemble.n_paths)),
                                    mode=config.mode)
        results = {
            "lambda": [r.eigenvalues for r in analysis.results],
            "lambda_min": analysis.lambda_min,
            "residuals": [r.residuals for r in analysis.results],
            "verdict": analysis.verdict,
            "kernel_dim": analysis.kernel_dimension,
            "completeness": "NOT-APPLICABLE",
            "grid": config.grid_size(),
            "epsilon_kernel": analysis.epsilon_kernel,
            "mode": analysis.mode,
            "paths": list(analysis.paths),
        }
        return results, []
    result = spectrum(scenario, scenario.axes(config.grid_size()), config.k, config.tol, config.mode,
                      epsilon_kernel=config.epsilon_kernel)
    path = _artifact(config, "sections")
    artifacts = [path] if DataProcessor.export_sections(result, path) else []
    results = {
        "lambda": result.eigenvalues,
        "lambda_min": result.lambda_min,
        "residuals": result.residuals,
        "verdict": is_nflvr(result).verdict,
        "kernel_dim": result.kernel_dimension(),
        "completeness": is_complete(result),
        "grid": config.grid_size(),
        "epsilon_kernel": result.epsilon_kernel,
        "mode": config.mode,
    }
    return results, artifacts


def _reference(config: RunConfig, axes: List[np.ndarray]) -> np.ndarray:
    """参考组合取最接近给定值（缺省为定义域中心）的网格节点"""
    target = np.array(config.x_ref) if config.x_ref is not None else np.array([0.5 * (a[0] + a[-1]) for a in axes])
    if target.shape != (len(axes),):
        raise ConfigInvalid(f"--x-ref 需要 {len(axes)} 个分量")
    return np.array([a[int(np.argmin(np.abs(a - v)))] for a, v in zip(axes, target)])


def _run_kernel(config: RunConfig, inputs: Inputs) -> Tuple[Dict[str, Any], List[str]]:
    _, scenario, _ = inputs
    if scenario is None:
        raise ConfigInvalid("kernel 子命令需要确定性情景（'assets'）")
    axes = scenario.axes(config.grid_size())
    result = spectrum(scenario, axes, config.k, config.tol, config.mode, epsilon_kernel=config.epsilon_kernel)
    section = result.section(0)
    kernel = extract_pricing_kernel(section, scenario, _reference(config, axes), seed=config.seed or 0)
    density = [radon_nikodym(section, scenario, i) for i in range(scenario.time_grid.shape[0])]
    path = _artifact(config, "kernel")
    artifacts = [path] if DataProcessor.export_pricing_kernel(kernel, density, path) else []
    results = {
        "x_ref": kernel.reference,
        "beta": kernel.values,
        "radon_nikodym": density,
        "residual": kernel.residual,
        "lambda_min": result.lambda_min,
        "verdict": is_nflvr(result).verdict,
        "epsilon_kernel": result.epsilon_kernel,
    }
    return results, artifacts


def _run_utility(config: RunConfig, inputs: Inputs) -> Tuple[Dict[str, Any], List[str]]:
    source = _source(config, inputs)
    utility = UtilityFunction(kind=config.utility, gamma=config.gamma, a=config.a)
    start_index = int(np.argmin(np.abs(source.time_grid - config.start)))
    horizon = config.horizon if config.horizon is not None else UTILITY_MAX_HORIZON
    optimum = maximize_expected_utility(source, utility, start_index, horizon,
                                        _axes(config, inputs[0], source.n_assets))
    results = {
        "utility": config.utility,
        "value": optimum.value,
        "strategy": optimum.strategy,
        "foc_residuals": optimum.foc_residuals,
        "max_foc_residual": optimum.max_foc_residual,
        "verdict": optimum.verdict,
        "start_index": optimum.start_index,
        "end_index": optimum.end_index,
    }
    return results, []


def _run_report(config: RunConfig) -> List[str]:
    manager = SettingsManager(config.out, force=True)
    reports = manager.load_reports()
    csv_path = manager.path_for(SUMMARY_CSV)
    json_path = manager.path_for(SUMMARY_JSON)
    if not DataProcessor.export_summary(reports, csv_path):
        raise IoError(f"无法写出报告摘要: {csv_path}")
    try:
        with open(json_path, 'w', encoding='utf-8') as f:
            f.write(canonical_json(DataProcessor.summarize_reports(reports).to_dict(orient="records")))
    except OSError as e:
        raise IoError(f"无法写出报告摘要: {e}")
    return [csv_path, json_path]


HANDLERS: Dict[str, Callable[[RunConfig, Inputs], Tuple[Dict[str, Any], List[str]]]] = {
    "simulate": _run_simulate,
    "curvature": _run_curvature,
    "zc-test": _run_zc_test,
    "spectrum": _run_spectrum,
    "kernel": _run_kernel,
    "utility": _run_utility,
}


def _execute(subcommand: str, config: RunConfig) -> List[str]:
    if subcommand == "report":
        config.validate()
        return _run_report(config)
    config.validate()
    inputs = load_inputs(config)
    document, scenario, _ = inputs
    seed = config.seed if config.seed is not None else document.get("simulation", {}).get("seed")
    config = dataclasses.replace(config, seed=seed, scenario_digest=config_hash(document))
    config.validate(stochastic=scenario is None)
    manager = SettingsManager(config.out, force=config.force)
    name = subcommand.replace("-", "_")
    if manager.report_exists(name) and not config.force:
        raise IoError(f"运行目录中已有 {name} 报告，使用 --force 覆盖")

    results, artifacts = HANDLERS[subcommand](config, inputs)
    report = {
        "subcommand": subcommand,
        "config_hash": config.hash,
        "version": APP_VERSION,
        "scenario": document.get("name", ""),
        "results": results,
    }
    if not manager.save_report(name, report):
        raise IoError(f"无法写出报告: {manager.path_for(name, REPORT_SUFFIX)}")
    manager.save_metadata(name, config)
    return artifacts + [manager.path_for(name, REPORT_SUFFIX)]


def run(subcommand: str, config: RunConfig) -> Tuple[int, List[str]]:
    """执行一个子命令

    Returns:
        (退出码, 产物路径列表)。分析完成即返回 0，判定结果只出现在报告中；
        配置/IO 错误返回 2，数值失败返回 3。
    """
    try:
        artifacts = _execute(subcommand, config)
        return EXIT_OK, artifacts
    except GaugeArbError as e:
        logger.error(f"{e.qualified_code}: {e}")
        print(f"{e.qualified_code}: {e}", file=sys.stderr)
        return e.exit_code, []
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as e:
        logger.error(f"数值计算失败: {e}")
        print(f"numerical.{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR, []


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令行入口"""
    try:
        config = parse_config(argv)
    except GaugeArbError as e:
        print(f"{e.qualified_code}: {e}", file=sys.stderr)
        return e.exit_code
    if config.verbose:
        logging.getLogger().setLevel(logging.INFO)
    code, artifacts = run(config.subcommand, config)
    for path in artifacts:
        print(path)
    return code
