"""
数据处理模块 - 负责把路径集合、曲率网格、导数估计、特征截面与报告摘要导出为CSV
"""

import logging
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from gauge_arb.arbitrage import CurvatureField, RangeTestReport
from gauge_arb.laplacian import PricingKernel, SpectralResult
from gauge_arb.market_model import grid_nodes
from gauge_arb.nelson import DerivativeEstimate
from gauge_arb.simulation import PathEnsemble

logger = logging.getLogger(__name__)


class DataProcessor:
    """数据导出类，所有CSV带表头、逗号分隔、小数点为"." """

    @staticmethod
    def _write(df: pd.DataFrame, output_path: str, what: str) -> bool:
        try:
            df.to_csv(output_path, index=False, float_format="%.17g")
            logger.info(f"{what}已导出到: {output_path}")
            return True
        except Exception as e:
            logger.error(f"导出{what}失败: {e}")
            return False

    @staticmethod
    def ensemble_frame(ensemble: PathEnsemble) -> pd.DataFrame:
        m, n_times, n = ensemble.assets.shape
        frame = {
            "path": np.repeat(np.arange(m), n_times),
            "step": np.tile(np.arange(n_times), m),
            "time": np.tile(ensemble.time_grid, m),
        }
        for j in range(n):
            frame[f"asset_{j + 1}"] = ensemble.assets[:, :, j].ravel()
        for j in range(n):
            frame[f"rate_{j + 1}"] = ensemble.rates[:, :, j].ravel()
        return pd.DataFrame(frame)

    @staticmethod
    def export_ensemble(ensemble: PathEnsemble, output_path: str) -> bool:
        """路径集合：列 path, step, time, asset_1..N, rate_1..N"""
        return DataProcessor._write(DataProcessor.ensemble_frame(ensemble), output_path, "路径集合")

    @staticmethod
    def curvature_frame(field: CurvatureField) -> pd.DataFrame:
        nodes = grid_nodes(field.axes).reshape(-1, len(field.axes))
        n_times, n_bins = field.usable.shape
        repeat = n_times * n_bins
        frame = {f"x_{j + 1}": np.repeat(nodes[:, j], repeat) for j in range(nodes.shape[1])}
        frame["time"] = np.tile(np.repeat(field.time_grid, n_bins), nodes.shape[0])
        frame["bin"] = np.tile(np.arange(n_bins), nodes.shape[0] * n_times)
        for j in range(field.components.shape[0]):
            frame[f"R_{j + 1}"] = field.components[j].ravel()
        frame["norm"] = field.norm.ravel()
        frame["usable"] = np.tile(field.usable.ravel(), nodes.shape[0])
        return pd.DataFrame(frame)

    @staticmethod
    def export_curvature(field: CurvatureField, output_path: str) -> bool:
        return DataProcessor._write(DataProcessor.curvature_frame(field), output_path, "曲率网格")

    @staticmethod
    def export_estimate(estimate: DerivativeEstimate, output_path: str) -> bool:
        """导数估计：列 time, bin_center, value, stderr, n（只保留非空分箱）"""
        filled = estimate.count > 0
        times = np.broadcast_to(estimate.time_grid[:, None], estimate.count.shape)
        df = pd.DataFrame({
            "time": times[filled],
            "bin_center": estimate.center[filled],
            "value": estimate.value[filled],
            "stderr": estimate.stderr[filled],
            "n": estimate.count[filled],
            "usable": estimate.usable[filled],
        })
        return DataProcessor._write(df, output_path, f"{estimate.kind} 导数估计")

    @staticmethod
    def export_sections(result: SpectralResult, output_path: str) -> bool:
        """特征截面：列 time, x_1..x_N, section_0..section_{k-1}"""
        coords = [result.time_grid, *result.axes]
        mesh = grid_nodes(coords).reshape(-1, len(coords))
        frame = {"time": mesh[:, 0]}
        for j in range(1, len(coords)):
            frame[f"x_{j}"] = mesh[:, j]
        for i, section in enumerate(result.sections):
            frame[f"section_{i}"] = section.ravel()
        return DataProcessor._write(pd.DataFrame(frame), output_path, "特征截面")

    @staticmethod
    def export_pricing_kernel(kernel: PricingKernel, radon_nikodym: Sequence[float], output_path: str) -> bool:
        df = pd.DataFrame({"time": kernel.time_grid, "beta": kernel.values,
                           "radon_nikodym": np.asarray(radon_nikodym, dtype=float)})
        return DataProcessor._write(df, output_path, "定价核")

    @staticmethod
    def export_range_reports(reports: List[RangeTestReport], output_path: str) -> bool:
        df = pd.DataFrame({
            "time": [r.time for r in reports],
            "residual": [r.residual for r in reports],
            "verdict": [r.verdict for r in reports],
        })
        return DataProcessor._write(df, output_path, "值域检验")

    @staticmethod
    def summarize_reports(reports: List[Dict]) -> pd.DataFrame:
        """把各子命令报告压缩为一行一份的摘要表"""
        rows = []
        for report in reports:
            results = report.get("results", {})
            rows.append({
                "subcommand": report.get("subcommand", ""),
                "config_hash": report.get("config_hash", ""),
                "version": report.get("version", ""),
                "verdict": results.get("verdict", ""),
            })
        return pd.DataFrame(rows, columns=["subcommand", "config_hash", "version", "verdict"])

    @staticmethod
    def export_summary(reports: List[Dict], output_path: str) -> bool:
        if not reports:
            logger.warning("运行目录中没有可汇总的报告")
            return False
        return DataProcessor._write(DataProcessor.summarize_reports(reports), output_path, "报告摘要")
