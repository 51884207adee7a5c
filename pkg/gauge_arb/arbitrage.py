"""
套利检验模块 - 负责瞬时收益场、曲率场、零曲率值域检验、风险市场价格与 Novikov 诊断
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from gauge_arb.config import (
    DEFAULT_BINS,
    DEFLATOR_FLOOR_RELATIVE,
    MIN_BIN_COUNT,
    RANK_TOL_RELATIVE,
    VANISHING_VOLATILITY,
    ZC_TOL_RELATIVE,
)
from gauge_arb.errors import DeflatorSingular, DimensionMismatch, ScenarioInvalid, VanishingVolatility
from gauge_arb.market_model import (
    MarketScenario,
    check_nonsingular,
    deflator_field,
    grid_nodes,
    weighted_rate_field,
)
from gauge_arb.nelson import mean_derivative
from gauge_arb.simulation import ItoModelSpec, PathEnsemble, bracket_correction
from gauge_arb.utils import centered_gradient

logger = logging.getLogger(__name__)

Source = Union[MarketScenario, PathEnsemble]


@dataclass(frozen=True)
class ReturnField:
    """瞬时收益 s(x,t) = 𝒟 log D^x_t + r^x_t

    values/stderr 形状 (*节点形状, T+1, B)；确定性情景 B = 1。
    usable 形状 (T+1, B)，对所有节点共享（分箱由公共条件变量决定）。
    """

    time_grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    usable: np.ndarray
    centers: Optional[np.ndarray] = None

    @property
    def stochastic(self) -> bool:
        return self.centers is not None


def _scenario_return(scenario: MarketScenario, nodes: np.ndarray) -> ReturnField:
    deflators = deflator_field(scenario.deflators, nodes)
    check_nonsingular(deflators, scenario.deflator_floor)
    rates = weighted_rate_field(scenario.deflators, scenario.short_rates, nodes)
    values = centered_gradient(np.log(np.abs(deflators)), scenario.time_grid, axis=-1) + rates
    n_times = scenario.time_grid.shape[0]
    return ReturnField(time_grid=scenario.time_grid, values=values[..., None], stderr=np.zeros_like(values)[..., None],
                       usable=np.ones((n_times, 1), dtype=bool))


def _ensemble_return(ensemble: PathEnsemble, nodes: np.ndarray, n_bins: int, min_bin_count: int,
                     condition_on: Optional[Sequence[float]]) -> ReturnField:
    flat = nodes.reshape(-1, nodes.shape[-1])
    assets = np.moveaxis(ensemble.assets, -1, 0)
    rates = np.moveaxis(ensemble.rates, -1, 0)
    floor = DEFLATOR_FLOOR_RELATIVE * np.max(np.abs(assets), axis=0)
    reference = np.asarray(condition_on, dtype=float) if condition_on is not None else flat.mean(axis=0)
    condition = np.log(np.abs(deflator_field(assets, reference)))

    values, stderr = [], []
    usable = None
    centers = None
    for x in flat:
        deflators = deflator_field(assets, x)
        if np.any(np.abs(deflators) < floor):
            raise DeflatorSingular(f"组合 {x.tolist()} 的平减因子在模拟路径上接近零")
        weighted = weighted_rate_field(assets, rates, x)
        process = np.log(np.abs(deflators)) + cumulative_trapezoid(weighted, ensemble.time_grid, axis=-1, initial=0.0)
        estimate = mean_derivative(ensemble, process, n_bins, min_bin_count, condition_on=condition)
        values.append(estimate.value)
        stderr.append(estimate.stderr)
        usable = estimate.usable if usable is None else usable & estimate.usable
        centers = estimate.center
    shape = nodes.shape[:-1] + values[0].shape
    return ReturnField(time_grid=ensemble.time_grid, values=np.array(values).reshape(shape),
                       stderr=np.array(stderr).reshape(shape), usable=usable, centers=centers)


def return_field(source: Source, nodes: np.ndarray, n_bins: int = DEFAULT_BINS,
                 min_bin_count: int = MIN_BIN_COUNT, condition_on: Optional[Sequence[float]] = None) -> ReturnField:
    """在组合节点上计算瞬时收益场

    确定性情景对 log|D^x| 做时间方向的经典差商；路径集合对
    Y^x = log|D^x| + ∫ r^x dt 做 Nelson 平均导数，以组合 condition_on（缺省为节点均值）
    的对数平减因子为公共条件变量分箱。

    Args:
        source: 市场情景或路径集合
        nodes: 组合节点，形状 (..., N)
        n_bins: 分箱数
        min_bin_count: 分箱最少样本数
        condition_on: 条件变量所用的组合

    Returns:
        ReturnField
    """
    nodes = np.asarray(nodes, dtype=float)
    n_assets = source.n_assets
    if nodes.shape[-1] != n_assets:
        raise DimensionMismatch(f"组合节点最后一维应为 {n_assets}，实际为 {nodes.shape[-1]}")
    if isinstance(source, MarketScenario):
        return _scenario_return(source, nodes)
    return _ensemble_return(source, nodes, n_bins, min_bin_count, condition_on)


@dataclass(frozen=True)
class CurvatureField:
    """曲率分量 R_j(x,t) = ∂_{x_j} s(x,t)，即 dx_j∧dt 的系数（g 因子取 1）"""

    axes: Tuple[np.ndarray, ...]
    time_grid: np.ndarray
    components: np.ndarray
    usable: np.ndarray

    @property
    def norm(self) -> np.ndarray:
        """逐节点的欧氏范数，形状 (*网格形状, T+1, B)"""
        return np.sqrt(np.sum(self.components ** 2, axis=0))

    @property
    def sup_norm(self) -> float:
        norm = self.norm[..., self.usable]
        if norm.size == 0:
            return float("nan")
        return float(np.max(norm))

    def at(self, node_index: Sequence[int], time_index: int, bin_index: int = 0) -> np.ndarray:
        return self.components[(slice(None),) + tuple(node_index) + (time_index, bin_index)]


def curvature_field(source: Source, axes: Sequence[np.ndarray], n_bins: int = DEFAULT_BINS,
                    min_bin_count: int = MIN_BIN_COUNT) -> CurvatureField:
    """在张量网格上计算曲率场：收益场 s 沿各组合轴的中心差分"""
    axes = tuple(np.asarray(axis, dtype=float) for axis in axes)
    if len(axes) != source.n_assets:
        raise DimensionMismatch(f"需要 {source.n_assets} 个组合轴，实际为 {len(axes)}")
    field = return_field(source, grid_nodes(axes), n_bins, min_bin_count)
    components = np.stack([centered_gradient(field.values, axis, axis=j) for j, axis in enumerate(axes)])
    result = CurvatureField(axes=axes, time_grid=field.time_grid, components=components, usable=field.usable)
    logger.info(f"曲率场计算完成，上确界范数 {result.sup_norm:.6g}")
    return result


@dataclass(frozen=True)
class RangeTestReport:
    """零曲率值域检验：v = α − ½c + r 在 Range(σ) 外的分量"""

    residual: float
    market_price_of_risk: np.ndarray
    rank: int
    rank_deficient: bool
    tolerance: float
    time: float = 0.0

    @property
    def verdict(self) -> str:
        return "ZC" if self.residual <= self.tolerance else "NOT-ZC"


def _target(alpha, sigma, rate, correction) -> Tuple[np.ndarray, np.ndarray]:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    rate = np.atleast_1d(np.asarray(rate, dtype=float))
    correction = np.zeros_like(alpha) if correction is None else np.atleast_1d(np.asarray(correction, dtype=float))
    n = alpha.shape[0]
    if sigma.shape[0] != n or rate.shape != (n,) or correction.shape != (n,):
        raise DimensionMismatch(
            f"维数不一致: α {alpha.shape}, σ {sigma.shape}, r {rate.shape}, 修正 {correction.shape}")
    return alpha - 0.5 * correction + rate, sigma


def zc_range_test(alpha: Sequence[float], sigma: np.ndarray, rate: Sequence[float],
                  correction: Optional[Sequence[float]] = None, time: float = 0.0) -> RangeTestReport:
    """最小二乘检验 α − ½c + r ∈ Range(σ)

    Args:
        alpha: 漂移向量 (N,)
        sigma: 波动率矩阵 (N, K)
        rate: 短期利率向量 (N,)
        correction: 括号修正速率 (N,)，确定性波动率时为零
        time: 报告所属时间

    Returns:
        RangeTestReport，容差为 ZC_TOL_RELATIVE·‖v‖
    """
    target, sigma = _target(alpha, sigma, rate, correction)
    singular = np.linalg.svd(sigma, compute_uv=False)
    largest = singular[0] if singular.size else 0.0
    lam, _, rank, _ = np.linalg.lstsq(sigma, target, rcond=RANK_TOL_RELATIVE)
    residual = float(np.linalg.norm(target - sigma @ lam))
    full_rank = min(sigma.shape)
    return RangeTestReport(residual=residual, market_price_of_risk=lam, rank=int(rank),
                           rank_deficient=bool(rank < full_rank or largest == 0.0),
                           tolerance=ZC_TOL_RELATIVE * float(np.linalg.norm(target)), time=float(time))


def market_price_of_risk(alpha: Sequence[float], sigma: np.ndarray, rate: Sequence[float],
                         correction: Optional[Sequence[float]] = None) -> Tuple[np.ndarray, float]:
    """风险市场价格 λ = argmin ‖σλ − v‖（秩亏时取最小范数解）及残差"""
    report = zc_range_test(alpha, sigma, rate, correction)
    if report.rank_deficient:
        logger.warning(f"σ 秩亏 (rank={report.rank})，返回最小范数解")
    return report.market_price_of_risk, report.residual


def _state_bins(ensemble: PathEnsemble, time_index: int, n_bins: int,
                min_bin_count: int) -> List[np.ndarray]:
    """按参考组合（各资产一份）的对数平减因子把路径分成等样本量的箱"""
    reference = np.ones(ensemble.n_assets)
    condition = np.log(np.abs(ensemble.assets[:, time_index, :] @ reference))
    count = max(1, min(n_bins, ensemble.n_paths // max(min_bin_count, 1)))
    order = np.argsort(condition, kind="stable")
    return [chunk for chunk in np.array_split(order, count) if chunk.size]


def zc_range_report(spec: ItoModelSpec, time_grid: Sequence[float], ensemble: Optional[PathEnsemble] = None,
                    n_bins: int = DEFAULT_BINS, min_bin_count: int = MIN_BIN_COUNT) -> List[RangeTestReport]:
    """在每个时间节点上执行值域检验

    有集合时按参考组合的对数平减因子分箱，系数在每个箱的平均状态处取值，
    每个时间节点报告残差最大的箱；无集合时取初始状态。括号修正由集合估计。
    """
    if ensemble is None:
        grid = np.asarray(time_grid, dtype=float)
        reports = [zc_range_test(spec.drift(float(t), spec.initial_assets[None, :])[0],
                                 spec.volatility(float(t), spec.initial_assets[None, :])[0],
                                 spec.initial_rates, time=float(t)) for t in grid]
    else:
        correction = bracket_correction(spec, ensemble)
        reports = []
        for i, t in enumerate(ensemble.time_grid):
            worst = None
            for members in _state_bins(ensemble, i, n_bins, min_bin_count):
                s = ensemble.assets[members, i, :].mean(axis=0)[None, :]
                r = ensemble.rates[members, i, :].mean(axis=0)
                report = zc_range_test(spec.drift(float(t), s)[0], spec.volatility(float(t), s)[0], r,
                                       correction[i], time=float(t))
                if worst is None or report.residual - report.tolerance > worst.residual - worst.tolerance:
                    worst = report
            reports.append(worst)
    failing = sum(report.verdict != "ZC" for report in reports)
    logger.info(f"值域检验完成: {len(reports)} 个时间节点, {failing} 个不满足零曲率条件")
    return reports


@dataclass(frozen=True)
class NovikovReport:
    """Novikov 期望 E[exp(½∫(α^x/|σ^x|)² du)] 的蒙特卡洛估计与尾部诊断"""

    estimate: float
    stderr: float
    growth_slope: float
    samples: int

    @property
    def verdict(self) -> str:
        return "diverging" if self.growth_slope >= 1.0 else "consistent with finite"


def _growth_slope(samples: np.ndarray) -> float:
    """对数样本最大值随样本量加倍的增长斜率"""
    sizes = []
    size = samples.shape[0]
    while size >= 8:
        sizes.append(size)
        size //= 2
    if len(sizes) < 2:
        return 0.0
    log_max = np.array([np.log(np.max(samples[:m])) for m in sizes])
    if np.ptp(log_max) == 0.0:
        return 0.0
    return float(np.polyfit(np.log(sizes), log_max, 1)[0])


def novikov_diagnostic(spec: ItoModelSpec, nominals: Sequence[float], horizon: float,
                       ensemble: PathEnsemble) -> NovikovReport:
    """组合 x 的 Novikov 条件诊断

    α^x 与 σ^x 为以 x_j Ŝ_j / D^x 加权的资产系数；|σ^x| 低于阈值且 α^x ≠ 0 时报错。
    数值上无法证明有限性，报告只给出“consistent with finite”或“diverging”。
    """
    x = np.asarray(nominals, dtype=float)
    if x.shape != (spec.n_assets,):
        raise DimensionMismatch(f"组合维数应为 {spec.n_assets}")
    grid = ensemble.time_grid
    if horizon <= 0.0 or horizon > grid[-1] + 1e-12:
        raise ScenarioInvalid(f"Novikov 期限 {horizon} 超出模拟区间 (0, {grid[-1]}]")
    steps = int(np.searchsorted(grid, horizon - 1e-12, side="left"))
    exponent = np.zeros(ensemble.n_paths)
    for k in range(steps):
        t = float(grid[k])
        s = ensemble.assets[:, k]
        total = s @ x
        weights = x * s / total[:, None]
        alpha = np.sum(weights * spec.drift(t, s), axis=1)
        sigma = np.einsum("mn,mnk->mk", weights, spec.volatility(t, s))
        size = np.linalg.norm(sigma, axis=1)
        if np.any((size < VANISHING_VOLATILITY) & (alpha != 0.0)):
            raise VanishingVolatility(f"组合波动率在 t={t:.6g} 处低于 {VANISHING_VOLATILITY:.0e}")
        ratio = np.divide(alpha, size, out=np.zeros_like(alpha), where=size >= VANISHING_VOLATILITY)
        exponent += 0.5 * ratio ** 2 * (min(grid[k + 1], horizon) - t)
    samples = np.exp(exponent)
    stderr = float(samples.std(ddof=1) / np.sqrt(samples.shape[0])) if samples.shape[0] > 1 else 0.0
    report = NovikovReport(estimate=float(samples.mean()), stderr=stderr,
                           growth_slope=_growth_slope(samples), samples=samples.shape[0])
    logger.info(f"Novikov 估计 {report.estimate:.6g} ± {report.stderr:.2g}, 判定: {report.verdict}")
    return report


def scenario_range_report(scenario: MarketScenario) -> List[RangeTestReport]:
    """确定性情景的值域检验

    α_j 取 log|D^j| 的时间差商；定价核的漂移对所有资产相同，因此值域取
    span{(1, ..., 1)}。v 落在其中当且仅当 s(x,t) 与 x 无关，即曲率为零。
    """
    growth = centered_gradient(np.log(np.abs(scenario.deflators)), scenario.time_grid, axis=-1)
    sigma = np.ones((scenario.n_assets, 1))
    return [zc_range_test(growth[:, i], sigma, scenario.short_rates[:, i], time=float(t))
            for i, t in enumerate(scenario.time_grid)]
