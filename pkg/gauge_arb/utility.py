"""
效用模块 - 合成债券组合的瞬时收益、期望效用最大化与一阶条件残差
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gauge_arb.arbitrage import Source, curvature_field, return_field
from gauge_arb.config import (
    DEFAULT_BINS,
    MIN_BIN_COUNT,
    UTILITY_FLAT_TOL,
    UTILITY_MAX_HORIZON,
    UTILITY_MAX_SWEEPS,
)
from gauge_arb.errors import (
    DimensionMismatch,
    NonConcaveDetected,
    ScenarioInvalid,
)
from gauge_arb.market_model import (
    MarketScenario,
    check_nonsingular,
    deflator_field,
    grid_nodes,
    weighted_rate_field,
)
from gauge_arb.utils import centered_gradient

logger = logging.getLogger(__name__)

UTILITY_KINDS = ("log", "power", "exponential")


@dataclass(frozen=True)
class UtilityFunction:
    """效用函数 scale·u(w) + shift，u 为 log、power(γ) 或 exponential(a)"""

    kind: str = "log"
    gamma: float = 2.0
    a: float = 1.0
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ScenarioInvalid(f"未知的效用函数: {self.kind}")
        if self.kind == "power" and (self.gamma <= 0.0 or self.gamma == 1.0):
            raise ScenarioInvalid("幂效用要求 γ > 0 且 γ ≠ 1（γ = 1 请使用 log）")
        if self.kind == "exponential" and self.a <= 0.0:
            raise ScenarioInvalid("指数效用要求 a > 0")
        if self.scale <= 0.0:
            raise ScenarioInvalid("仿射变换的 scale 必须为正")

    def _base(self, wealth: np.ndarray) -> np.ndarray:
        if self.kind == "log":
            return np.log(wealth)
        if self.kind == "power":
            return wealth ** (1.0 - self.gamma) / (1.0 - self.gamma)
        return -np.exp(-self.a * wealth) / self.a

    def __call__(self, wealth) -> np.ndarray:
        return self.scale * self._base(np.asarray(wealth, dtype=float)) + self.shift

    def rescaled(self, scale: float, shift: float) -> "UtilityFunction":
        return UtilityFunction(kind=self.kind, gamma=self.gamma, a=self.a,
                               scale=self.scale * scale, shift=self.shift * scale + shift)

    def check_shape(self, points: Sequence[float], step: float = 1e-4) -> bool:
        """在采样点上数值检查 u' > 0 且 u'' < 0"""
        w = np.asarray(points, dtype=float)
        up, mid, down = self(w + step), self(w), self(w - step)
        first = (up - down) / (2.0 * step)
        second = (up - 2.0 * mid + down) / step ** 2
        return bool(np.all(first > 0.0) and np.all(second < 0.0))


def instantaneous_return(source: Source, nominals: Sequence[float], time_index: int,
                         n_bins: int = DEFAULT_BINS, min_bin_count: int = MIN_BIN_COUNT) -> float:
    """合成债券组合的瞬时收益 Ret^x_t = 𝒟 log D^x_t + r^x_t

    路径集合时返回可用分箱上的平均值（等频分箱，即条件期望的均值）。
    """
    x = np.asarray(nominals, dtype=float)
    field = return_field(source, x[None, :], n_bins, min_bin_count)
    if not 0 <= time_index < field.time_grid.shape[0]:
        raise ScenarioInvalid(f"时间索引 {time_index} 超出网格范围")
    usable = field.usable[time_index]
    if not np.any(usable):
        return float("nan")
    return float(np.mean(field.values[0, time_index][usable]))


def _node_index(axes: Sequence[np.ndarray], nominals: np.ndarray) -> Tuple[int, ...]:
    index = []
    for axis, x in zip(axes, nominals):
        hits = np.flatnonzero(np.isclose(axis, x, rtol=0.0, atol=1e-12))
        if hits.size != 1:
            raise ScenarioInvalid(f"组合 {nominals.tolist()} 不是网格节点")
        if hits[0] == 0 or hits[0] == axis.shape[0] - 1:
            raise ScenarioInvalid(f"组合 {nominals.tolist()} 位于网格边界，中心差分不可用")
        index.append(int(hits[0]))
    return tuple(index)


def foc_residual(source: Source, nominals: Sequence[float], time_index: int,
                 axes: Optional[Sequence[np.ndarray]] = None, step: float = 1e-3) -> float:
    """一阶条件残差 ‖∂_x(𝒟 log D^x_t + r^x_t)‖

    给定 axes 时 x 必须是内部网格节点，结果与该网格上曲率场的范数逐位相同；
    否则在 x 周围以 step 为间距的三点模板上计算。
    """
    x = np.asarray(nominals, dtype=float)
    if x.shape != (source.n_assets,):
        raise DimensionMismatch(f"组合维数应为 {source.n_assets}")
    if axes is None:
        axes = [np.array([v - step, v, v + step]) for v in x]
    axes = [np.asarray(a, dtype=float) for a in axes]
    node = _node_index(axes, x)
    field = curvature_field(source, axes)
    norm = field.norm[node + (time_index,)]
    usable = field.usable[time_index]
    if not np.any(usable):
        return float("nan")
    return float(np.mean(norm[usable]))


@dataclass(frozen=True)
class UtilityResult:
    """期望效用最大化结果

    Attributes:
        strategy: 每个时间步的组合 (steps, N)
        node_indices: 策略在展平网格中的节点编号
        value: 最优期望效用
        foc_residuals: 沿最优策略各步的一阶条件残差
        verdict: FLAT / INTERIOR / ARBITRAGE-CONSISTENT（最优解落在边界）
    """

    strategy: np.ndarray
    node_indices: np.ndarray
    value: float
    foc_residuals: np.ndarray
    verdict: str
    start_index: int
    end_index: int

    @property
    def flat(self) -> bool:
        return self.verdict == "FLAT"

    @property
    def max_foc_residual(self) -> float:
        return float(np.max(self.foc_residuals)) if self.foc_residuals.size else 0.0


def _pathwise_returns(source: Source, nodes: np.ndarray) -> np.ndarray:
    """逐路径的瞬时收益，形状 (节点数, M, T+1)"""
    if isinstance(source, MarketScenario):
        deflators = deflator_field(source.deflators, nodes)
        check_nonsingular(deflators, source.deflator_floor)
        rates = weighted_rate_field(source.deflators, source.short_rates, nodes)
        values = centered_gradient(np.log(np.abs(deflators)), source.time_grid, axis=-1) + rates
        return values[:, None, :]
    assets = np.moveaxis(source.assets, -1, 0)
    rates = np.moveaxis(source.rates, -1, 0)
    blocks = []
    for x in nodes:
        deflators = deflator_field(assets, x)
        weighted = weighted_rate_field(assets, rates, x)
        blocks.append(centered_gradient(np.log(np.abs(deflators)), source.time_grid, axis=-1) + weighted)
    return np.array(blocks)


class _Objective:
    """离散策略的蒙特卡洛期望效用，初始财富归一化为 1"""

    def __init__(self, returns: np.ndarray, steps: np.ndarray, utility: UtilityFunction):
        self.returns = returns
        self.steps = steps
        self.utility = utility

    def _log_wealth(self, indices: np.ndarray) -> np.ndarray:
        log_wealth = np.zeros(self.returns.shape[1])
        for k, node in enumerate(indices):
            log_wealth += self.returns[node, :, k] * self.steps[k]
        return log_wealth

    def __call__(self, indices: np.ndarray) -> float:
        return float(np.mean(self.utility(np.exp(self._log_wealth(indices)))))

    def ascend(self, start: np.ndarray, tol: float) -> Tuple[np.ndarray, float]:
        indices = start.copy()
        log_wealth = self._log_wealth(indices)
        value = float(np.mean(self.utility(np.exp(log_wealth))))
        for _ in range(UTILITY_MAX_SWEEPS):
            improved = False
            for k in range(indices.shape[0]):
                # 一次评估第 k 步换成每个节点后的价值
                others = log_wealth - self.returns[indices[k], :, k] * self.steps[k]
                trials = others[None, :] + self.returns[:, :, k] * self.steps[k]
                candidates = np.mean(self.utility(np.exp(trials)), axis=1)
                node = int(np.argmax(candidates))
                if candidates[node] > value + tol:
                    indices[k] = node
                    log_wealth = trials[node]
                    value = float(candidates[node])
                    improved = True
            if not improved:
                break
        return indices, value


def maximize_expected_utility(source: Source, utility: UtilityFunction, start_index: int, horizon: float,
                              axes: Sequence[np.ndarray]) -> UtilityResult:
    """在网格取值、逐步常数的策略族上最大化 E[u(exp(∫_s^T Ret^{x_t}_t dt))]

    坐标上升从各角点与中心的常数策略出发；不同起点收敛到价值差超过容差的
    不同局部最优时抛出 NonConcaveDetected。期限 T − s 超过上限时截断。

    Args:
        source: 市场情景或路径集合
        utility: 效用函数
        start_index: 起始时间索引 s
        horizon: 期限 T − s（年）
        axes: 组合网格坐标轴

    Returns:
        UtilityResult
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    if len(axes) != source.n_assets:
        raise DimensionMismatch(f"需要 {source.n_assets} 个组合轴")
    grid = source.time_grid
    if not 0 <= start_index < grid.shape[0] - 1:
        raise ScenarioInvalid(f"起始索引 {start_index} 超出可用范围")
    if horizon > UTILITY_MAX_HORIZON:
        logger.warning(f"期限 {horizon} 年超过上限 {UTILITY_MAX_HORIZON} 年，已截断")
        horizon = UTILITY_MAX_HORIZON
    if horizon <= 0.0:
        raise ScenarioInvalid("期限必须为正")
    end_index = int(np.searchsorted(grid, grid[start_index] + horizon - 1e-12, side="left"))
    end_index = min(max(end_index, start_index + 1), grid.shape[0] - 1)

    shape = tuple(a.shape[0] for a in axes)
    nodes = grid_nodes(axes).reshape(-1, len(axes))
    returns = _pathwise_returns(source, nodes)[:, :, start_index:end_index]
    objective = _Objective(returns, np.diff(grid)[start_index:end_index], utility)
    n_steps = end_index - start_index

    constant_values = np.array([objective(np.full(n_steps, node)) for node in range(nodes.shape[0])])
    tol = UTILITY_FLAT_TOL * max(1.0, float(np.max(np.abs(constant_values))))
    center = int(np.ravel_multi_index(tuple(n // 2 for n in shape), shape))
    flat = bool(np.ptp(constant_values) < tol)

    starts = [center]
    for corner in np.ndindex(*(2,) * len(shape)):
        starts.append(int(np.ravel_multi_index(tuple(c * (n - 1) for c, n in zip(corner, shape)), shape)))
    optima: List[Tuple[np.ndarray, float]] = [objective.ascend(np.full(n_steps, s), tol) for s in starts]
    values = np.array([v for _, v in optima])
    best = int(np.argmax(values))
    if np.ptp(values) > tol:
        distinct = [tuple(ind.tolist()) for ind, _ in optima]
        raise NonConcaveDetected(
            f"坐标上升得到 {len(set(distinct))} 个不同局部最优，价值差 {np.ptp(values):.3e}")
    indices, value = optima[best]
    if flat:
        indices, value = np.full(n_steps, center), float(constant_values[center])

    curvature = curvature_field(source, axes)
    residuals = []
    for k, node in enumerate(indices):
        norm = curvature.norm[np.unravel_index(node, shape) + (start_index + k,)]
        usable = curvature.usable[start_index + k]
        residuals.append(float(np.mean(norm[usable])) if np.any(usable) else float("nan"))

    strategy = nodes[indices]
    on_boundary = any(
        np.any(np.isclose(strategy[:, j], axis[0]) | np.isclose(strategy[:, j], axis[-1]))
        for j, axis in enumerate(axes))
    verdict = "FLAT" if flat else ("ARBITRAGE-CONSISTENT" if on_boundary else "INTERIOR")
    logger.info(f"效用最大化完成: 价值 {value:.6g}, 判定 {verdict}")
    return UtilityResult(strategy=strategy, node_indices=indices, value=float(value),
                         foc_residuals=np.array(residuals), verdict=verdict,
                         start_index=int(start_index), end_index=int(end_index))
