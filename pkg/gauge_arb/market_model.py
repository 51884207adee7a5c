"""
市场模型模块 - 负责规范（平减因子与期限结构）、市场情景以及组合层面的
平减因子、远期利率与短期利率计算
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from gauge_arb.config import (
    DEFAULT_MATURITY_OFFSETS,
    DEFAULT_PORTFOLIO_BOUNDS,
    DEFLATOR_FLOOR_RELATIVE,
)
from gauge_arb.errors import (
    DeflatorSingular,
    MaturityOutOfRange,
    NonPositiveTermStructure,
    ScenarioInvalid,
)

logger = logging.getLogger(__name__)


def _frozen(values: Any, ndim: int, name: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise ScenarioInvalid(f"{name} 维数应为 {ndim}，实际为 {array.ndim}")
    if not np.all(np.isfinite(array)):
        raise ScenarioInvalid(f"{name} 含有非有限数值")
    array.setflags(write=False)
    return array


def forward_from_term_structure(term_structure: np.ndarray, maturity_offsets: np.ndarray) -> np.ndarray:
    """由期限结构计算瞬时远期利率 f = -∂_s log P

    Args:
        term_structure: 期限结构曲面 P[t_i, u_k]，u 为到期偏移
        maturity_offsets: 到期偏移网格

    Returns:
        远期利率曲面，内部节点为中心差分，端点为二阶单侧差分
    """
    term_structure = np.asarray(term_structure, dtype=float)
    offsets = np.asarray(maturity_offsets, dtype=float)
    if np.any(term_structure <= 0.0):
        raise NonPositiveTermStructure("期限结构必须严格为正")
    edge_order = 2 if offsets.shape[0] >= 3 else 1
    return -np.gradient(np.log(term_structure), offsets, axis=-1, edge_order=edge_order)


def term_structure_from_forward(forward_rates: np.ndarray, maturity_offsets: np.ndarray) -> np.ndarray:
    """由瞬时远期利率重建期限结构 P = exp(-∫ f)，梯形求积，P[t,t] 严格为 1"""
    forward_rates = np.asarray(forward_rates, dtype=float)
    if not np.all(np.isfinite(forward_rates)):
        raise ScenarioInvalid("远期利率曲面含有非有限数值")
    exponent = cumulative_trapezoid(forward_rates, np.asarray(maturity_offsets, dtype=float),
                                    axis=-1, initial=0.0)
    term_structure = np.exp(-exponent)
    term_structure[..., 0] = 1.0
    return term_structure


def short_rate_from_term_structure(term_structure: np.ndarray, maturity_offsets: np.ndarray) -> np.ndarray:
    """短期利率取远期利率曲面在第一个到期节点处的值（u→0⁺ 极限）"""
    return forward_from_term_structure(term_structure, maturity_offsets)[..., 0]


def flat_term_structure(short_rate: np.ndarray, maturity_offsets: Sequence[float]) -> np.ndarray:
    """以短期利率构造平坦远期的期限结构 exp(-r_t u)"""
    rates = np.asarray(short_rate, dtype=float)
    offsets = np.asarray(maturity_offsets, dtype=float)
    return np.exp(-np.outer(rates, offsets))


@dataclass(frozen=True)
class Gauge:
    """单一资产的规范：平减因子路径与期限结构曲面"""

    deflator: np.ndarray
    term_structure: np.ndarray
    maturity_offsets: np.ndarray
    name: str = ""

    def __post_init__(self):
        deflator = _frozen(self.deflator, 1, "deflator")
        offsets = _frozen(self.maturity_offsets, 1, "maturity_offsets")
        term_structure = np.array(self.term_structure, dtype=float)
        if term_structure.shape != (deflator.shape[0], offsets.shape[0]):
            raise ScenarioInvalid(
                f"期限结构形状 {term_structure.shape} 与 (时间 {deflator.shape[0]}, 到期 {offsets.shape[0]}) 不符")
        if offsets.shape[0] < 2 or offsets[0] != 0.0 or np.any(np.diff(offsets) <= 0.0):
            raise ScenarioInvalid("到期偏移必须从 0 开始严格递增且至少两个节点")
        if not np.all(np.isfinite(term_structure)) or np.any(term_structure <= 0.0):
            raise NonPositiveTermStructure(f"资产 '{self.name}' 的期限结构必须为正的有限值")
        if np.any(np.abs(term_structure[:, 0] - 1.0) > 1e-9):
            raise ScenarioInvalid(f"资产 '{self.name}' 的期限结构对角线 P[t,t] 必须为 1")
        term_structure[:, 0] = 1.0
        term_structure.setflags(write=False)
        object.__setattr__(self, "deflator", deflator)
        object.__setattr__(self, "maturity_offsets", offsets)
        object.__setattr__(self, "term_structure", term_structure)

    @cached_property
    def forward_rates(self) -> np.ndarray:
        return forward_from_term_structure(self.term_structure, self.maturity_offsets)

    @property
    def short_rate(self) -> np.ndarray:
        return self.forward_rates[:, 0]

    def log_term_structure(self, time_index: int, offsets: np.ndarray) -> np.ndarray:
        """在任意到期偏移处插值 log P（节点间线性，超出网格后按最后一段远期利率外推）"""
        offsets = np.asarray(offsets, dtype=float)
        grid = self.maturity_offsets
        log_p = np.log(self.term_structure[time_index])
        values = np.interp(offsets, grid, log_p)
        tail_slope = (log_p[-1] - log_p[-2]) / (grid[-1] - grid[-2])
        beyond = offsets > grid[-1]
        if np.any(beyond):
            values = np.where(beyond, log_p[-1] + tail_slope * (offsets - grid[-1]), values)
        return values

    def term_structure_at(self, time_index: int, offsets: np.ndarray) -> np.ndarray:
        return np.exp(self.log_term_structure(time_index, offsets))


@dataclass(frozen=True)
class MarketScenario:
    """市场情景：N 个资产规范、共享时间网格、短期利率与组合定义域"""

    time_grid: np.ndarray
    assets: Tuple[Gauge, ...]
    short_rates: np.ndarray
    portfolio_domain: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        time_grid = _frozen(self.time_grid, 1, "time_grid")
        if time_grid.shape[0] < 2 or np.any(np.diff(time_grid) <= 0.0):
            raise ScenarioInvalid("时间网格必须严格递增且至少包含两个节点")
        assets = tuple(self.assets)
        if not assets:
            raise ScenarioInvalid("情景中至少需要一个资产")
        for gauge in assets:
            if gauge.deflator.shape[0] != time_grid.shape[0]:
                raise ScenarioInvalid(f"资产 '{gauge.name}' 的路径长度与时间网格不一致")
        short_rates = _frozen(self.short_rates, 2, "short_rates")
        if short_rates.shape != (len(assets), time_grid.shape[0]):
            raise ScenarioInvalid(f"短期利率形状 {short_rates.shape} 与资产/时间网格不符")
        domain = _frozen(self.portfolio_domain, 2, "portfolio_domain")
        if domain.shape != (len(assets), 2) or np.any(domain[:, 0] >= domain[:, 1]):
            raise ScenarioInvalid("组合定义域必须是每个资产一个 [lo, hi] 且 lo < hi")
        object.__setattr__(self, "time_grid", time_grid)
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "short_rates", short_rates)
        object.__setattr__(self, "portfolio_domain", domain)
        self._check_domain()

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @cached_property
    def deflators(self) -> np.ndarray:
        """形状 (N, T+1) 的资产平减因子矩阵"""
        stacked = np.vstack([gauge.deflator for gauge in self.assets])
        stacked.setflags(write=False)
        return stacked

    @cached_property
    def deflator_floor(self) -> np.ndarray:
        return DEFLATOR_FLOOR_RELATIVE * np.max(np.abs(self.deflators), axis=0)

    def _check_domain(self) -> None:
        lo = self.portfolio_domain[:, 0][:, None] * self.deflators
        hi = self.portfolio_domain[:, 1][:, None] * self.deflators
        lowest = np.minimum(lo, hi).sum(axis=0)
        highest = np.maximum(lo, hi).sum(axis=0)
        floor = self.deflator_floor
        crossing = (lowest < floor) & (highest > -floor)
        if np.any(crossing):
            first = int(np.argmax(crossing))
            raise DeflatorSingular(
                f"组合定义域在 t={self.time_grid[first]:.6g} 处与奇异区域 |D^x| < floor 相交")

    def contains(self, nominals: np.ndarray) -> bool:
        x = np.asarray(nominals, dtype=float)
        return bool(np.all(x >= self.portfolio_domain[:, 0]) and np.all(x <= self.portfolio_domain[:, 1]))

    def axes(self, nodes: int) -> List[np.ndarray]:
        """组合定义域上每个轴的均匀网格"""
        return [np.linspace(lo, hi, nodes) for lo, hi in self.portfolio_domain]

    def with_deflators(self, deflators: np.ndarray) -> "MarketScenario":
        """返回替换平减因子后的新情景（期限结构与短期利率不变）"""
        assets = tuple(
            Gauge(deflator=deflators[j], term_structure=gauge.term_structure,
                  maturity_offsets=gauge.maturity_offsets, name=gauge.name)
            for j, gauge in enumerate(self.assets)
        )
        return MarketScenario(time_grid=self.time_grid, assets=assets, short_rates=self.short_rates,
                              portfolio_domain=self.portfolio_domain, metadata=dict(self.metadata))

    def restricted(self, time_indices: Sequence[int], short_rates: Optional[np.ndarray] = None) -> "MarketScenario":
        """抽取部分时间节点（可同时替换短期利率，形状按原时间网格给出）"""
        index = np.asarray(time_indices, dtype=int)
        rates = self.short_rates if short_rates is None else np.asarray(short_rates, dtype=float)
        assets = tuple(
            Gauge(deflator=gauge.deflator[index], term_structure=gauge.term_structure[index],
                  maturity_offsets=gauge.maturity_offsets, name=gauge.name)
            for gauge in self.assets
        )
        return MarketScenario(time_grid=self.time_grid[index], assets=assets, short_rates=rates[:, index],
                              portfolio_domain=self.portfolio_domain, metadata=dict(self.metadata))


@dataclass(frozen=True)
class PortfolioPoint:
    """组合点：名义持仓向量与时间网格索引"""

    nominals: np.ndarray
    time_index: int

    @classmethod
    def create(cls, scenario: MarketScenario, nominals: Sequence[float], time_index: int) -> "PortfolioPoint":
        x = _nominals(scenario, nominals)
        _time_index(scenario, time_index)
        if not scenario.contains(x):
            raise ScenarioInvalid(f"名义持仓 {x.tolist()} 不在组合定义域内")
        return cls(nominals=x, time_index=int(time_index))


def _nominals(scenario: MarketScenario, nominals: Sequence[float]) -> np.ndarray:
    x = np.asarray(nominals, dtype=float)
    if x.shape != (scenario.n_assets,) or not np.all(np.isfinite(x)):
        raise ScenarioInvalid(f"名义持仓必须是长度为 {scenario.n_assets} 的有限向量")
    return x


def _time_index(scenario: MarketScenario, time_index: int) -> int:
    if not 0 <= int(time_index) < scenario.time_grid.shape[0]:
        raise ScenarioInvalid(f"时间索引 {time_index} 超出网格范围")
    return int(time_index)


def deflator_field(deflators: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """批量计算 D^x：nodes 形状 (..., N)，deflators 形状 (N, T+1)，结果 (..., T+1)"""
    nodes = np.asarray(nodes, dtype=float)
    total = nodes[..., 0, None] * deflators[0]
    for j in range(1, deflators.shape[0]):
        total = total + nodes[..., j, None] * deflators[j]
    return total


def weighted_rate_field(deflators: np.ndarray, rates: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """批量计算平减因子加权利率 Σ_j x_j D^j r^j / D^x"""
    nodes = np.asarray(nodes, dtype=float)
    numerator = nodes[..., 0, None] * deflators[0] * rates[0]
    for j in range(1, deflators.shape[0]):
        numerator = numerator + nodes[..., j, None] * deflators[j] * rates[j]
    return numerator / deflator_field(deflators, nodes)


def check_nonsingular(values: np.ndarray, floor: np.ndarray, where: str = "") -> None:
    """检查 |D^x| 是否低于奇异阈值"""
    if np.any(np.abs(values) < floor):
        raise DeflatorSingular(f"组合平减因子接近零{where}，后续除法将发散")


def portfolio_deflator(scenario: MarketScenario, nominals: Sequence[float], time_index: int) -> float:
    """组合平减因子 D^x_t = Σ_j x_j D^j_t"""
    x = _nominals(scenario, nominals)
    t = _time_index(scenario, time_index)
    value = float(deflator_field(scenario.deflators[:, t:t + 1], x)[0])
    check_nonsingular(np.array([value]), scenario.deflator_floor[t:t + 1],
                      f" (x={x.tolist()}, t={scenario.time_grid[t]:.6g})")
    return value


def _weights(scenario: MarketScenario, nominals: Sequence[float], time_index: int) -> np.ndarray:
    x = _nominals(scenario, nominals)
    t = _time_index(scenario, time_index)
    total = portfolio_deflator(scenario, x, t)
    return x * scenario.deflators[:, t] / total


def portfolio_short_rate(scenario: MarketScenario, nominals: Sequence[float], time_index: int) -> float:
    """组合短期利率：资产短期利率的平减因子加权平均"""
    weights = _weights(scenario, nominals, time_index)
    return float(np.dot(weights, scenario.short_rates[:, int(time_index)]))


def portfolio_forward_rate(scenario: MarketScenario, nominals: Sequence[float], time_index: int,
                           maturity_offset: float) -> float:
    """组合瞬时远期利率 f^x_{t,u}，各资产远期曲面在到期方向线性插值"""
    weights = _weights(scenario, nominals, time_index)
    rates = []
    for gauge in scenario.assets:
        offsets = gauge.maturity_offsets
        if not offsets[0] <= maturity_offset <= offsets[-1]:
            raise MaturityOutOfRange(
                f"到期偏移 {maturity_offset} 超出资产 '{gauge.name}' 的范围 [{offsets[0]}, {offsets[-1]}]")
        rates.append(np.interp(maturity_offset, offsets, gauge.forward_rates[int(time_index)]))
    return float(np.dot(weights, rates))


def portfolio_term_structure(scenario: MarketScenario, nominals: Sequence[float], time_index: int,
                             maturity_offset: float) -> float:
    """组合期限结构 P^x_{t,t+u} = exp(-∫_0^u f^x_{t,h} dh)"""
    if maturity_offset == 0.0:
        return 1.0
    weights = _weights(scenario, nominals, time_index)
    t = int(time_index)
    nodes = sorted({0.0, float(maturity_offset), *[
        float(u) for gauge in scenario.assets for u in gauge.maturity_offsets if u < maturity_offset]})
    grid = np.array(nodes)
    forward = np.zeros_like(grid)
    for weight, gauge in zip(weights, scenario.assets):
        if maturity_offset > gauge.maturity_offsets[-1]:
            raise MaturityOutOfRange(f"到期偏移 {maturity_offset} 超出资产 '{gauge.name}' 的范围")
        forward += weight * np.interp(grid, gauge.maturity_offsets, gauge.forward_rates[t])
    return float(np.exp(-trapezoid(forward, grid)))


def scenario_from_arrays(time_grid: Sequence[float], deflators: np.ndarray,
                         short_rates: Optional[np.ndarray] = None,
                         portfolio_domain: Optional[Sequence[Sequence[float]]] = None,
                         term_structures: Optional[Sequence[np.ndarray]] = None,
                         maturity_offsets: Optional[Sequence[float]] = None,
                         names: Optional[Sequence[str]] = None) -> MarketScenario:
    """由数组构造市场情景

    Args:
        time_grid: 时间网格（年）
        deflators: 形状 (N, T+1) 的平减因子
        short_rates: 形状 (N, T+1) 的短期利率；缺省时由期限结构推出
        portfolio_domain: 每个资产的 [lo, hi]，缺省为 DEFAULT_PORTFOLIO_BOUNDS
        term_structures: 每个资产的期限结构曲面；缺省时由短期利率构造平坦远期曲面
        maturity_offsets: 到期偏移网格
        names: 资产名称

    Returns:
        MarketScenario 实例
    """
    deflators = np.atleast_2d(np.asarray(deflators, dtype=float))
    n_assets, n_times = deflators.shape
    offsets = np.asarray(maturity_offsets if maturity_offsets is not None else DEFAULT_MATURITY_OFFSETS,
                         dtype=float)
    if short_rates is None and term_structures is None:
        raise ScenarioInvalid("短期利率与期限结构至少需要提供一个")
    if term_structures is None:
        rates = np.atleast_2d(np.asarray(short_rates, dtype=float))
        term_structures = [flat_term_structure(rates[j], offsets) for j in range(n_assets)]
    if short_rates is None:
        short_rates = np.vstack([short_rate_from_term_structure(np.asarray(p, dtype=float), offsets)
                                 for p in term_structures])
    if portfolio_domain is None:
        portfolio_domain = [list(DEFAULT_PORTFOLIO_BOUNDS)] * n_assets
    names = list(names) if names is not None else [f"asset_{j + 1}" for j in range(n_assets)]
    assets = tuple(
        Gauge(deflator=deflators[j], term_structure=term_structures[j], maturity_offsets=offsets, name=names[j])
        for j in range(n_assets)
    )
    return MarketScenario(time_grid=np.asarray(time_grid, dtype=float), assets=assets,
                          short_rates=np.atleast_2d(np.asarray(short_rates, dtype=float)),
                          portfolio_domain=np.asarray(portfolio_domain, dtype=float))


def load_scenario(document: Dict[str, Any]) -> MarketScenario:
    """从情景JSON文档构造市场情景

    文档字段：共享 "time_grid"；"assets" 列表，每项含 "deflator"、可选 "short_rate"、
    可选 "term_structure"（行优先）与 "maturity_offsets"；"portfolio_domain" 为每轴 [lo, hi]。
    """
    try:
        time_grid = document["time_grid"]
        asset_docs = document["assets"]
    except KeyError as e:
        raise ScenarioInvalid(f"情景文档缺少字段: {e}")
    if not isinstance(asset_docs, list) or not asset_docs:
        raise ScenarioInvalid("'assets' 必须是非空列表")

    n_times = len(time_grid)
    assets = []
    rates = []
    for j, asset in enumerate(asset_docs):
        name = asset.get("name", f"asset_{j + 1}")
        if "deflator" not in asset:
            raise ScenarioInvalid(f"资产 '{name}' 缺少 'deflator'")
        offsets = np.asarray(asset.get("maturity_offsets", DEFAULT_MATURITY_OFFSETS), dtype=float)
        if "term_structure" in asset:
            term_structure = np.asarray(asset["term_structure"], dtype=float)
            if term_structure.ndim == 1:
                term_structure = term_structure.reshape(n_times, offsets.shape[0])
        elif "short_rate" in asset:
            term_structure = flat_term_structure(asset["short_rate"], offsets)
        else:
            raise ScenarioInvalid(f"资产 '{name}' 需要 'short_rate' 或 'term_structure'")
        gauge = Gauge(deflator=asset["deflator"], term_structure=term_structure,
                      maturity_offsets=offsets, name=name)
        assets.append(gauge)
        rates.append(asset["short_rate"] if "short_rate" in asset else gauge.short_rate)

    domain = document.get("portfolio_domain", [list(DEFAULT_PORTFOLIO_BOUNDS)] * len(assets))
    scenario = MarketScenario(time_grid=np.asarray(time_grid, dtype=float), assets=tuple(assets),
                              short_rates=np.asarray(rates, dtype=float),
                              portfolio_domain=np.asarray(domain, dtype=float),
                              metadata={"name": document.get("name", "")})
    logger.info(f"已载入情景: {len(assets)} 个资产, {n_times} 个时间节点")
    return scenario


def grid_nodes(axes: Sequence[np.ndarray]) -> np.ndarray:
    """由各轴坐标生成张量网格节点，形状 (n_1, ..., n_N, N)"""
    mesh = np.meshgrid(*[np.asarray(axis, dtype=float) for axis in axes], indexing="ij")
    return np.stack(mesh, axis=-1)
