"""
模拟模块 - 负责 Itô 市场模型的 Euler-Maruyama 路径生成、二次协变差以及自融资检验
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from gauge_arb.config import DEFAULT_MATURITY_OFFSETS, DEFAULT_PORTFOLIO_BOUNDS, EXPLOSION_BOUND
from gauge_arb.errors import ExplodedPath, GridMismatch, ScenarioInvalid
from gauge_arb.market_model import MarketScenario, scenario_from_arrays

logger = logging.getLogger(__name__)


class Coefficient:
    """模型系数 c(t, state) 的基类，输出形状 (M,) + shape"""

    kind = "base"

    def __init__(self, shape: Tuple[int, ...]):
        self.shape = tuple(shape)

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def state_dependent(self) -> bool:
        return False

    def _broadcast(self, values: np.ndarray, state: np.ndarray) -> np.ndarray:
        return np.broadcast_to(values, (state.shape[0],) + self.shape)


class ConstantCoefficient(Coefficient):
    kind = "constant"

    def __init__(self, value: Any):
        value = np.asarray(value, dtype=float)
        super().__init__(value.shape)
        self.value = value

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        return self._broadcast(self.value, state)


class AffineCoefficient(Coefficient):
    """c = intercept + slope ⊙ state；矩阵型系数按行广播状态分量"""

    kind = "affine"

    def __init__(self, intercept: Any, slope: Any):
        intercept = np.asarray(intercept, dtype=float)
        slope = np.asarray(slope, dtype=float)
        if intercept.shape != slope.shape:
            raise ScenarioInvalid("仿射系数的 intercept 与 slope 形状必须一致")
        super().__init__(intercept.shape)
        self.intercept = intercept
        self.slope = slope

    @property
    def state_dependent(self) -> bool:
        return bool(np.any(self.slope != 0.0))

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        expanded = state.reshape(state.shape + (1,) * (len(self.shape) - 1))
        return self.intercept + self.slope * expanded


class TableCoefficient(Coefficient):
    """按时间分段线性插值的查表系数"""

    kind = "table"

    def __init__(self, times: Sequence[float], values: Any):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or values.shape[0] != times.shape[0] or np.any(np.diff(times) <= 0.0):
            raise ScenarioInvalid("查表系数需要严格递增的 times 且 values 第一维与之等长")
        super().__init__(values.shape[1:])
        self.times = times
        self.values = values

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        flat = self.values.reshape(self.times.shape[0], -1)
        row = np.array([np.interp(t, self.times, flat[:, i]) for i in range(flat.shape[1])])
        return self._broadcast(row.reshape(self.shape), state)


def coefficient_from_config(doc: Any) -> Coefficient:
    """由配置构造系数：{"kind": "constant"|"affine"|"table", ...}，裸数组视为常数"""
    if not isinstance(doc, dict):
        return ConstantCoefficient(doc)
    kind = doc.get("kind", "constant")
    try:
        if kind == "constant":
            return ConstantCoefficient(doc["value"])
        if kind == "affine":
            return AffineCoefficient(doc["intercept"], doc["slope"])
        if kind == "table":
            return TableCoefficient(doc["times"], doc["values"])
    except KeyError as e:
        raise ScenarioInvalid(f"系数 '{kind}' 缺少字段: {e}")
    raise ScenarioInvalid(f"未知的系数类型: {kind}")


@dataclass(frozen=True)
class ItoModelSpec:
    """Itô 市场模型：dŜ = Ŝ⊙(α dt + σ dW)，dr = a dt + b dW

    短期利率与资产共享同一个 K 维布朗运动。
    """

    drift: Coefficient
    volatility: Coefficient
    initial_assets: np.ndarray
    initial_rates: np.ndarray
    rate_drift: Optional[Coefficient] = None
    rate_volatility: Optional[Coefficient] = None

    def __post_init__(self):
        s0 = np.asarray(self.initial_assets, dtype=float)
        r0 = np.asarray(self.initial_rates, dtype=float)
        n = s0.shape[0]
        if s0.ndim != 1 or r0.shape != s0.shape:
            raise ScenarioInvalid("初始资产值与初始短期利率必须是等长向量")
        if len(self.volatility.shape) != 2 or self.volatility.shape[0] != n:
            raise ScenarioInvalid(f"波动率系数形状应为 (N={n}, K)，实际为 {self.volatility.shape}")
        k = self.volatility.shape[1]
        rate_drift = self.rate_drift or ConstantCoefficient(np.zeros(n))
        rate_volatility = self.rate_volatility or ConstantCoefficient(np.zeros((n, k)))
        for name, coef, shape in (("drift", self.drift, (n,)), ("rate_drift", rate_drift, (n,)),
                                  ("rate_volatility", rate_volatility, (n, k))):
            if coef.shape != shape:
                raise ScenarioInvalid(f"系数 {name} 形状应为 {shape}，实际为 {coef.shape}")
        initial = s0[None, :]
        for coef, state in ((self.drift, initial), (self.volatility, initial),
                            (rate_drift, r0[None, :]), (rate_volatility, r0[None, :])):
            if not np.all(np.isfinite(coef(0.0, state))):
                raise ScenarioInvalid("模型系数在初始状态处不是有限值")
        object.__setattr__(self, "initial_assets", s0)
        object.__setattr__(self, "initial_rates", r0)
        object.__setattr__(self, "rate_drift", rate_drift)
        object.__setattr__(self, "rate_volatility", rate_volatility)

    @property
    def n_assets(self) -> int:
        return self.initial_assets.shape[0]

    @property
    def n_brownian(self) -> int:
        return self.volatility.shape[1]

    @property
    def deterministic_volatility(self) -> bool:
        return not self.volatility.state_dependent

    @classmethod
    def from_config(cls, doc: Dict[str, Any]) -> "ItoModelSpec":
        try:
            return cls(drift=coefficient_from_config(doc["drift"]),
                       volatility=coefficient_from_config(doc["volatility"]),
                       initial_assets=np.asarray(doc["initial_assets"], dtype=float),
                       initial_rates=np.asarray(doc["initial_rates"], dtype=float),
                       rate_drift=coefficient_from_config(doc["rate_drift"]) if "rate_drift" in doc else None,
                       rate_volatility=(coefficient_from_config(doc["rate_volatility"])
                                        if "rate_volatility" in doc else None))
        except KeyError as e:
            raise ScenarioInvalid(f"模型配置缺少字段: {e}")


@dataclass(frozen=True)
class PathEnsemble:
    """路径集合：资产值 (M, T+1, N)、短期利率 (M, T+1, N)、布朗增量 (M, T, K)"""

    time_grid: np.ndarray
    assets: np.ndarray
    rates: np.ndarray
    increments: np.ndarray
    seed: Optional[int] = None
    spec: Optional[ItoModelSpec] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("time_grid", "assets", "rates", "increments"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        m, n_nodes, n = self.assets.shape
        if self.time_grid.shape != (n_nodes,) or self.rates.shape != self.assets.shape:
            raise GridMismatch("路径数组与时间网格形状不一致")
        if self.increments.shape[:2] != (m, n_nodes - 1):
            raise GridMismatch("布朗增量的形状必须为 (M, T, K)")

    @property
    def n_paths(self) -> int:
        return self.assets.shape[0]

    @property
    def n_steps(self) -> int:
        return self.time_grid.shape[0] - 1

    @property
    def n_assets(self) -> int:
        return self.assets.shape[2]

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0])

    @property
    def stochastic(self) -> bool:
        return bool(np.any(self.increments != 0.0))

    @classmethod
    def from_arrays(cls, time_grid: Sequence[float], assets: np.ndarray,
                    rates: Optional[np.ndarray] = None, increments: Optional[np.ndarray] = None) -> "PathEnsemble":
        """由已有路径构造集合；二维输入视为单条路径 (T+1, N)"""
        assets = np.asarray(assets, dtype=float)
        if assets.ndim == 2:
            assets = assets[None]
        if rates is None:
            rates = np.zeros_like(assets)
        rates = np.asarray(rates, dtype=float)
        if rates.ndim == 2:
            rates = rates[None]
        if increments is None:
            increments = np.zeros((assets.shape[0], assets.shape[1] - 1, 1))
        return cls(time_grid=np.asarray(time_grid, dtype=float), assets=assets, rates=rates,
                   increments=np.asarray(increments, dtype=float))

    def component(self, index: int) -> np.ndarray:
        """第 index 个资产在所有路径上的值 (M, T+1)"""
        if not 0 <= index < self.n_assets:
            raise ScenarioInvalid(f"资产索引 {index} 越界")
        return self.assets[:, :, index]

    def scenario(self, path: int, portfolio_domain: Optional[Sequence[Sequence[float]]] = None,
                 maturity_offsets: Optional[Sequence[float]] = None) -> MarketScenario:
        """把单条路径视为确定性情景：资产值作为平减因子，期限结构取平坦远期"""
        if not 0 <= path < self.n_paths:
            raise ScenarioInvalid(f"路径索引 {path} 越界")
        domain = portfolio_domain if portfolio_domain is not None else \
            [list(DEFAULT_PORTFOLIO_BOUNDS)] * self.n_assets
        return scenario_from_arrays(self.time_grid, self.assets[path].T, short_rates=self.rates[path].T,
                                    portfolio_domain=domain,
                                    maturity_offsets=(maturity_offsets if maturity_offsets is not None
                                                      else DEFAULT_MATURITY_OFFSETS))

    def replay(self) -> bool:
        """用存储的增量重新执行格式，检查能否逐位复现存储路径"""
        if self.spec is None:
            raise ScenarioInvalid("集合未记录模型，无法重放")
        assets, rates = _euler_scheme(self.spec, self.time_grid, self.increments)
        return bool(np.array_equal(assets, self.assets) and np.array_equal(rates, self.rates))


def path_stream(seed: int, path: int) -> np.random.Generator:
    """以 (seed, path) 为密钥的 Philox 计数器生成器；步内按计数器顺序取数"""
    if seed < 0 or path < 0:
        raise ScenarioInvalid("种子与路径索引必须非负")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(path)))


def _euler_scheme(spec: ItoModelSpec, time_grid: np.ndarray,
                  increments: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    m, steps, _ = increments.shape
    n = spec.n_assets
    assets = np.empty((m, steps + 1, n))
    rates = np.empty((m, steps + 1, n))
    assets[:, 0] = spec.initial_assets
    rates[:, 0] = spec.initial_rates
    for k in range(steps):
        t = float(time_grid[k])
        dt = float(time_grid[k + 1] - time_grid[k])
        dw = increments[:, k, :]
        s, r = assets[:, k], rates[:, k]
        shock = np.einsum("mnk,mk->mn", spec.volatility(t, s), dw)
        assets[:, k + 1] = s + s * (spec.drift(t, s) * dt + shock)
        rates[:, k + 1] = r + spec.rate_drift(t, r) * dt + np.einsum("mnk,mk->mn", spec.rate_volatility(t, r), dw)
        blown = ~np.isfinite(assets[:, k + 1]) | (np.abs(assets[:, k + 1]) > EXPLOSION_BOUND)
        if np.any(blown):
            index = int(np.argmax(np.any(blown, axis=1)))
            raise ExplodedPath(f"路径 {index} 在第 {k + 1} 步超出界限 {EXPLOSION_BOUND:.0e}", index)
    return assets, rates


def simulate(spec: ItoModelSpec, horizon: float, steps: int, paths: int, seed: int) -> PathEnsemble:
    """Euler-Maruyama 模拟

    Args:
        spec: Itô 模型
        horizon: 模拟期限（年）
        steps: 时间步数，至少 2
        paths: 路径数，至少 1
        seed: 随机种子

    Returns:
        PathEnsemble，相同 (seed, paths, steps) 输入逐位可复现
    """
    if steps < 2 or paths < 1 or horizon <= 0.0:
        raise ScenarioInvalid("需要 steps ≥ 2、paths ≥ 1 且 horizon > 0")
    time_grid = np.linspace(0.0, horizon, steps + 1)
    dt = horizon / steps
    k = spec.n_brownian
    increments = np.empty((paths, steps, k))
    for p in range(paths):
        increments[p] = path_stream(seed, p).standard_normal((steps, k))
    increments *= np.sqrt(dt)
    logger.info(f"开始模拟: {paths} 条路径, {steps} 步, 种子 {seed}")
    assets, rates = _euler_scheme(spec, time_grid, increments)
    return PathEnsemble(time_grid=time_grid, assets=assets, rates=rates, increments=increments,
                        seed=seed, spec=spec)


def _check_same_grid(x: np.ndarray, y: np.ndarray, grid_x: Optional[np.ndarray],
                     grid_y: Optional[np.ndarray]) -> None:
    if x.shape != y.shape:
        raise GridMismatch(f"两条路径形状不一致: {x.shape} 与 {y.shape}")
    if grid_x is not None and grid_y is not None:
        grid_x, grid_y = np.asarray(grid_x, dtype=float), np.asarray(grid_y, dtype=float)
        if grid_x.shape != grid_y.shape or not np.allclose(grid_x, grid_y, rtol=0.0, atol=1e-12):
            raise GridMismatch("两条路径的时间网格不一致")


def quadratic_covariation(x: np.ndarray, y: np.ndarray, grid_x: Optional[np.ndarray] = None,
                          grid_y: Optional[np.ndarray] = None) -> np.ndarray:
    """离散二次协变差 ⟨X,Y⟩_{t_k} = Σ_{i<k} ΔX_i ΔY_i，沿最后一轴"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_same_grid(x, y, grid_x, grid_y)
    products = np.diff(x, axis=-1) * np.diff(y, axis=-1)
    bracket = np.zeros_like(x)
    bracket[..., 1:] = np.cumsum(products, axis=-1)
    return bracket


def self_financing_residual(nominals: np.ndarray, deflators: np.ndarray, time_grid: np.ndarray) -> float:
    """自融资检验 𝒟x·D + ½ d⟨x,D⟩/dt 的上确界范数

    nominals 与 deflators 形状均为 (..., T+1, N)。在内部节点上，𝒟x 取前向与后向差商的平均，
    括号速率取前向一步的 Δx·ΔD/Δt。
    """
    x = np.asarray(nominals, dtype=float)
    d = np.asarray(deflators, dtype=float)
    grid = np.asarray(time_grid, dtype=float)
    _check_same_grid(x, d, None, None)
    if x.shape[-2] != grid.shape[0] or grid.shape[0] < 3:
        raise GridMismatch("策略路径长度与时间网格不一致或节点过少")
    dt = np.diff(grid)[:, None]
    quotient = np.diff(x, axis=-2) / dt
    mean_derivative = 0.5 * (quotient[..., 1:, :] + quotient[..., :-1, :])
    bracket_rate = np.sum(np.diff(x, axis=-2) * np.diff(d, axis=-2) / dt, axis=-1)
    residual = np.sum(mean_derivative * d[..., 1:-1, :], axis=-1) + 0.5 * bracket_rate[..., 1:]
    return float(np.max(np.abs(residual)))


def bracket_correction(spec: ItoModelSpec, ensemble: PathEnsemble) -> np.ndarray:
    """逐分量的括号修正速率 c_j(t) = Σ_k d⟨σ_jk, W_k⟩/dt，按路径平均

    Returns:
        形状 (T+1, N)；确定性波动率时恒为零
    """
    n_nodes = ensemble.time_grid.shape[0]
    if spec.deterministic_volatility:
        return np.zeros((n_nodes, spec.n_assets))
    sigma = np.stack([spec.volatility(float(t), ensemble.assets[:, i])
                      for i, t in enumerate(ensemble.time_grid)], axis=1)
    d_sigma = np.diff(sigma, axis=1)
    rate = np.einsum("mtnk,mtk->tn", d_sigma, ensemble.increments) / (ensemble.n_paths * np.diff(ensemble.time_grid))[:, None]
    return np.vstack([rate, rate[-1:]])
