"""
联络拉普拉斯模块 - 在 (t, x) 网格上离散协变导数，组装 Neumann 边界的联络拉普拉斯算子，
计算低端谱并据此判定 NFLVR / 完备性，提取定价核与 Radon-Nikodym 导数
"""

import dataclasses
import logging
from dataclasses import dataclass
from functools import reduce
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from gauge_arb.arbitrage import ReturnField, return_field
from gauge_arb.config import (
    CALIBRATION_FACTOR,
    CALIBRATION_STRIDE,
    DEFAULT_BINS,
    DEFAULT_EIGEN_TOL,
    DEFAULT_EIGENPAIRS,
    DENSE_EIGEN_LIMIT,
    DENSE_FALLBACK_LIMIT,
    EIGEN_MAX_ITER,
    EIGEN_SHIFT,
    EPSILON_KERNEL_FLOOR,
    INCONCLUSIVE_FACTOR,
    KERNEL_CHECK_NODES,
    MAX_ASSETS_ON_GRID,
    MIN_BIN_COUNT,
    NOISE_FACTOR,
    RN_SPREAD_TOL,
    SIGN_TOLERANCE,
)
from gauge_arb.errors import (
    DimensionMismatch,
    NoConvergence,
    NotApplicable,
    ScenarioInvalid,
    SignChange,
    XDependence,
)
from gauge_arb.market_model import (
    MarketScenario,
    check_nonsingular,
    deflator_field,
    grid_nodes,
    weighted_rate_field,
)
from gauge_arb.simulation import PathEnsemble
from gauge_arb.utils import centered_gradient

logger = logging.getLogger(__name__)

ARBITRAGE_FREE = "ARBITRAGE-FREE"
INCONCLUSIVE = "INCONCLUSIVE"
ARBITRAGE = "ARBITRAGE"
TIME_DERIVATIVE_MODES = ("classical", "nelson")


def trapezoid_weights(coords: np.ndarray) -> np.ndarray:
    """一维梯形求积权重，端点取半格"""
    coords = np.asarray(coords, dtype=float)
    steps = np.diff(coords)
    weights = np.empty_like(coords)
    weights[0] = 0.5 * steps[0]
    weights[-1] = 0.5 * steps[-1]
    weights[1:-1] = 0.5 * (steps[:-1] + steps[1:])
    return weights


def _along(values: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = -1
    return values.reshape(shape)


@dataclass(frozen=True)
class SectionGrid:
    """张量网格 (时间 × 组合轴) 上的标量截面，values 形状 (T+1, n_1, ..., n_N)"""

    values: np.ndarray
    time_grid: np.ndarray
    axes: Tuple[np.ndarray, ...]

    @property
    def coords(self) -> List[np.ndarray]:
        return [self.time_grid, *self.axes]

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(float(np.max(np.diff(c))) for c in self.coords)

    def measure(self) -> np.ndarray:
        """梯形测度下的节点权重，形状同 values"""
        weights = [trapezoid_weights(c) for c in self.coords]
        return reduce(np.multiply.outer, weights)

    def normalized(self) -> "SectionGrid":
        norm = np.sqrt(np.sum(self.measure() * self.values ** 2))
        return SectionGrid(values=self.values / norm, time_grid=self.time_grid, axes=self.axes)


@dataclass(frozen=True)
class CovariantOperator:
    """堆叠的方向协变导数 [∇_t; ∇_{x_1}; ...]，每行对应一条网格边

    边 (a, b) 上的行为 (f_b τ^{1/2} − f_a τ^{-1/2}) / h，τ 为沿边的平行移动因子：
    x_j 方向 τ = D^x_b / D^x_a（即 exp∫K_j，K_j = D^j/D^x），时间方向 τ = exp(−∫ r^x dt)。
    nelson 模式下时间方向 τ = (D^x_b / D^x_a)·exp(−∫ s dt)，s 为估计的瞬时收益，
    等价于有效利率 s − 𝒟 log|D^x|。
    网格外没有边，Neumann 条件 ∇_ν f = 0 由此自然成立。
    """

    matrix: sp.csr_matrix
    edge_weights: np.ndarray
    node_weights: np.ndarray
    edge_direction: np.ndarray
    connection: np.ndarray
    time_grid: np.ndarray
    axes: Tuple[np.ndarray, ...]
    time_derivative_mode: str = "classical"

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        return (self.time_grid.shape[0],) + tuple(a.shape[0] for a in self.axes)

    def apply(self, section: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(section, dtype=float).ravel()

    def directional_sup(self, section: np.ndarray) -> np.ndarray:
        """各方向 |∇f| 的上确界，下标 0 为时间方向"""
        rows = np.abs(self.apply(section))
        return np.array([np.max(rows[self.edge_direction == d], initial=0.0)
                         for d in range(len(self.axes) + 1)])


def _grid_fields(scenario: MarketScenario, axes: Tuple[np.ndarray, ...], time_derivative_mode: str,
                 returns: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray], np.ndarray]:
    nodes = grid_nodes(axes)
    deflators = deflator_field(scenario.deflators, nodes)
    check_nonsingular(deflators, scenario.deflator_floor, "（网格与奇异区域相交）")
    log_deflator = np.log(np.abs(deflators))
    if time_derivative_mode == "classical":
        rates = weighted_rate_field(scenario.deflators, scenario.short_rates, nodes)
    else:
        if returns is None:
            returns = return_field(scenario, nodes).values[..., 0]
        returns = np.asarray(returns, dtype=float)
        if returns.shape != deflators.shape:
            raise DimensionMismatch(f"收益场形状应为 {deflators.shape}，实际为 {returns.shape}")
        rates = returns - centered_gradient(log_deflator, scenario.time_grid, axis=-1)
        returns = np.moveaxis(returns, -1, 0)
    # 统一为时间轴在前
    connection = [np.moveaxis(-rates, -1, 0)]
    for j in range(scenario.n_assets):
        connection.append(np.moveaxis(scenario.deflators[j] / deflators, -1, 0))
    return np.moveaxis(log_deflator, -1, 0), np.moveaxis(rates, -1, 0), returns, np.stack(connection)


def assemble_covariant(scenario: MarketScenario, axes: Sequence[np.ndarray], time_derivative_mode: str = "classical",
                       returns: Optional[np.ndarray] = None) -> CovariantOperator:
    """组装协变导数算子

    Args:
        scenario: 确定性市场情景（或单条路径的情景视图）
        axes: 每个资产一个组合坐标轴（须位于组合定义域内）
        time_derivative_mode: "classical" 用 r^x 作时间方向联络；"nelson" 用瞬时收益场
        returns: nelson 模式的收益场 (*网格形状, T+1)；缺省时由情景的时间差商计算

    Returns:
        CovariantOperator
    """
    if time_derivative_mode not in TIME_DERIVATIVE_MODES:
        raise ScenarioInvalid(f"未知的时间导数模式: {time_derivative_mode}")
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    if len(axes) != scenario.n_assets:
        raise DimensionMismatch(f"需要 {scenario.n_assets} 个组合轴，实际为 {len(axes)}")
    if scenario.n_assets > MAX_ASSETS_ON_GRID:
        raise ScenarioInvalid(f"网格离散最多支持 {MAX_ASSETS_ON_GRID} 个资产")
    if any(a.shape[0] < 2 or np.any(np.diff(a) <= 0.0) for a in axes):
        raise ScenarioInvalid("组合轴必须严格递增且至少两个节点")

    log_deflator, rates, returns, connection = _grid_fields(scenario, axes, time_derivative_mode, returns)
    coords = [scenario.time_grid, *axes]
    shape = log_deflator.shape
    ndim = len(shape)
    index = np.arange(log_deflator.size).reshape(shape)
    weights = [trapezoid_weights(c) for c in coords]

    rows, cols, data, edge_weights, directions = [], [], [], [], []
    n_edges = 0
    for d in range(ndim):
        head = [slice(None)] * ndim
        tail = [slice(None)] * ndim
        head[d] = slice(None, -1)
        tail[d] = slice(1, None)
        head, tail = tuple(head), tuple(tail)
        h = _along(np.diff(coords[d]), d, ndim)
        if d > 0:
            log_transport = log_deflator[tail] - log_deflator[head]
        elif returns is None:
            log_transport = -0.5 * h * (rates[head] + rates[tail])
        else:
            log_transport = log_deflator[tail] - log_deflator[head] - 0.5 * h * (returns[head] + returns[tail])
        h = np.broadcast_to(h, log_transport.shape)
        a, b = index[head].ravel(), index[tail].ravel()
        half = 0.5 * log_transport.ravel()
        step = h.ravel()
        edge_ids = n_edges + np.arange(a.size)
        rows.extend([edge_ids, edge_ids])
        cols.extend([a, b])
        data.extend([-np.exp(-half) / step, np.exp(half) / step])

        measure = reduce(np.multiply, [_along(weights[k], k, ndim) for k in range(ndim) if k != d], 1.0)
        edge_weights.append(np.broadcast_to(measure * _along(np.diff(coords[d]), d, ndim),
                                            log_transport.shape).ravel())
        directions.append(np.full(a.size, d))
        n_edges += a.size

    matrix = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n_edges, log_deflator.size)).tocsr()
    node_weights = reduce(np.multiply.outer, weights).ravel()
    logger.info(f"协变导数组装完成: {log_deflator.size} 个节点, {n_edges} 条边")
    return CovariantOperator(matrix=matrix, edge_weights=np.concatenate(edge_weights), node_weights=node_weights,
                             edge_direction=np.concatenate(directions), connection=connection,
                             time_grid=scenario.time_grid, axes=axes, time_derivative_mode=time_derivative_mode)


@dataclass(frozen=True)
class LaplacianOperator:
    """联络拉普拉斯 Δ = ∇ᵀW∇ 及其在梯形测度下的对称化形式 L = M^{-1/2} Δ M^{-1/2}"""

    stiffness: sp.csr_matrix
    matrix: sp.csr_matrix
    gradient: sp.csr_matrix
    node_weights: np.ndarray
    covariant: CovariantOperator

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def norm_bound(self) -> float:
        """无穷范数，作为谱范数的上界"""
        return float(np.max(np.abs(self.matrix).sum(axis=1)))


def _symmetrize(matrix: sp.spmatrix) -> sp.csr_matrix:
    return ((matrix + matrix.T) * 0.5).tocsr()


def assemble_laplacian(covariant: CovariantOperator,
                       quadrature_weights: Optional[np.ndarray] = None) -> LaplacianOperator:
    """由协变导数组装半正定对称的联络拉普拉斯算子

    Args:
        covariant: 协变导数算子
        quadrature_weights: 边权重（缺省为梯形测度下的单元体积）

    Returns:
        LaplacianOperator
    """
    weights = covariant.edge_weights if quadrature_weights is None else np.asarray(quadrature_weights, dtype=float)
    if weights.shape != covariant.edge_weights.shape or np.any(weights <= 0.0):
        raise ScenarioInvalid("求积权重必须为正且与边数一致")
    scale = sp.diags(1.0 / np.sqrt(covariant.node_weights))
    gradient = (sp.diags(np.sqrt(weights)) @ covariant.matrix @ scale).tocsr()
    stiffness = _symmetrize(covariant.matrix.T @ sp.diags(weights) @ covariant.matrix)
    matrix = _symmetrize(gradient.T @ gradient)
    return LaplacianOperator(stiffness=stiffness, matrix=matrix, gradient=gradient,
                             node_weights=covariant.node_weights, covariant=covariant)


@dataclass(frozen=True)
class SpectralResult:
    """低端特征对：特征值升序，截面按梯形测度归一化"""

    eigenvalues: np.ndarray
    sections: np.ndarray
    residuals: np.ndarray
    operator_norm: float
    time_grid: np.ndarray
    axes: Tuple[np.ndarray, ...]
    converged: bool = True
    stochastic: bool = False
    epsilon_kernel: float = EPSILON_KERNEL_FLOOR

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    def kernel_dimension(self, epsilon_kernel: Optional[float] = None) -> int:
        """低于 ε 的特征值个数；ε 缺省取结果自带的校准值"""
        threshold = self.epsilon_kernel if epsilon_kernel is None else epsilon_kernel
        return int(np.sum(self.eigenvalues < threshold))

    def section(self, index: int = 0) -> SectionGrid:
        return SectionGrid(values=self.sections[index], time_grid=self.time_grid, axes=self.axes)


def _dense_eigenpairs(matrix: sp.csr_matrix, k: int) -> Tuple[np.ndarray, np.ndarray]:
    values, vectors = np.linalg.eigh(matrix.toarray())
    return values[:k], vectors[:, :k]


def _spectral_result(laplacian: LaplacianOperator, vectors: np.ndarray, converged: bool) -> SpectralResult:
    vectors = vectors / np.linalg.norm(vectors, axis=0)
    # 用 ‖G g‖² 重新计算特征值，避免接近零时的相消误差
    eigenvalues = np.sum((laplacian.gradient @ vectors) ** 2, axis=0)
    order = np.argsort(eigenvalues, kind="stable")
    eigenvalues, vectors = eigenvalues[order], vectors[:, order]
    residuals = np.linalg.norm(laplacian.matrix @ vectors - vectors * eigenvalues, axis=0)
    covariant = laplacian.covariant
    sections = (vectors / np.sqrt(laplacian.node_weights)[:, None]).T.reshape((-1,) + covariant.grid_shape)
    return SpectralResult(eigenvalues=eigenvalues, sections=sections, residuals=residuals,
                          operator_norm=laplacian.norm_bound, time_grid=covariant.time_grid,
                          axes=covariant.axes, converged=converged)


def smallest_eigenpairs(laplacian: LaplacianOperator, k: int = DEFAULT_EIGENPAIRS,
                        tol: float = DEFAULT_EIGEN_TOL, max_iter: int = EIGEN_MAX_ITER) -> SpectralResult:
    """计算最小的 k 个特征对

    小规模问题直接稠密求解；否则使用 ARPACK 移位求逆（位移略小于 0），
    不收敛时在可承受规模内回退到稠密求解，否则带部分结果抛出 NoConvergence。
    """
    n = laplacian.size
    k = max(1, min(int(k), n - 1))
    if n <= DENSE_EIGEN_LIMIT:
        _, vectors = _dense_eigenpairs(laplacian.matrix, k)
        return _spectral_result(laplacian, vectors, converged=True)

    start = np.sqrt(laplacian.node_weights)
    start /= np.linalg.norm(start)
    try:
        _, vectors = eigsh(laplacian.matrix.tocsc(), k=k, sigma=-EIGEN_SHIFT, which="LM",
                           tol=tol, v0=start, maxiter=max_iter)
    except ArpackNoConvergence as e:
        logger.warning(f"ARPACK 未收敛，已得到 {len(e.eigenvalues)} 个特征对: {e}")
        if n <= DENSE_FALLBACK_LIMIT:
            _, vectors = _dense_eigenpairs(laplacian.matrix, k)
            return _spectral_result(laplacian, vectors, converged=True)
        partial = _spectral_result(laplacian, e.eigenvectors, converged=False) if len(e.eigenvalues) else None
        raise NoConvergence(f"特征求解在 {max_iter} 次迭代内未收敛", partial=partial)
    result = _spectral_result(laplacian, vectors, converged=True)
    logger.info(f"最小特征值: {result.lambda_min:.6e}")
    return result


def refinement_order(spacings: Sequence[float], lambdas: Sequence[float]) -> float:
    """λ_min 随网格加密的经验收敛阶（对数坐标下的最小二乘斜率）"""
    spacings = np.asarray(spacings, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if spacings.shape[0] < 2 or np.any(lambdas <= 0.0):
        return float("nan")
    return float(np.polyfit(np.log(spacings), np.log(lambdas), 1)[0])


@dataclass(frozen=True)
class NflvrVerdict:
    verdict: str
    lambda_min: float
    epsilon_kernel: float
    order: Optional[float] = None


def is_nflvr(result: SpectralResult, epsilon_kernel: Optional[float] = None,
             history: Optional[Sequence[Tuple[float, float]]] = None) -> NflvrVerdict:
    """λ_min < ε 判为无套利，[ε, 10ε) 为不确定，其余为存在套利

    ε 缺省取谱结果中的校准值。history 为 (网格间距, λ_min) 序列时附带经验收敛阶。
    """
    if not result.converged:
        raise NoConvergence("谱结果未收敛，无法给出判定", partial=result)
    if epsilon_kernel is None:
        epsilon_kernel = result.epsilon_kernel
    lam = result.lambda_min
    if lam < epsilon_kernel:
        verdict = ARBITRAGE_FREE
    elif lam < INCONCLUSIVE_FACTOR * epsilon_kernel:
        verdict = INCONCLUSIVE
    else:
        verdict = ARBITRAGE
    order = None
    if history:
        spacings, lambdas = zip(*history)
        order = refinement_order(spacings, lambdas)
    return NflvrVerdict(verdict=verdict, lambda_min=lam, epsilon_kernel=epsilon_kernel, order=order)


def is_complete(result: SpectralResult, epsilon_kernel: Optional[float] = None) -> str:
    """核维数恰为 1 时市场完备；核为空时先报告套利"""
    if result.stochastic:
        raise NotApplicable("完备性判定只适用于确定性市场模型")
    dimension = result.kernel_dimension(epsilon_kernel)
    if dimension == 0:
        return ARBITRAGE
    return "COMPLETE" if dimension == 1 else "INCOMPLETE"


def _oriented(section: SectionGrid) -> np.ndarray:
    values = np.asarray(section.values, dtype=float)
    scale = np.max(np.abs(values))
    threshold = SIGN_TOLERANCE * scale
    if scale == 0.0 or (np.any(values > threshold) and np.any(values < -threshold)):
        raise SignChange("截面在网格上变号，不能作为定价核候选")
    return values if np.sum(values) > 0.0 else -values


def _section_at(values: np.ndarray, axes: Tuple[np.ndarray, ...], nominals: np.ndarray) -> np.ndarray:
    positions = [np.flatnonzero(np.isclose(axis, x, rtol=0.0, atol=1e-12)) for axis, x in zip(axes, nominals)]
    if all(p.size == 1 for p in positions):
        return values[(slice(None),) + tuple(int(p[0]) for p in positions)]
    interpolator = RegularGridInterpolator(axes, np.moveaxis(values, 0, -1))
    return interpolator(nominals[None, :])[0]


@dataclass(frozen=True)
class PricingKernel:
    """定价核 β_t（β_0 = 1）及 𝒟log(βD^x) + r^x 的抽样残差"""

    time_grid: np.ndarray
    values: np.ndarray
    reference: np.ndarray
    residual: float


def extract_pricing_kernel(section: SectionGrid, scenario: MarketScenario, reference: Sequence[float],
                           check_nodes: int = KERNEL_CHECK_NODES, seed: int = 0) -> PricingKernel:
    """由调和截面 f 提取定价核 β_t = 1 / (f(t, x_ref) D^{x_ref}_t)

    Args:
        section: 基态截面（符号自动翻转为正）
        scenario: 与截面同一时间网格的情景
        reference: 参考组合 x_ref
        check_nodes: 残差抽样的网格节点数
        seed: 抽样种子

    Returns:
        PricingKernel
    """
    values = _oriented(section)
    x_ref = np.asarray(reference, dtype=float)
    if x_ref.shape != (scenario.n_assets,):
        raise DimensionMismatch(f"参考组合维数应为 {scenario.n_assets}")
    if not all(axis[0] - 1e-12 <= x <= axis[-1] + 1e-12 for axis, x in zip(section.axes, x_ref)):
        raise ScenarioInvalid(f"参考组合 {x_ref.tolist()} 不在网格范围内")
    deflator = deflator_field(scenario.deflators, x_ref)
    beta = 1.0 / (_section_at(values, section.axes, x_ref) * deflator)
    beta = beta / beta[0]

    nodes = grid_nodes(section.axes)
    deflators = deflator_field(scenario.deflators, nodes)
    rates = weighted_rate_field(scenario.deflators, scenario.short_rates, nodes)
    drift = centered_gradient(np.log(np.abs(beta * deflators)), scenario.time_grid, axis=-1) + rates
    rng = np.random.default_rng(seed)
    flat = drift.reshape(-1)
    picks = rng.choice(flat.size, size=min(check_nodes, flat.size), replace=False)
    residual = float(np.max(np.abs(flat[picks])))
    logger.info(f"定价核提取完成，参考组合 {x_ref.tolist()}，抽样残差 {residual:.3e}")
    return PricingKernel(time_grid=scenario.time_grid, values=beta, reference=x_ref, residual=residual)


def radon_nikodym(section: SectionGrid, scenario: MarketScenario, time_index: int,
                  spread_tol: float = RN_SPREAD_TOL) -> float:
    """dP*/dP 在 t 处的值 β_t/β_0 = (f_0(x) D^x_0) / (f_t(x) D^x_t)，逐网格列计算并检查与 x 无关"""
    if not 0 <= time_index < section.time_grid.shape[0]:
        raise ScenarioInvalid(f"时间索引 {time_index} 超出网格范围")
    values = _oriented(section)
    deflators = np.moveaxis(deflator_field(scenario.deflators, grid_nodes(section.axes)), -1, 0)
    columns = np.abs((values[0] * deflators[0]) / (values[time_index] * deflators[time_index])).ravel()
    center = float(np.mean(columns))
    spread = float((np.max(columns) - np.min(columns)) / abs(center))
    if spread > spread_tol:
        raise XDependence(f"Radon-Nikodym 导数在 t 索引 {time_index} 处随 x 变化，相对离散度 {spread:.3e}", spread)
    return center


def cosine_similarity(section: np.ndarray, reference: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
    """加权内积下两截面夹角余弦的绝对值"""
    a = np.asarray(section, dtype=float).ravel()
    b = np.asarray(reference, dtype=float).ravel()
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float).ravel()
    return float(abs(np.sum(w * a * b)) / np.sqrt(np.sum(w * a * a) * np.sum(w * b * b)))


def spectrum(scenario: MarketScenario, axes: Sequence[np.ndarray], k: int = DEFAULT_EIGENPAIRS,
             tol: float = DEFAULT_EIGEN_TOL, time_derivative_mode: str = "classical",
             returns: Optional[np.ndarray] = None, epsilon_kernel: Optional[float] = None) -> SpectralResult:
    """组装并求解单一情景的低端谱；未给出 ε 时由粗网格校准"""
    laplacian = assemble_laplacian(assemble_covariant(scenario, axes, time_derivative_mode, returns))
    result = smallest_eigenpairs(laplacian, k, tol)
    if epsilon_kernel is None:
        epsilon_kernel = calibrate_epsilon_kernel(scenario, axes, time_derivative_mode)
    return dataclasses.replace(result, epsilon_kernel=float(epsilon_kernel))


def zero_curvature_companion(scenario: MarketScenario) -> MarketScenario:
    """平减因子不变、短期利率改为 r̃_j = r_j − s_j + mean_j s_j 的零曲率情景

    s_j = 𝒟 log|D^j| + r_j 为单个资产的瞬时收益；改写后所有资产收益相同，组合收益与 x 无关。
    """
    growth = centered_gradient(np.log(np.abs(scenario.deflators)), scenario.time_grid, axis=-1)
    returns = growth + scenario.short_rates
    rates = scenario.short_rates - returns + returns.mean(axis=0)
    return scenario.restricted(np.arange(scenario.time_grid.shape[0]), short_rates=rates)


def _coarse_indices(n: int, stride: int) -> np.ndarray:
    index = np.arange(0, n, stride)
    if index[-1] != n - 1:
        index = np.append(index, n - 1)
    return index


def calibrate_epsilon_kernel(scenario: MarketScenario, axes: Sequence[np.ndarray],
                             time_derivative_mode: str = "classical", stride: int = CALIBRATION_STRIDE) -> float:
    """由粗网格运行校准核判定阈值

    在零曲率伴随情景上按 stride 抽取时间与组合轴节点求 λ_min（即粗网格的离散误差），
    ε = CALIBRATION_FACTOR · λ_min(粗) · (h / h_粗)²，h / h_粗 取各方向间距比的最大值，
    结果不低于 EPSILON_KERNEL_FLOOR。
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    times = _coarse_indices(scenario.time_grid.shape[0], stride)
    coarse_axes = [a[_coarse_indices(a.shape[0], stride)] for a in axes]
    coarse = zero_curvature_companion(scenario).restricted(times)
    fine_coords = [scenario.time_grid, *axes]
    coarse_coords = [coarse.time_grid, *coarse_axes]
    ratio = max(float(np.max(np.diff(f)) / np.max(np.diff(c))) for f, c in zip(fine_coords, coarse_coords))
    lam = spectrum(coarse, coarse_axes, k=1, time_derivative_mode=time_derivative_mode,
                   epsilon_kernel=EPSILON_KERNEL_FLOOR).lambda_min
    epsilon = max(EPSILON_KERNEL_FLOOR, CALIBRATION_FACTOR * max(lam, 0.0) * ratio ** 2)
    logger.info(f"核判定阈值校准: 粗网格 λ_min={lam:.3e}, 间距比 {ratio:.3g}, ε={epsilon:.3e}")
    return float(epsilon)


@dataclass(frozen=True)
class EnsembleSpectrum:
    """逐路径块的谱分析及汇总判定"""

    paths: Tuple[int, ...]
    lambda_min: np.ndarray
    verdict: str
    results: Tuple[SpectralResult, ...]
    epsilon_kernel: float = EPSILON_KERNEL_FLOOR
    mode: str = "nelson"

    @property
    def kernel_dimension(self) -> int:
        """各路径块核维数的最小值；任一块核为空即为 0"""
        return min(r.kernel_dimension() for r in self.results)


def noise_floor(field: ReturnField) -> float:
    """收益场标准误平方在所有节点与所用分箱上的均值

    某时刻没有达到样本阈值的分箱时，与逐路径插值一致地退回所有非空分箱。
    """
    if not field.stochastic:
        return 0.0
    filled = np.isfinite(field.centers)
    used = np.where(np.any(field.usable, axis=1, keepdims=True), field.usable, filled)
    variance = field.stderr[..., used] ** 2
    return float(np.mean(variance)) if variance.size else 0.0


def _nelson_returns(ensemble: PathEnsemble, axes: Tuple[np.ndarray, ...],
                    n_bins: int, min_bin_count: int) -> Tuple[List[np.ndarray], float]:
    """分箱估计的收益 ŝ(x,t) 在每条路径的条件变量处插值，返回逐路径收益场与噪声下限"""
    nodes = grid_nodes(axes)
    reference = nodes.reshape(-1, nodes.shape[-1]).mean(axis=0)
    field = return_field(ensemble, nodes, n_bins, min_bin_count, condition_on=reference)
    assets = np.moveaxis(ensemble.assets, -1, 0)
    condition = np.log(np.abs(deflator_field(assets, reference)))
    returns = []
    for p in range(ensemble.n_paths):
        estimate = np.empty(nodes.shape[:-1] + (ensemble.time_grid.shape[0],))
        for i in range(ensemble.time_grid.shape[0]):
            mask = field.usable[i]
            if not np.any(mask):
                mask = np.isfinite(field.centers[i])
            centers = field.centers[i, mask]
            order = np.argsort(centers, kind="stable")
            values = field.values[..., i, :][..., mask][..., order]
            position = np.interp(condition[p, i], centers[order], np.arange(order.size))
            lower = int(np.floor(position))
            upper = min(lower + 1, order.size - 1)
            fraction = position - lower
            estimate[..., i] = (1.0 - fraction) * values[..., lower] + fraction * values[..., upper]
        returns.append(estimate)
    return returns, noise_floor(field)


def analyze_ensemble(ensemble: PathEnsemble, axes: Sequence[np.ndarray], k: int = DEFAULT_EIGENPAIRS,
                     tol: float = DEFAULT_EIGEN_TOL, epsilon_kernel: Optional[float] = None,
                     paths: Optional[Sequence[int]] = None, mode: str = "nelson",
                     n_bins: int = DEFAULT_BINS, min_bin_count: int = MIN_BIN_COUNT) -> EnsembleSpectrum:
    """对每条抽样路径分别运行确定性流程（Δ 在路径间块对角），汇总判定

    mode="nelson" 的时间方向使用分箱估计的平均导数收益，ε 缺省为
    max(EPSILON_KERNEL_FLOOR, NOISE_FACTOR · 收益估计方差均值)；
    mode="classical" 使用路径自身的差商与短期利率，ε 缺省由首条路径的粗网格校准。
    任一路径块的核为空即判为存在套利。
    """
    if mode not in TIME_DERIVATIVE_MODES:
        raise ScenarioInvalid(f"未知的时间导数模式: {mode}")
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    domain = [[a[0], a[-1]] for a in axes]
    selected = tuple(range(ensemble.n_paths)) if paths is None else tuple(int(p) for p in paths)
    if not selected:
        raise ScenarioInvalid("至少需要分析一条路径")

    returns: List[Optional[np.ndarray]] = [None] * ensemble.n_paths
    if mode == "nelson":
        returns, noise = _nelson_returns(ensemble, axes, n_bins, min_bin_count)
        if epsilon_kernel is None:
            epsilon_kernel = max(EPSILON_KERNEL_FLOOR, NOISE_FACTOR * noise)
    elif epsilon_kernel is None:
        epsilon_kernel = calibrate_epsilon_kernel(ensemble.scenario(selected[0], portfolio_domain=domain), axes)

    results = []
    for p in selected:
        scenario = ensemble.scenario(p, portfolio_domain=domain)
        result = spectrum(scenario, axes, k, tol, mode, returns[p], epsilon_kernel=epsilon_kernel)
        results.append(dataclasses.replace(result, stochastic=True))
    verdicts = [is_nflvr(r).verdict for r in results]
    if ARBITRAGE in verdicts:
        verdict = ARBITRAGE
    elif INCONCLUSIVE in verdicts:
        verdict = INCONCLUSIVE
    else:
        verdict = ARBITRAGE_FREE
    logger.info(f"集合谱分析完成: {len(results)} 条路径, 模式 {mode}, ε={epsilon_kernel:.3e}, 判定 {verdict}")
    return EnsembleSpectrum(paths=selected, lambda_min=np.array([r.lambda_min for r in results]),
                            verdict=verdict, results=tuple(results), epsilon_kernel=float(epsilon_kernel),
                            mode=mode)
