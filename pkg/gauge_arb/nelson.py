"""
Nelson 导数模块 - 通过对当前状态等频分箱估计前向、后向与平均随机导数
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from gauge_arb.config import DEFAULT_BINS, MIN_BIN_COUNT
from gauge_arb.errors import InsufficientSamples, ScenarioInvalid
from gauge_arb.simulation import PathEnsemble

logger = logging.getLogger(__name__)

Process = Union[int, np.ndarray]


@dataclass(frozen=True)
class DerivativeEstimate:
    """分箱导数估计，所有数组形状为 (T+1, 分箱数)

    Attributes:
        time_grid: 时间网格
        center: 分箱内条件变量的均值
        value: 差商均值
        stderr: 标准误
        count: 样本数
        usable: 样本数达到阈值（或集合为确定性）的分箱
        kind: forward / backward / mean
    """

    time_grid: np.ndarray
    center: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    count: np.ndarray
    usable: np.ndarray
    kind: str

    @property
    def n_bins(self) -> int:
        return self.center.shape[1]

    def lookup(self, time_index: int, state: np.ndarray) -> np.ndarray:
        """在给定时间对条件变量取值做分箱中心间线性插值（两端截平）"""
        mask = self.usable[time_index]
        if not np.any(mask):
            raise InsufficientSamples(f"时间索引 {time_index} 处没有可用分箱")
        centers = self.center[time_index, mask]
        values = self.value[time_index, mask]
        order = np.argsort(centers, kind="stable")
        return np.interp(np.asarray(state, dtype=float), centers[order], values[order])

    def require_usable(self) -> "DerivativeEstimate":
        if not np.any(self.usable):
            raise InsufficientSamples(f"{self.kind} 导数估计中没有任何可用分箱")
        return self


def _process(ensemble: PathEnsemble, component: Process) -> np.ndarray:
    if isinstance(component, (int, np.integer)):
        return ensemble.component(int(component))
    values = np.asarray(component, dtype=float)
    if values.shape != (ensemble.n_paths, ensemble.time_grid.shape[0]):
        raise ScenarioInvalid(f"过程数组形状应为 {(ensemble.n_paths, ensemble.time_grid.shape[0])}")
    return values


def _binned_quotients(ensemble: PathEnsemble, component: Process, condition_on: Optional[Process],
                      direction: int, n_bins: int, min_bin_count: int) -> DerivativeEstimate:
    values = _process(ensemble, component)
    condition = values if condition_on is None else _process(ensemble, condition_on)
    grid = ensemble.time_grid
    n_nodes = grid.shape[0]
    shape = (n_nodes, n_bins)
    center = np.full(shape, np.nan)
    value = np.full(shape, np.nan)
    stderr = np.full(shape, np.nan)
    count = np.zeros(shape, dtype=int)
    deterministic = not ensemble.stochastic

    # 与 np.array_split 相同的等频分箱：前 M % B 个分箱多一个样本
    m = values.shape[0]
    sizes = np.full(n_bins, m // n_bins)
    sizes[:m % n_bins] += 1
    filled = sizes > 0
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))[filled]
    n = sizes[filled]

    for i in range(n_nodes):
        j = i + direction
        if not 0 <= j < n_nodes:
            continue
        quotient = (values[:, max(i, j)] - values[:, min(i, j)]) / abs(grid[j] - grid[i])
        order = np.argsort(condition[:, i], kind="stable")
        sample = quotient[order]
        mean = np.add.reduceat(sample, starts) / n
        spread = np.add.reduceat((sample - np.repeat(mean, n)) ** 2, starts)
        count[i, filled] = n
        center[i, filled] = np.add.reduceat(condition[order, i], starts) / n
        value[i, filled] = mean
        stderr[i, filled] = np.where(n > 1, np.sqrt(spread / np.maximum(n - 1, 1) / n), 0.0)

    usable = (count >= min_bin_count) | (deterministic & (count > 0))
    thin = int(np.sum((count > 0) & ~usable))
    if thin:
        logger.warning(f"{thin} 个分箱样本数少于 {min_bin_count}，已标记为不可用")
    return DerivativeEstimate(time_grid=grid, center=center, value=value, stderr=stderr, count=count,
                              usable=usable, kind="forward" if direction > 0 else "backward")


def forward_derivative(ensemble: PathEnsemble, component: Process, n_bins: int = DEFAULT_BINS,
                       min_bin_count: int = MIN_BIN_COUNT,
                       condition_on: Optional[Process] = None) -> DerivativeEstimate:
    """前向导数 DQ_t ≈ E[(Q_{t+h} − Q_t)/h | Q_t]，末端节点无定义"""
    if ensemble.n_steps < 2:
        raise ScenarioInvalid("至少需要两个时间步")
    return _binned_quotients(ensemble, component, condition_on, +1, n_bins, min_bin_count)


def backward_derivative(ensemble: PathEnsemble, component: Process, n_bins: int = DEFAULT_BINS,
                        min_bin_count: int = MIN_BIN_COUNT,
                        condition_on: Optional[Process] = None) -> DerivativeEstimate:
    """后向导数 D*Q_t ≈ E[(Q_t − Q_{t−h})/h | Q_t]，首节点无定义"""
    if ensemble.n_steps < 2:
        raise ScenarioInvalid("至少需要两个时间步")
    return _binned_quotients(ensemble, component, condition_on, -1, n_bins, min_bin_count)


def mean_derivative(ensemble: PathEnsemble, component: Process, n_bins: int = DEFAULT_BINS,
                    min_bin_count: int = MIN_BIN_COUNT,
                    condition_on: Optional[Process] = None) -> DerivativeEstimate:
    """平均导数 𝒟 = (D + D*)/2，标准误按平方和合成

    两种单侧估计共用同一分箱；首末节点只有一侧可用，直接取该侧估计。
    """
    forward = forward_derivative(ensemble, component, n_bins, min_bin_count, condition_on)
    backward = backward_derivative(ensemble, component, n_bins, min_bin_count, condition_on)
    value = 0.5 * (forward.value + backward.value)
    stderr = 0.5 * np.hypot(forward.stderr, backward.stderr)
    usable = forward.usable & backward.usable
    center = forward.center.copy()
    count = np.minimum(forward.count, backward.count)
    for edge, source in ((0, forward), (-1, backward)):
        value[edge] = source.value[edge]
        stderr[edge] = source.stderr[edge]
        usable[edge] = source.usable[edge]
        center[edge] = source.center[edge]
        count[edge] = source.count[edge]
    return DerivativeEstimate(time_grid=forward.time_grid, center=center, value=value, stderr=stderr,
                              count=count, usable=usable, kind="mean")
