"""
规范代数模块 - 负责现金流强度、其卷积半群以及（平减因子, 期限结构）对的规范变换
"""

import logging
from dataclasses import dataclass
from math import comb
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from gauge_arb.config import BREAKPOINT_DECIMALS, GAUSS_LEGENDRE_NODES, TRANSFORM_FLOOR
from gauge_arb.errors import NumeraireNotPositive, ScenarioInvalid, TransformSingular
from gauge_arb.market_model import Gauge, MarketScenario, deflator_field

logger = logging.getLogger(__name__)

# (起点, 终点, 以起点为原点的局部多项式)
Piece = Tuple[float, float, Polynomial]

_ZERO = Polynomial([0.0])
_IDENTITY = Polynomial([0.0, 1.0])


def _snap(value: float) -> float:
    return float(round(float(value), BREAKPOINT_DECIMALS)) + 0.0


def _rebase(poly: Polynomial, shift: float) -> Polynomial:
    """把局部坐标原点右移 shift：q(τ) = p(τ + shift)"""
    if shift == 0.0:
        return poly
    return poly(Polynomial([shift, 1.0]))


@dataclass(frozen=True)
class CashflowIntensity:
    """现金流强度：Dirac 原子加分段多项式密度，支撑在 [0, +∞) 上且紧致

    Attributes:
        atoms: (位置 h, 权重) 元组，按位置排序
        breakpoints: 密度分段点，严格递增
        pieces: 每段上的多项式，自变量为相对于段起点的局部坐标
    """

    atoms: Tuple[Tuple[float, float], ...] = ()
    breakpoints: Tuple[float, ...] = ()
    pieces: Tuple[Polynomial, ...] = ()

    def __post_init__(self):
        if any(h < 0.0 for h, _ in self.atoms):
            raise ScenarioInvalid("原子位置必须非负")
        if self.pieces:
            if len(self.breakpoints) != len(self.pieces) + 1:
                raise ScenarioInvalid("分段点数量必须比分段多一个")
            if self.breakpoints[0] < 0.0 or any(
                    b <= a for a, b in zip(self.breakpoints[:-1], self.breakpoints[1:])):
                raise ScenarioInvalid("密度分段点必须非负且严格递增")
        elif self.breakpoints:
            raise ScenarioInvalid("没有分段时不应给出分段点")

    @property
    def support_end(self) -> float:
        """紧支撑的右端点 H"""
        ends = [h for h, _ in self.atoms]
        if self.breakpoints:
            ends.append(self.breakpoints[-1])
        return max(ends) if ends else 0.0

    def density(self, h: Any) -> np.ndarray:
        """在给定位置计算密度值（不含原子）"""
        h = np.asarray(h, dtype=float)
        values = np.zeros_like(h)
        if not self.pieces:
            return values
        bounds = np.asarray(self.breakpoints)
        index = np.searchsorted(bounds, h, side="right") - 1
        for i, poly in enumerate(self.pieces):
            mask = index == i
            if np.any(mask):
                values[mask] = poly(h[mask] - bounds[i])
        return values

    def evaluate(self, h: Any) -> np.ndarray:
        """密度值；与 density 相同，原子在点值中不计入"""
        return self.density(h)

    def total_mass(self) -> float:
        mass = sum(w for _, w in self.atoms)
        for (a, b), poly in zip(zip(self.breakpoints[:-1], self.breakpoints[1:]), self.pieces):
            antiderivative = poly.integ()
            mass += antiderivative(b - a) - antiderivative(0.0)
        return float(mass)

    def integrate(self, func: Callable[[np.ndarray], np.ndarray],
                  split_points: Optional[Iterable[float]] = None) -> np.ndarray:
        """计算 ∫ func(h) π(dh)

        原子解析处理；密度段在 split_points 处再细分后使用 Gauss-Legendre 求积。

        Args:
            func: 向量化函数，输入一维 h 数组，输出形状 (..., len(h))
            split_points: 被积函数的非光滑点

        Returns:
            积分值，形状为 func 输出去掉最后一轴
        """
        locations: List[np.ndarray] = []
        weights: List[np.ndarray] = []
        if self.atoms:
            locations.append(np.array([h for h, _ in self.atoms]))
            weights.append(np.array([w for _, w in self.atoms]))
        if self.pieces:
            nodes, node_weights = leggauss(GAUSS_LEGENDRE_NODES)
            cuts = np.unique(np.asarray(list(split_points), dtype=float)) if split_points is not None \
                else np.empty(0)
            for (a, b), poly in zip(zip(self.breakpoints[:-1], self.breakpoints[1:]), self.pieces):
                inner = cuts[(cuts > a) & (cuts < b)]
                edges = np.concatenate(([a], inner, [b]))
                lo, hi = edges[:-1], edges[1:]
                half = 0.5 * (hi - lo)
                points = (0.5 * (hi + lo))[:, None] + half[:, None] * nodes[None, :]
                locations.append(points.ravel())
                weights.append((half[:, None] * node_weights[None, :]).ravel() * poly(points.ravel() - a))
        if not locations:
            sample = np.asarray(func(np.zeros(1)))
            return np.zeros(sample.shape[:-1])
        h = np.concatenate(locations)
        w = np.concatenate(weights)
        return np.asarray(func(h)) @ w

    def density_pieces(self) -> List[Piece]:
        return [(a, b, poly) for (a, b), poly in
                zip(zip(self.breakpoints[:-1], self.breakpoints[1:]), self.pieces)]


def normalize_intensity(atoms: Iterable[Tuple[float, float]], pieces: Iterable[Piece]) -> CashflowIntensity:
    """合并同位置原子，把重叠的密度段加总到合并后的分段网格上"""
    merged: Dict[float, float] = {}
    for h, w in atoms:
        key = _snap(h)
        merged[key] = merged.get(key, 0.0) + float(w)
    atom_list = tuple(sorted((h, w) for h, w in merged.items() if w != 0.0))

    pieces = [(_snap(a), _snap(b), poly) for a, b, poly in pieces]
    pieces = [(a, b, poly) for a, b, poly in pieces if b > a]
    if not pieces:
        return CashflowIntensity(atoms=atom_list)
    grid = sorted({a for a, _, _ in pieces} | {b for _, b, _ in pieces})
    polys: List[Polynomial] = []
    for lo, hi in zip(grid[:-1], grid[1:]):
        total = _ZERO
        for a, b, poly in pieces:
            if a <= lo and hi <= b:
                total = total + _rebase(poly, lo - a)
        polys.append(total.trim())
    breakpoints = list(grid)
    while polys and not np.any(polys[-1].coef):
        polys.pop()
        breakpoints.pop()
    while polys and not np.any(polys[0].coef):
        polys.pop(0)
        breakpoints.pop(0)
    if not polys:
        return CashflowIntensity(atoms=atom_list)
    return CashflowIntensity(atoms=atom_list, breakpoints=tuple(breakpoints), pieces=tuple(polys))


def _convolve_pieces(first: Piece, second: Piece) -> List[Piece]:
    """两个多项式段的精确卷积，结果最多三段，次数为 deg p + deg q + 1"""
    a, a_end, p = first
    c, c_end, q = second
    l1, l2 = a_end - a, c_end - c
    origin = a + c
    short, long_ = min(l1, l2), max(l1, l2)
    z = _IDENTITY
    zero = Polynomial([0.0])
    const_l1 = Polynomial([l1])
    shifted = Polynomial([-l2, 1.0])
    antiderivatives = [(p * Polynomial([0.0] * m + [1.0])).integ() for m in range(q.degree() + 1)]

    def piece_polynomial(lower: Polynomial, upper: Polynomial) -> Polynomial:
        total = _ZERO
        for k, q_k in enumerate(q.coef):
            if q_k == 0.0:
                continue
            for m in range(k + 1):
                factor = q_k * comb(k, m) * (-1.0) ** m
                total = total + factor * z ** (k - m) * (antiderivatives[m](upper) - antiderivatives[m](lower))
        return total

    segments = [(0.0, short, zero, z)]
    if l1 <= l2:
        segments.append((short, long_, zero, const_l1))
    else:
        segments.append((short, long_, shifted, z))
    segments.append((long_, l1 + l2, shifted, const_l1))

    result = []
    for lo, hi, lower, upper in segments:
        if hi <= lo:
            continue
        result.append((origin + lo, origin + hi, _rebase(piece_polynomial(lower, upper), lo)))
    return result


def convolve(first: CashflowIntensity, second: CashflowIntensity) -> CashflowIntensity:
    """现金流强度的卷积 (π∗ν)_t = ∫_0^t π_h ν_{t-h} dh

    原子×原子给出位置相加、权重相乘的原子；原子×密度给出平移后的密度；
    密度×密度逐段精确积分。
    """
    atoms = [(h1 + h2, w1 * w2) for h1, w1 in first.atoms for h2, w2 in second.atoms]
    pieces: List[Piece] = []
    for h, w in first.atoms:
        pieces.extend((a + h, b + h, w * poly) for a, b, poly in second.density_pieces())
    for h, w in second.atoms:
        pieces.extend((a + h, b + h, w * poly) for a, b, poly in first.density_pieces())
    for left in first.density_pieces():
        for right in second.density_pieces():
            pieces.extend(_convolve_pieces(left, right))
    return normalize_intensity(atoms, pieces)


def dirac(location: float, weight: float = 1.0) -> CashflowIntensity:
    return normalize_intensity([(location, weight)], [])


def box(start: float, end: float, height: float = 1.0) -> CashflowIntensity:
    return normalize_intensity([], [(start, end, Polynomial([height]))])


def zero_coupon(maturity: float, notional: float = 1.0) -> CashflowIntensity:
    """零息债券：在到期日的单个原子"""
    return dirac(maturity, notional)


def coupon_stream(coupon: float, period: float, maturity: float, notional: float = 1.0) -> CashflowIntensity:
    """附息债券：按期支付票息，到期偿还本金"""
    count = int(round(maturity / period))
    if count < 1 or abs(count * period - maturity) > 1e-9:
        raise ScenarioInvalid("到期日必须是付息周期的整数倍")
    atoms = [(k * period, coupon * period * notional) for k in range(1, count + 1)]
    atoms.append((maturity, notional))
    return normalize_intensity(atoms, [])


def intensity_from_literal(literal: Dict[str, Any]) -> CashflowIntensity:
    """解析情景JSON中的强度字面量

    格式: {"atoms": [[h, w], ...], "density": {"breakpoints": [...], "values": [...]}}
    """
    atoms = [(float(h), float(w)) for h, w in literal.get("atoms", [])]
    pieces: List[Piece] = []
    density = literal.get("density")
    if density:
        breakpoints = [float(b) for b in density.get("breakpoints", [])]
        values = [float(v) for v in density.get("values", [])]
        if len(breakpoints) != len(values) + 1:
            raise ScenarioInvalid("密度字面量中 breakpoints 必须比 values 多一个")
        pieces = [(a, b, Polynomial([v])) for a, b, v in zip(breakpoints[:-1], breakpoints[1:], values)]
    return normalize_intensity(atoms, pieces)


def _log_term_structure_spline(gauge: Gauge) -> CubicSpline:
    """沿到期偏移对 log P 做 not-a-knot 三次样条（对所有时间节点同时拟合），网格外按端段多项式外推"""
    return CubicSpline(gauge.maturity_offsets, np.log(gauge.term_structure), axis=1, extrapolate=True)


def apply_gauge_transform(gauge: Gauge, intensity: CashflowIntensity) -> Gauge:
    """由现金流强度诱导的规范变换

    D^π_t = D_t ∫ π_h P_{t,t+h} dh,  P^π_{t,s} = ∫ π_h P_{t,s+h} dh / ∫ π_h P_{t,t+h} dh

    Args:
        gauge: 原规范
        intensity: 现金流强度

    Returns:
        变换后的规范，P^π[t,t] = 1 严格成立
    """
    offsets = gauge.maturity_offsets
    log_p = _log_term_structure_spline(gauge)

    def integral_at(shift: float) -> np.ndarray:
        return intensity.integrate(lambda h: np.exp(log_p(shift + h)), split_points=offsets - shift)

    denominator = integral_at(0.0)
    if np.any(np.abs(denominator) < TRANSFORM_FLOOR):
        first = int(np.argmax(np.abs(denominator) < TRANSFORM_FLOOR))
        raise TransformSingular(f"规范变换分母在时间索引 {first} 处过小: {denominator[first]:.3e}")

    term_structure = np.empty_like(gauge.term_structure)
    term_structure[:, 0] = 1.0
    for k in range(1, offsets.shape[0]):
        term_structure[:, k] = integral_at(float(offsets[k])) / denominator
    if np.any(term_structure <= 0.0):
        raise TransformSingular("变换后的期限结构出现非正值")
    return Gauge(deflator=gauge.deflator * denominator, term_structure=term_structure,
                 maturity_offsets=offsets, name=gauge.name)


def numeraire_transform(scenario: MarketScenario, numeraire_nominals: Sequence[float]) -> MarketScenario:
    """以组合 x^Num 为计价单位重新归一化所有平减因子：D^x / D^{x^Num}"""
    x_num = np.asarray(numeraire_nominals, dtype=float)
    if x_num.shape != (scenario.n_assets,):
        raise ScenarioInvalid(f"计价组合必须是长度为 {scenario.n_assets} 的向量")
    numeraire = deflator_field(scenario.deflators, x_num)
    if np.any(numeraire <= scenario.deflator_floor):
        first = int(np.argmax(numeraire <= scenario.deflator_floor))
        raise NumeraireNotPositive(
            f"计价组合平减因子在 t={scenario.time_grid[first]:.6g} 处不为正: {numeraire[first]:.6g}")
    logger.info(f"以组合 {x_num.tolist()} 为计价单位重新归一化")
    return scenario.with_deflators(scenario.deflators / numeraire)
