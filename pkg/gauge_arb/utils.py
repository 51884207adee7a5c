"""
工具模块 - 提供通用工具函数：规范化JSON、配置哈希与中心差分
"""

import hashlib
import json
import logging
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)


def _to_builtin(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def canonical_json(data: Any, indent: int = 2) -> str:
    """将数据序列化为确定性的JSON文本（键排序、numpy类型转为内置类型）"""
    return json.dumps(_to_builtin(data), ensure_ascii=False, sort_keys=True, indent=indent)


def config_hash(data: Any) -> str:
    """计算配置的SHA-256哈希"""
    text = json.dumps(_to_builtin(data), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def centered_gradient(values: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """沿指定轴的差分导数：内部节点为二阶中心差分（非均匀网格同样二阶），端点为一阶单侧差分

    Args:
        values: 任意维数组
        coords: 该轴上的严格递增坐标
        axis: 求导的轴

    Returns:
        与 values 同形状的导数估计
    """
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    if values.shape[axis] != n:
        raise ValueError(f"坐标长度 {n} 与数据长度 {values.shape[axis]} 不一致")
    if n < 2:
        raise ValueError("中心差分至少需要两个节点")
    return np.gradient(values, coords, axis=axis, edge_order=1)
