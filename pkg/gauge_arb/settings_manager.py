"""
配置管理模块 - 负责情景JSON的加载、运行配置的校验与哈希，以及报告和元数据的保存
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

from gauge_arb.config import (
    APP_VERSION,
    DEFAULT_EIGEN_TOL,
    DEFAULT_EIGENPAIRS,
    DEFAULT_GRID,
    METADATA_SUFFIX,
    REPORT_SUFFIX,
    UTILITY_DEFAULT_GRID,
)
from gauge_arb.errors import ConfigInvalid
from gauge_arb.utils import canonical_json, config_hash

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate", "curvature", "zc-test", "spectrum", "kernel", "utility", "report")


@dataclass(frozen=True)
class RunConfig:
    """一次运行的全部参数；输出目录、覆盖与日志级别不参与哈希"""

    subcommand: str
    scenario: Optional[str] = None
    out: str = "runs"
    seed: Optional[int] = None
    grid: Optional[int] = None
    k: int = DEFAULT_EIGENPAIRS
    tol: float = DEFAULT_EIGEN_TOL
    epsilon_kernel: Optional[float] = None
    mode: str = "nelson"
    horizon: Optional[float] = None
    steps: Optional[int] = None
    paths: Optional[int] = None
    utility: str = "log"
    gamma: float = 2.0
    a: float = 1.0
    start: float = 0.0
    x_ref: Optional[Tuple[float, ...]] = None
    force: bool = False
    verbose: bool = False
    scenario_digest: str = field(default="", compare=False)

    def validate(self, stochastic: bool = False) -> "RunConfig":
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigInvalid(f"未知的子命令: {self.subcommand}")
        if self.subcommand != "report" and not self.scenario:
            raise ConfigInvalid("需要通过 --scenario 指定情景文件")
        for name in ("tol", "epsilon_kernel"):
            value = getattr(self, name)
            if value is not None and value <= 0.0:
                raise ConfigInvalid(f"容差 {name} 必须为正")
        if (self.grid is not None and self.grid < 3) or self.k < 1:
            raise ConfigInvalid("--grid 至少为 3，--k 至少为 1")
        if self.mode not in ("classical", "nelson"):
            raise ConfigInvalid(f"未知的时间导数模式: {self.mode}")
        for name in ("horizon", "steps", "paths"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigInvalid(f"{name} 必须为正")
        if stochastic and self.seed is None:
            raise ConfigInvalid("随机运行必须提供 --seed")
        return self

    def hashable(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("out", "force", "verbose", "scenario"):
            data.pop(key)
        return data

    def grid_size(self) -> int:
        if self.grid is not None:
            return self.grid
        return UTILITY_DEFAULT_GRID if self.subcommand == "utility" else DEFAULT_GRID

    @property
    def hash(self) -> str:
        return config_hash(self.hashable())


class SettingsManager:
    """运行目录管理器，报告只追加写入，除非显式允许覆盖"""

    def __init__(self, run_dir: str = "runs", force: bool = False):
        """初始化运行目录管理器

        Args:
            run_dir: 报告输出目录
            force: 是否允许覆盖已有报告
        """
        self.run_dir = run_dir
        self.force = force
        self._ensure_run_dir()

    def _ensure_run_dir(self) -> None:
        if not os.path.exists(self.run_dir):
            try:
                os.makedirs(self.run_dir)
                logger.info(f"创建运行目录: {self.run_dir}")
            except Exception as e:
                logger.error(f"创建运行目录失败: {e}")

    @staticmethod
    def load_json(path: str) -> Optional[Dict[str, Any]]:
        """从JSON文件加载文档，失败时返回None"""
        if not path or not os.path.exists(path):
            logger.error(f"文件不存在: {path}")
            return None
        try:
            with open(path, 'r', encoding='utf-8') as f:
                document = json.load(f)
            logger.info(f"已从 {path} 加载")
            return document
        except Exception as e:
            logger.error(f"加载JSON失败: {e}")
            return None

    def path_for(self, name: str, suffix: str = "") -> str:
        return os.path.join(self.run_dir, f"{name}{suffix}")

    def report_exists(self, name: str) -> bool:
        return os.path.exists(self.path_for(name, REPORT_SUFFIX))

    def save_report(self, name: str, report: Dict[str, Any]) -> bool:
        """保存报告（规范化JSON，不含时间戳）

        Returns:
            保存是否成功；已存在且未允许覆盖时返回False
        """
        path = self.path_for(name, REPORT_SUFFIX)
        if os.path.exists(path) and not self.force:
            logger.error(f"报告已存在且未指定 --force: {path}")
            return False
        try:
            with open(path, 'w', encoding='utf-8', newline='\n') as f:
                f.write(canonical_json(report))
                f.write("\n")
            logger.info(f"报告已保存到: {path}")
            return True
        except Exception as e:
            logger.error(f"保存报告失败: {e}")
            return False

    def save_metadata(self, name: str, config: RunConfig) -> bool:
        """保存运行元数据（时间戳只出现在这里）"""
        path = self.path_for(name, METADATA_SUFFIX)
        metadata = {
            "created_at": datetime.now().isoformat(timespec="seconds"),
            "config_hash": config.hash,
            "version": APP_VERSION,
            "config": asdict(config),
        }
        try:
            with open(path, 'w', encoding='utf-8') as f:
                f.write(canonical_json(metadata))
            return True
        except Exception as e:
            logger.error(f"保存元数据失败: {e}")
            return False

    def load_reports(self) -> List[Dict[str, Any]]:
        """按文件名顺序读取运行目录中的全部报告"""
        reports = []
        if not os.path.isdir(self.run_dir):
            return reports
        for filename in sorted(os.listdir(self.run_dir)):
            if filename.endswith(REPORT_SUFFIX):
                document = self.load_json(os.path.join(self.run_dir, filename))
                if document is not None:
                    reports.append(document)
        return reports
