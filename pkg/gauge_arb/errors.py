"""
错误模块 - 定义各分析模块的异常类型及其模块限定错误码
"""

from typing import Any, Optional

from gauge_arb.config import EXIT_CONFIG_ERROR, EXIT_NUMERICAL_ERROR


class GaugeArbError(Exception):
    """所有分析错误的基类"""

    module = "gauge_arb"
    exit_code = EXIT_NUMERICAL_ERROR

    @property
    def qualified_code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


# market_model
class ScenarioInvalid(GaugeArbError):
    module = "market_model"
    exit_code = EXIT_CONFIG_ERROR


class DeflatorSingular(GaugeArbError):
    module = "market_model"


class MaturityOutOfRange(GaugeArbError):
    module = "market_model"


class NonPositiveTermStructure(GaugeArbError):
    module = "market_model"


# gauge_algebra
class TransformSingular(GaugeArbError):
    module = "gauge_algebra"


class NumeraireNotPositive(GaugeArbError):
    module = "gauge_algebra"


# simulation
class ExplodedPath(GaugeArbError):
    module = "simulation"

    def __init__(self, message: str, path_index: int):
        super().__init__(message)
        self.path_index = path_index


class GridMismatch(GaugeArbError):
    module = "simulation"


# nelson
class InsufficientSamples(GaugeArbError):
    module = "nelson"


# arbitrage
class DimensionMismatch(GaugeArbError):
    module = "arbitrage"


class VanishingVolatility(GaugeArbError):
    module = "arbitrage"


# laplacian
class NoConvergence(GaugeArbError):
    module = "laplacian"

    def __init__(self, message: str, partial: Optional[Any] = None):
        super().__init__(message)
        self.partial = partial


class SignChange(GaugeArbError):
    module = "laplacian"


class XDependence(GaugeArbError):
    module = "laplacian"

    def __init__(self, message: str, spread: float):
        super().__init__(message)
        self.spread = spread


class NotApplicable(GaugeArbError):
    module = "laplacian"


# utility
class NonConcaveDetected(GaugeArbError):
    module = "utility"


# cli
class ConfigInvalid(GaugeArbError):
    module = "cli"
    exit_code = EXIT_CONFIG_ERROR


class IoError(GaugeArbError):
    module = "cli"
    exit_code = EXIT_CONFIG_ERROR
