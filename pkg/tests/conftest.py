"""测试共用的情景与模型构造"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from gauge_arb.market_model import scenario_from_arrays
from gauge_arb.simulation import ItoModelSpec, ConstantCoefficient


def exponential_scenario(growth, rates, n_times=9, horizon=1.0, domain=None):
    """D^j_t = exp(g_j t)、短期利率为常数 r_j 的确定性情景"""
    growth = np.atleast_1d(np.asarray(growth, dtype=float))
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    time_grid = np.linspace(0.0, horizon, n_times)
    deflators = np.exp(np.outer(growth, time_grid))
    short_rates = np.outer(rates, np.ones_like(time_grid))
    return scenario_from_arrays(time_grid, deflators, short_rates=short_rates, portfolio_domain=domain)


def constant_model(drift, volatility, initial_assets=None, initial_rates=None):
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    n = drift.shape[0]
    return ItoModelSpec(drift=ConstantCoefficient(drift),
                        volatility=ConstantCoefficient(np.atleast_2d(np.asarray(volatility, dtype=float))),
                        initial_assets=np.ones(n) if initial_assets is None else np.asarray(initial_assets, float),
                        initial_rates=np.zeros(n) if initial_rates is None else np.asarray(initial_rates, float))


@pytest.fixture
def flat_scenario():
    """单资产 D ≡ 1, r ≡ 0"""
    return exponential_scenario([0.0], [0.0])


@pytest.fixture
def arbitrage_scenario():
    """两资产增长率 0.01 与 0.03，r ≡ 0"""
    return exponential_scenario([0.01, 0.03], [0.0, 0.0])


@pytest.fixture
def homogeneous_scenario():
    """两资产共享同一规范"""
    return exponential_scenario([0.02, 0.02], [0.01, 0.01])


@pytest.fixture
def gbm_model():
    return constant_model([0.05], [[0.2]])


@pytest.fixture
def scenario_dir():
    return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")
