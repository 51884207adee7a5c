import numpy as np
import pytest

from conftest import constant_model
from gauge_arb.errors import ExplodedPath, GridMismatch, ScenarioInvalid
from gauge_arb.simulation import (
    AffineCoefficient,
    ConstantCoefficient,
    ItoModelSpec,
    PathEnsemble,
    TableCoefficient,
    bracket_correction,
    path_stream,
    quadratic_covariation,
    self_financing_residual,
    simulate,
)


def brownian(ensemble):
    """由存储增量累加得到的布朗路径 (M, T+1)"""
    w = np.zeros((ensemble.n_paths, ensemble.time_grid.size))
    w[:, 1:] = np.cumsum(ensemble.increments[:, :, 0], axis=1)
    return w


def test_zero_coefficients_keep_paths_constant():
    spec = constant_model([0.0, 0.0], [[0.0], [0.0]], initial_assets=[1.5, 0.7])
    ensemble = simulate(spec, 1.0, 20, 50, seed=1)
    np.testing.assert_array_equal(ensemble.assets, np.broadcast_to([1.5, 0.7], ensemble.assets.shape))


def test_deterministic_growth_converges_to_exponential():
    ensemble = simulate(constant_model([0.05], [[0.0]]), 1.0, 1000, 1, seed=0)
    assert abs(ensemble.assets[0, -1, 0] - np.exp(0.05)) < 1e-4


def test_gbm_mean_matches_lognormal_moment(gbm_model):
    ensemble = simulate(gbm_model, 1.0, 50, 100000, seed=42)
    terminal = ensemble.assets[:, -1, 0]
    stderr = terminal.std(ddof=1) / np.sqrt(terminal.size)
    assert abs(terminal.mean() - np.exp(0.05)) < 3.0 * stderr


def test_replay_is_bitwise(gbm_model):
    first = simulate(gbm_model, 1.0, 30, 100, seed=7)
    second = simulate(gbm_model, 1.0, 30, 100, seed=7)
    np.testing.assert_array_equal(first.assets, second.assets)
    np.testing.assert_array_equal(first.increments, second.increments)
    assert first.replay()
    other = simulate(gbm_model, 1.0, 30, 100, seed=8)
    assert not np.array_equal(first.assets, other.assets)


def test_paths_do_not_depend_on_ensemble_size(gbm_model):
    small = simulate(gbm_model, 1.0, 10, 5, seed=3)
    large = simulate(gbm_model, 1.0, 10, 12, seed=3)
    np.testing.assert_array_equal(small.assets, large.assets[:5])


def test_path_stream_keys():
    a = path_stream(5, 0).standard_normal(4)
    b = path_stream(5, 0).standard_normal(4)
    c = path_stream(5, 1).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ScenarioInvalid):
        path_stream(-1, 0)


def test_explosion_is_reported():
    with pytest.raises(ExplodedPath) as info:
        simulate(constant_model([2000.0], [[0.0]]), 1.0, 100, 3, seed=0)
    assert info.value.path_index == 0


def test_coefficient_shapes_are_validated():
    with pytest.raises(ScenarioInvalid):
        ItoModelSpec(drift=ConstantCoefficient([0.05, 0.01]), volatility=ConstantCoefficient([[0.2]]),
                     initial_assets=np.ones(1), initial_rates=np.zeros(1))
    with pytest.raises(ScenarioInvalid):
        ItoModelSpec.from_config({"drift": [0.05], "initial_assets": [1.0], "initial_rates": [0.0]})


def test_named_coefficients():
    affine = AffineCoefficient([0.0], [0.5])
    np.testing.assert_allclose(affine(0.0, np.array([[2.0]])), [[1.0]])
    table = TableCoefficient([0.0, 1.0], [[0.0], [1.0]])
    np.testing.assert_allclose(table(0.5, np.ones((3, 1))), np.full((3, 1), 0.5))
    spec = ItoModelSpec.from_config({
        "drift": {"kind": "table", "times": [0.0, 1.0], "values": [[0.01], [0.03]]},
        "volatility": {"kind": "constant", "value": [[0.1]]},
        "initial_assets": [1.0], "initial_rates": [0.02],
    })
    assert spec.deterministic_volatility
    assert spec.n_brownian == 1


def test_quadratic_variation_of_brownian_motion(gbm_model):
    ensemble = simulate(gbm_model, 1.0, 200, 2000, seed=9)
    w = brownian(ensemble)
    bracket = quadratic_covariation(w, w)[:, -1]
    stderr = bracket.std(ddof=1) / np.sqrt(bracket.size)
    assert abs(bracket.mean() - 1.0) < 3.0 * stderr
    scaled = quadratic_covariation(0.2 * w, 0.2 * w)[:, -1]
    assert scaled.mean() == pytest.approx(0.04, rel=0.02)
    time_path = np.broadcast_to(ensemble.time_grid, w.shape)
    assert np.max(np.abs(quadratic_covariation(w, time_path)[:, -1])) < 3.0 * np.sqrt(ensemble.dt)


def test_quadratic_covariation_requires_common_grid():
    with pytest.raises(GridMismatch):
        quadratic_covariation(np.zeros(5), np.zeros(6))
    with pytest.raises(GridMismatch):
        quadratic_covariation(np.zeros(3), np.zeros(3), grid_x=[0.0, 0.5, 1.0], grid_y=[0.0, 0.4, 1.0])


def test_constant_strategy_is_self_financing():
    grid = np.linspace(0.0, 1.0, 101)
    deflators = np.stack([np.exp(0.05 * grid), 1.0 + 0.1 * np.sin(grid)], axis=-1)
    nominals = np.broadcast_to([1.0, 2.0], deflators.shape)
    assert self_financing_residual(nominals, deflators, grid) < 1e-12


def test_renormalized_buy_and_hold_is_not_self_financing():
    grid = np.linspace(0.0, 1.0, 101)
    deflators = np.exp(0.1 * grid)[:, None]
    nominals = 1.0 / deflators
    assert self_financing_residual(nominals, deflators, grid) > 0.05


def test_rebalanced_strategy_is_self_financing():
    grid = np.linspace(0.0, 1.0, 201)
    deflators = np.stack([np.exp(0.02 * grid), np.exp(0.05 * grid)], axis=-1)
    x1 = 1.0 + 0.5 * grid
    # 第二个资产的持仓吸收第一个资产持仓变化的成本
    x2 = 1.0 - np.concatenate(([0.0], np.cumsum(np.diff(x1) * 0.5 * (deflators[1:, 0] + deflators[:-1, 0])
                                                 / (0.5 * (deflators[1:, 1] + deflators[:-1, 1])))))
    nominals = np.stack([x1, x2], axis=-1)
    assert self_financing_residual(nominals, deflators, grid) < 5.0 * (grid[1] - grid[0])


def test_bracket_correction_vanishes_for_constant_volatility(gbm_model):
    ensemble = simulate(gbm_model, 1.0, 10, 50, seed=2)
    np.testing.assert_array_equal(bracket_correction(gbm_model, ensemble), 0.0)


def test_euler_weak_error_halves_with_the_step():
    spec = constant_model([1.0], [[0.1]])
    errors = []
    for steps in (4, 8, 16):
        ensemble = simulate(spec, 1.0, steps, 20000, seed=13)
        terminal = ensemble.assets[:, -1, 0]
        stderr = terminal.std(ddof=1) / np.sqrt(terminal.size)
        # 常数系数下 Euler 均值精确为 (1 + α h)^n
        assert abs(terminal.mean() - (1.0 + 1.0 / steps) ** steps) < 4.0 * stderr
        errors.append(np.exp(1.0) - terminal.mean())
        variance = ensemble.increments.var()
        assert variance == pytest.approx(1.0 / steps, rel=0.05)
    assert 1.5 < errors[0] / errors[1] < 2.5
    assert 1.5 < errors[1] / errors[2] < 2.5


def test_bracket_correction_for_state_dependent_volatility():
    # σ = 0.2 + 0.1 S 时 d⟨σ, W⟩/dt = 0.1 S σ(S)
    spec = ItoModelSpec(drift=ConstantCoefficient([0.05]), volatility=AffineCoefficient([[0.2]], [[0.1]]),
                        initial_assets=np.ones(1), initial_rates=np.zeros(1))
    assert not spec.deterministic_volatility
    ensemble = simulate(spec, 1.0, 10, 20000, seed=6)
    correction = bracket_correction(spec, ensemble)
    assert correction.shape == (11, 1)
    s = ensemble.assets[:, :-1, 0]
    expected = np.mean(0.1 * s * (0.2 + 0.1 * s), axis=0)
    np.testing.assert_allclose(correction[:-1, 0], expected, atol=3e-3)
    assert correction[-1, 0] == correction[-2, 0]
    assert correction[0, 0] == pytest.approx(0.03, abs=3e-3)


def test_scenario_view_of_a_path(gbm_model):
    ensemble = simulate(gbm_model, 1.0, 10, 4, seed=2)
    scenario = ensemble.scenario(2)
    np.testing.assert_array_equal(scenario.deflators[0], ensemble.assets[2, :, 0])
    with pytest.raises(ScenarioInvalid):
        ensemble.scenario(4)


def test_from_arrays_builds_deterministic_ensemble():
    grid = np.linspace(0.0, 1.0, 11)
    ensemble = PathEnsemble.from_arrays(grid, (grid ** 2)[:, None])
    assert ensemble.n_paths == 1
    assert not ensemble.stochastic
    with pytest.raises(GridMismatch):
        PathEnsemble.from_arrays(grid[:-1], (grid ** 2)[:, None])
