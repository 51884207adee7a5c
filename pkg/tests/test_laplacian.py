import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid

from conftest import constant_model, exponential_scenario
from gauge_arb.arbitrage import curvature_field, zc_range_report
from gauge_arb.config import CURVATURE_TOL, EPSILON_KERNEL_FLOOR
from gauge_arb.errors import NotApplicable, ScenarioInvalid, SignChange, XDependence
from gauge_arb.laplacian import (
    SectionGrid,
    analyze_ensemble,
    assemble_covariant,
    assemble_laplacian,
    calibrate_epsilon_kernel,
    cosine_similarity,
    extract_pricing_kernel,
    is_complete,
    is_nflvr,
    radon_nikodym,
    refinement_order,
    smallest_eigenpairs,
    spectrum,
    trapezoid_weights,
    zero_curvature_companion,
)
from gauge_arb.market_model import grid_nodes, scenario_from_arrays
from gauge_arb.simulation import simulate
from gauge_arb.utils import centered_gradient


def single_axis(n=17):
    return [np.linspace(0.5, 1.5, n)]


def harmonic_section(scenario, axes, rho):
    """单资产 D = e^{gt}、r ≡ ρ 时的解析调和截面 e^{ρt}/x"""
    mesh = grid_nodes([scenario.time_grid, *axes])
    return np.exp(rho * mesh[..., 0]) / mesh[..., 1]


def test_analytic_section_is_discretely_harmonic():
    scenario = exponential_scenario([0.04], [0.02])
    axes = single_axis()
    covariant = assemble_covariant(scenario, axes)
    assert np.max(covariant.directional_sup(harmonic_section(scenario, axes, 0.02))) < 1e-12
    assert np.max(covariant.directional_sup(np.ones(covariant.grid_shape))) > 0.1


def test_two_asset_kernel_section_is_harmonic():
    growth = np.array([-1.0, 2.0])
    scenario = exponential_scenario(growth, -growth, n_times=9)
    axes = [np.linspace(0.5, 1.5, 7)] * 2
    covariant = assemble_covariant(scenario, axes)
    mesh = grid_nodes(axes)
    section = np.moveaxis(1.0 / (mesh[..., 0, None] * scenario.deflators[0] + mesh[..., 1, None]
                                 * scenario.deflators[1]), -1, 0)
    assert np.max(covariant.directional_sup(section)) < 5e-2


def test_laplacian_is_symmetric_and_positive(arbitrage_scenario):
    axes = [np.linspace(0.5, 1.5, 6)] * 2
    laplacian = assemble_laplacian(assemble_covariant(arbitrage_scenario, axes))
    assert abs(laplacian.matrix - laplacian.matrix.T).max() == 0.0
    rng = np.random.default_rng(0)
    norm = laplacian.norm_bound
    for _ in range(100):
        v = rng.normal(size=laplacian.size)
        assert v @ (laplacian.matrix @ v) / (v @ v) >= -1e-10 * norm


def test_flat_market_is_arbitrage_free_and_complete(flat_scenario):
    result = spectrum(flat_scenario, single_axis(), k=3)
    assert result.lambda_min < 1e-6
    assert np.all(result.residuals <= 1e-10 * max(result.operator_norm, 1.0))
    assert is_nflvr(result).verdict == "ARBITRAGE-FREE"
    assert is_complete(result) == "COMPLETE"


def test_ground_section_matches_analytic_kernel():
    rho, g = 0.03, 0.05
    scenario = exponential_scenario([g], [rho])
    axes = single_axis()
    result = spectrum(scenario, axes, k=2)
    analytic = harmonic_section(scenario, axes, rho)
    weights = result.section(0).measure()
    assert cosine_similarity(result.sections[0], analytic, weights) > 1.0 - 1e-4

    kernel = extract_pricing_kernel(result.section(0), scenario, [1.0])
    np.testing.assert_allclose(kernel.values, np.exp(-(g + rho) * scenario.time_grid), rtol=1e-6)
    assert kernel.residual < 1e-4
    for i, t in enumerate(scenario.time_grid):
        assert radon_nikodym(result.section(0), scenario, i) == pytest.approx(np.exp(-(g + rho) * t), rel=1e-6)


def test_flat_kernel_is_constant(flat_scenario):
    result = spectrum(flat_scenario, single_axis(), k=2)
    kernel = extract_pricing_kernel(result.section(0), flat_scenario, [1.0])
    np.testing.assert_allclose(kernel.values, 1.0, atol=1e-8)
    assert radon_nikodym(result.section(0), flat_scenario, 0) == pytest.approx(1.0)


def test_kernel_does_not_depend_on_reference_portfolio(homogeneous_scenario):
    axes = [np.linspace(0.5, 1.5, 5)] * 2
    result = spectrum(homogeneous_scenario, axes, k=2)
    first = extract_pricing_kernel(result.section(0), homogeneous_scenario, [1.0, 0.5])
    second = extract_pricing_kernel(result.section(0), homogeneous_scenario, [0.5, 1.0])
    np.testing.assert_allclose(first.values, second.values, rtol=1e-6)
    off_grid = extract_pricing_kernel(result.section(0), homogeneous_scenario, [0.8, 1.1])
    np.testing.assert_allclose(off_grid.values, first.values, rtol=1e-3)


def test_arbitrage_fixture_has_no_kernel(arbitrage_scenario):
    axes = [np.linspace(0.5, 1.5, 6)] * 2
    result = spectrum(arbitrage_scenario, axes, k=2)
    assert result.lambda_min > 1e-7
    assert is_nflvr(result).verdict == "ARBITRAGE"
    assert is_complete(result) == "ARBITRAGE"
    with pytest.raises(XDependence):
        radon_nikodym(result.section(0), arbitrage_scenario, arbitrage_scenario.time_grid.size - 1)


def test_sparse_solver_matches_dense():
    scenario = exponential_scenario([0.02], [0.01], n_times=21)
    axes = single_axis(41)
    laplacian = assemble_laplacian(assemble_covariant(scenario, axes))
    assert laplacian.size > 400
    result = smallest_eigenpairs(laplacian, k=3)
    dense = np.linalg.eigvalsh(laplacian.matrix.toarray())[:3]
    np.testing.assert_allclose(result.eigenvalues[1:], dense[1:], rtol=1e-6)
    assert result.converged
    assert result.lambda_min < 1e-6
    analytic = harmonic_section(scenario, axes, 0.01)
    assert cosine_similarity(result.sections[0], analytic, result.section(0).measure()) > 1.0 - 1e-4


def test_verdict_bands():
    base = spectrum(exponential_scenario([0.0], [0.0], n_times=5), single_axis(5), k=2)
    inconclusive = dataclasses.replace(base, eigenvalues=np.array([5e-8, 1.0]))
    assert is_nflvr(inconclusive, 1e-8).verdict == "INCONCLUSIVE"
    arbitrage = dataclasses.replace(base, eigenvalues=np.array([2e-7, 1.0]))
    assert is_nflvr(arbitrage, 1e-8).verdict == "ARBITRAGE"
    degenerate = dataclasses.replace(base, eigenvalues=np.array([1e-12, 1e-11]))
    assert is_complete(degenerate) == "INCOMPLETE"
    with pytest.raises(NotApplicable):
        is_complete(dataclasses.replace(base, stochastic=True))


def test_refinement_order_and_history():
    assert refinement_order([0.1, 0.05, 0.025], [1e-2, 2.5e-3, 6.25e-4]) == pytest.approx(2.0)
    base = spectrum(exponential_scenario([0.0], [0.0], n_times=5), single_axis(5), k=2)
    verdict = is_nflvr(base, history=[(0.1, 4e-6), (0.05, 1e-6)])
    assert verdict.order == pytest.approx(2.0)


def test_sign_changing_section_is_rejected(flat_scenario):
    axes = single_axis(5)
    values = np.ones((flat_scenario.time_grid.size, 5))
    values[0, 0] = -1.0
    with pytest.raises(SignChange):
        extract_pricing_kernel(SectionGrid(values, flat_scenario.time_grid, tuple(axes)), flat_scenario, [1.0])


def test_ensemble_blocks():
    spec = constant_model([0.05], [[0.2]])
    ensemble = simulate(spec, 1.0, 8, 3, seed=11)
    analysis = analyze_ensemble(ensemble, single_axis(9), k=2)
    assert analysis.paths == (0, 1, 2)
    assert analysis.verdict == "ARBITRAGE-FREE"
    assert all(r.stochastic for r in analysis.results)
    with pytest.raises(NotApplicable):
        is_complete(analysis.results[0])


def zc_growth_scenario(n_times):
    """两资产增长率 (−1, 2)、r = −g：收益恒为零的零曲率情景"""
    growth = np.array([-1.0, 2.0])
    return exponential_scenario(growth, -growth, n_times=n_times)


def moving_kernel_scenario(n_times=17):
    """D^2 = 2 D^1 = 2 exp(0.05t + 0.2 sin t)，两资产共享 r = 0.6t − 0.05 − 0.2 cos t"""
    t = np.linspace(0.0, 1.0, n_times)
    base = np.exp(0.05 * t + 0.2 * np.sin(t))
    rates = 0.6 * t - 0.05 - 0.2 * np.cos(t)
    return scenario_from_arrays(t, np.stack([base, 2.0 * base]), short_rates=np.stack([rates, rates]))


def test_fine_grid_single_asset_kernel():
    scenario = exponential_scenario([0.03], [0.02], n_times=64)
    axes = single_axis(64)
    result = spectrum(scenario, axes, k=2)
    assert result.lambda_min < 1e-6
    assert result.epsilon_kernel >= EPSILON_KERNEL_FLOOR
    analytic = harmonic_section(scenario, axes, 0.02)
    assert cosine_similarity(result.sections[0], analytic, result.section(0).measure()) > 1.0 - 1e-4
    assert is_nflvr(result).verdict == "ARBITRAGE-FREE"


def test_zero_curvature_discretization_error_refines():
    spacings, lambdas = [], []
    for n_times in (9, 17, 33):
        result = spectrum(zc_growth_scenario(n_times), [np.linspace(0.5, 1.5, 5)] * 2, k=2)
        assert is_nflvr(result).verdict == "ARBITRAGE-FREE"
        spacings.append(1.0 / (n_times - 1))
        lambdas.append(result.lambda_min)
    assert lambdas[0] > lambdas[1] > lambdas[2] > 0.0
    assert refinement_order(spacings, lambdas) >= 1.5


def test_arbitrage_gap_survives_two_refinements():
    previous = None
    for n in (5, 9, 17):
        scenario = exponential_scenario([0.01, 0.03], [0.0, 0.0], n_times=n)
        result = spectrum(scenario, [np.linspace(0.5, 1.5, n)] * 2, k=1)
        if previous is not None:
            assert result.lambda_min > 0.25 * previous
        previous = result.lambda_min
    assert is_nflvr(result).verdict == "ARBITRAGE"


def test_zero_curvature_companion_removes_curvature(arbitrage_scenario):
    companion = zero_curvature_companion(arbitrage_scenario)
    np.testing.assert_array_equal(companion.deflators, arbitrage_scenario.deflators)
    np.testing.assert_allclose(companion.short_rates[:, 0], [0.01, -0.01], atol=1e-12)
    assert curvature_field(companion, [np.linspace(0.5, 1.5, 5)] * 2).sup_norm < 1e-5
    assert curvature_field(arbitrage_scenario, [np.linspace(0.5, 1.5, 5)] * 2).sup_norm > 1e-3


def test_calibrated_threshold_separates_fixtures(arbitrage_scenario):
    axes = [np.linspace(0.5, 1.5, 6)] * 2
    arbitrage = spectrum(arbitrage_scenario, axes, k=1)
    assert EPSILON_KERNEL_FLOOR <= arbitrage.epsilon_kernel < 0.1 * arbitrage.lambda_min
    zc_axes = [np.linspace(0.5, 1.5, 5)] * 2
    zc = zc_growth_scenario(9)
    epsilon = calibrate_epsilon_kernel(zc, zc_axes)
    assert spectrum(zc, zc_axes, k=1, epsilon_kernel=epsilon).lambda_min < epsilon
    assert spectrum(zc, zc_axes, k=1, epsilon_kernel=1e-12).epsilon_kernel == 1e-12


def test_nelson_mode_section_is_discretely_harmonic():
    scenario = moving_kernel_scenario()
    axes = [np.linspace(0.5, 1.5, 5)] * 2
    covariant = assemble_covariant(scenario, axes, time_derivative_mode="nelson")
    assert covariant.time_derivative_mode == "nelson"
    t = scenario.time_grid
    growth = centered_gradient(np.log(scenario.deflators[0]), t, axis=0) + scenario.short_rates[0]
    mesh = grid_nodes(axes)
    deflator = (mesh[..., 0] + 2.0 * mesh[..., 1])[None] * scenario.deflators[0][:, None, None]
    section = np.exp(cumulative_trapezoid(growth, t, initial=0.0))[:, None, None] / deflator
    assert np.max(covariant.directional_sup(section)) < 1e-10
    with pytest.raises(ScenarioInvalid):
        assemble_covariant(scenario, axes, time_derivative_mode="pathwise")


def test_classical_and_nelson_modes_share_a_kernel():
    scenario = moving_kernel_scenario()
    axes = [np.linspace(0.5, 1.5, 5)] * 2
    classical = spectrum(scenario, axes, k=2, time_derivative_mode="classical")
    nelson = spectrum(scenario, axes, k=2, time_derivative_mode="nelson")
    assert classical.lambda_min < 1e-6
    assert nelson.lambda_min < 1e-10
    weights = classical.section(0).measure()
    assert cosine_similarity(classical.sections[0], nelson.sections[0], weights) > 1.0 - 1e-4
    assert is_nflvr(classical).verdict == is_nflvr(nelson).verdict == "ARBITRAGE-FREE"


def test_arbitrage_free_verdict_implies_flat_curvature(flat_scenario, homogeneous_scenario, arbitrage_scenario):
    box = [np.linspace(0.5, 1.5, 5)] * 2
    cases = [(flat_scenario, single_axis(5)), (homogeneous_scenario, box), (arbitrage_scenario, box)]
    verdicts = []
    for scenario, axes in cases:
        verdict = is_nflvr(spectrum(scenario, axes, k=2)).verdict
        verdicts.append(verdict)
        if verdict == "ARBITRAGE-FREE":
            assert curvature_field(scenario, axes).sup_norm < CURVATURE_TOL
    assert verdicts == ["ARBITRAGE-FREE", "ARBITRAGE-FREE", "ARBITRAGE"]


def test_trivial_connection_gives_the_graph_laplacian(flat_scenario):
    axes = single_axis(5)
    t = flat_scenario.time_grid
    laplacian = assemble_laplacian(assemble_covariant(flat_scenario, axes))

    def difference(coords):
        n = coords.shape[0]
        return sp.diags([-1.0 / np.diff(coords), 1.0 / np.diff(coords)], [0, 1], shape=(n - 1, n))

    w_t, w_x = trapezoid_weights(t), trapezoid_weights(axes[0])
    gradient = sp.vstack([sp.kron(difference(t), sp.identity(5)), sp.kron(sp.identity(t.size), difference(axes[0]))])
    edge_weights = np.concatenate([np.outer(np.diff(t), w_x).ravel(), np.outer(w_t, np.diff(axes[0])).ravel()])
    scale = np.diag(1.0 / np.sqrt(np.outer(w_t, w_x).ravel()))
    expected = scale @ (gradient.T @ sp.diags(edge_weights) @ gradient).toarray() @ scale
    np.testing.assert_allclose(laplacian.matrix.toarray(), expected, atol=1e-10)

    result = smallest_eigenpairs(laplacian, k=3)
    assert result.lambda_min < 1e-12
    assert np.ptp(np.abs(result.sections[0])) < 1e-8
    np.testing.assert_allclose(result.eigenvalues[1:], np.linalg.eigvalsh(expected)[1:3], rtol=1e-8)


def test_nelson_ensemble_agrees_with_range_test():
    model = constant_model([0.05, 0.05], [[0.2, 0.0], [0.0, 0.2]])
    ensemble = simulate(model, 1.0, 8, 400, seed=1)
    assert all(r.verdict == "ZC" for r in zc_range_report(model, ensemble.time_grid, ensemble))
    analysis = analyze_ensemble(ensemble, [np.linspace(0.5, 1.5, 5)] * 2, k=2, paths=range(4))
    assert analysis.mode == "nelson"
    assert analysis.verdict == "ARBITRAGE-FREE"
    assert np.all(analysis.lambda_min < analysis.epsilon_kernel)
    assert analysis.kernel_dimension >= 1


def test_noiseless_ensemble_detects_arbitrage():
    model = constant_model([0.01, 0.03], [[0.0], [0.0]])
    ensemble = simulate(model, 1.0, 8, 4, seed=5)
    analysis = analyze_ensemble(ensemble, [np.linspace(0.5, 1.5, 5)] * 2, k=2)
    assert analysis.epsilon_kernel == EPSILON_KERNEL_FLOOR
    assert analysis.verdict == "ARBITRAGE"
    assert analysis.kernel_dimension == 0


def test_ensemble_modes_share_the_path_blocks():
    model = constant_model([0.05], [[0.2]])
    ensemble = simulate(model, 1.0, 8, 3, seed=11)
    classical = analyze_ensemble(ensemble, single_axis(9), k=2, mode="classical")
    assert classical.mode == "classical"
    assert classical.verdict == "ARBITRAGE-FREE"
    with pytest.raises(ScenarioInvalid):
        analyze_ensemble(ensemble, single_axis(9), mode="pathwise")
