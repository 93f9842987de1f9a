"""Desk-scale end-to-end checks. Run with `pytest -m slow`."""
import json
import math

import numpy as np
import pytest
from scipy.special import erfc

from app import main
from simulators.billiard import (ParticleState, WedgeGeometry, advance_to, lyapunov_exponent,
                                 periodic_orbit, simulate_trajectory)
from simulators.mode_competition import (THRESHOLD_COEFFICIENT, CompetitionConfig, alpha_constant,
                                         analytic_win_probability, born_rule_probabilities,
                                         estimate_win_probabilities, midpoint_slope, pilot_end_time,
                                         run_trial, sweep_initial_fraction)
from simulators.mode_system import REFERENCE_GAMMA, REFERENCE_LOSS, IntegrationConfig, reference_mode_system
from simulators.pattern_analysis import (PatternMatrix, normalized_entropy, pearson_correlation,
                                         porter_thomas_fit, synthetic_pattern)
from simulators.sde_core import EnsembleIntegrator, linear_moments
from simulators.stability_map import (StabilityMapAnalyzer, compute_stability_map, default_grid,
                                      intensity_quantile)
from conftest import small_competition, unit_system

pytestmark = pytest.mark.slow

WORKERS = 4


def reference_competition(n0, trials, seed, noise_to_gain=6.25, gains=None, batch_size=512):
    n0 = np.asarray(n0, dtype=float)
    sys_ = reference_mode_system(n0.size, gains=gains, noise_to_gain=noise_to_gain)
    t_end = pilot_end_time(sys_, n0, seed=seed)
    integration = IntegrationConfig.for_system(sys_, t_end, record_stride=10)
    return CompetitionConfig(sys=sys_, initial_populations=n0, integration=integration,
                             trials=trials, master_seed=seed, batch_size=batch_size)


def test_born_rule_line():
    fractions = np.round(np.arange(0.1, 0.91, 0.1), 2)
    base = reference_competition([6.25, 6.25], trials=100_000, seed=101)
    frame = sweep_initial_fraction(base, fractions, 12.5, workers=WORKERS)
    assert np.all(np.abs(frame['P_0'] - frame['sweep_param']) <= 0.05)


def test_regime_ordering():
    fractions = [0.4, 0.45, 0.5, 0.55, 0.6]
    slopes = {}
    for z_total in (3.125, 12.5, 50.0):
        base = reference_competition([z_total / 2] * 2, trials=20_000, seed=202,
                                 noise_to_gain=z_total / 2)
        frame = sweep_initial_fraction(base, fractions, z_total, workers=WORKERS)
        slopes[z_total] = midpoint_slope(frame['sweep_param'], frame['P_0'])
    assert slopes[50.0] > slopes[12.5] > slopes[3.125]
    assert slopes[12.5] == pytest.approx(1.0, abs=0.15)


def test_five_mode_born_rule_equal_gains():
    n0 = np.array([1.0, 2.0, 3.0, 4.0, 2.5])
    outcome = estimate_win_probabilities(reference_competition(n0, trials=20_000, seed=303),
                                         workers=WORKERS)
    assert np.max(np.abs(outcome.win_probabilities - n0 / n0.sum())) <= 0.05


def test_five_mode_born_rule_unequal_gains():
    n0 = np.array([1.0, 2.0, 3.0, 4.0, 2.5])
    gains = REFERENCE_LOSS + REFERENCE_GAMMA * np.array([1.0, 1.05, 0.95, 1.1, 0.9])
    cfg = reference_competition(n0, trials=20_000, seed=404, gains=gains)
    outcome = estimate_win_probabilities(cfg, workers=WORKERS)
    t_star = outcome.t_star_summary['median']
    assert t_star is not None
    expected = born_rule_probabilities(n0, cfg.sys.net_gains, t_star)
    assert np.max(np.abs(outcome.win_probabilities - expected)) <= 0.07


def test_gaussian_estimate_matches_monte_carlo_without_saturation():
    z_total, trials = 12.5, 20_000
    for fraction in (0.45, 0.475, 0.5, 0.525, 0.55):
        initial = (fraction * z_total, (1 - fraction) * z_total)
        for t in (2.0, 4.0, 6.0, 10.0, 15.0):
            cfg = small_competition(trials=trials, seed=505, initial=initial, t_end=t,
                                    sys=unit_system(2, beta_self=0.0, beta_cross=0.0),
                                    batch_size=1000)
            p = estimate_win_probabilities(cfg, workers=WORKERS).win_probabilities[0]
            expected = analytic_win_probability(1.0, 1.0, 6.25, 6.25, *initial, t)
            stderr = math.sqrt(expected * (1 - expected) / trials)
            assert abs(p - expected) <= 3 * stderr + 0.01, (fraction, t)


def test_moments_match_linear_theory():
    gamma, eta, dt, trials, chunk = 1.0, 2.0, 1e-3, 100_000, 10_000
    sys_ = unit_system(1, noise=eta, beta_self=0.0, beta_cross=0.0)
    cfg = IntegrationConfig(dt=dt, t_end=1.0, record_stride=100)
    integrator = EnsembleIntegrator(sys_, cfg)
    rng = np.random.default_rng(606)
    samples = []
    for _ in range(trials // chunk):
        normals = rng.standard_normal((chunk,) + integrator.noise_shape())
        samples.append(integrator.run(np.ones((chunk, 1), dtype=complex), normals).total_populations)
    n = np.concatenate(samples, axis=1)
    times = np.arange(1, 11) * 0.1
    for row, t in zip(n[1:], times):
        mean, var = linear_moments(1.0, gamma, eta, t)
        se_mean = row.std() / math.sqrt(trials)
        se_var = math.sqrt(np.mean((row - row.mean()) ** 4) - row.var() ** 2) / math.sqrt(trials)
        assert abs(row.mean() - mean) < 3 * se_mean, t
        assert abs(row.var() - var) < 3 * se_var, t


def test_constants():
    assert 3.0 <= alpha_constant() <= 3.03
    assert 1.96 <= THRESHOLD_COEFFICIENT <= 1.98


def test_billiard_integrity_in_cavity_units():
    for degrees in (35.0, 45.0, 55.0):
        wedge = WedgeGeometry.from_degrees(degrees)
        path = simulate_trajectory(ParticleState(10e-6, 100e-6, 1e6, 0.0), wedge, max_bounces=10_000)
        assert path.max_relative_energy_drift(wedge) < 1e-9
        orbit = periodic_orbit(20e-6, 150e-6, wedge)
        start = orbit.launch_state()
        end = advance_to(start, wedge, orbit.period)
        assert math.hypot(end.x - start.x, end.y - start.y) < 1e-8 * orbit.y0
        assert math.hypot(end.vx - start.vx, end.vy - start.vy) < 1e-8 * orbit.vx


def test_chaos_signatures():
    launch = ParticleState(10e-6, 100e-6, 1e6, 0.0)
    regular = lyapunov_exponent(launch, WedgeGeometry.from_degrees(45.0), horizon=2e-7)
    chaotic = lyapunov_exponent(launch, WedgeGeometry.from_degrees(55.0), horizon=2e-7)
    assert regular.is_regular()
    assert chaotic.is_chaotic()

    wedge = WedgeGeometry.from_degrees(35.0)
    orbit = periodic_orbit(0.0, 100e-6, wedge)
    horizon = 1000 * orbit.period
    near_orbit = ParticleState(0.0, orbit.y0, 1.001 * orbit.vx, 0.0)
    energy = near_orbit.energy(wedge)
    rates = [lyapunov_exponent(near_orbit, wedge, horizon).rate_per_bounce]
    for fraction in (0.75, 0.8, 0.85, 0.9, 0.95):
        y = 30e-6
        speed = math.sqrt(2 * (energy / wedge.mass - wedge.gravity * y))
        edge = ParticleState(fraction * y / wedge.slope, y, 0.0, speed)
        rates.append(lyapunov_exponent(edge, wedge, horizon).rate_per_bounce)
    assert rates[0] < 0.05
    assert max(rates[1:]) > 0.05


def test_stability_map_periodic_modes_dominate_near_center(reference_stability):
    grid = default_grid(reference_stability.wedge, 1e-3, resolution=101)
    cells = compute_stability_map(grid, reference_stability)
    summary = StabilityMapAnalyzer(cells).get_cut_summary()
    assert summary['contiguous'].all()
    has_regular = summary['n_regular'] > 0
    assert summary.loc[has_regular, 'contains_center'].all()
    mixed = has_regular & (summary['n_chaotic'] > 0)
    assert mixed.sum() >= 5
    assert summary.loc[mixed, 'flanked'].all()


@pytest.mark.parametrize('p', [0.01, 0.5, 0.99])
@pytest.mark.parametrize('n_modes', [1, 1e3, 1e6])
def test_quantile_round_trip(p, n_modes):
    gamma = intensity_quantile(p, n_modes)
    recovered = -math.expm1(n_modes * math.log1p(-erfc(math.sqrt(gamma / 2.0))))
    assert recovered == pytest.approx(p, rel=1e-10)


def test_analysis_pipeline():
    assert normalized_entropy(PatternMatrix(np.full((32, 32), 7.0))).normalized < 0.02
    uniform = np.linspace(0.0, 1.0, 128 * 64).reshape(64, 128)
    assert normalized_entropy(PatternMatrix(uniform)).normalized > 0.98
    values = np.random.default_rng(7).exponential(size=(32, 32))
    a = PatternMatrix(values)
    assert pearson_correlation(a, a) == pytest.approx(1.0, abs=1e-12)
    assert pearson_correlation(a, PatternMatrix(values.max() - values)) == pytest.approx(-1.0, abs=1e-12)
    wedge = WedgeGeometry.from_degrees(35.0)
    energy = wedge.mass * wedge.gravity * 500e-6
    passed = sum(
        porter_thomas_fit(synthetic_pattern('chaotic', wedge, energy, (64, 64), seed)).below_critical
        for seed in range(100)
    )
    assert passed >= 95


def test_reproducible_across_worker_counts():
    cfg = small_competition(trials=300, seed=808, batch_size=64)
    one = estimate_win_probabilities(cfg, workers=1)
    many = estimate_win_probabilities(cfg.replace(batch_size=37), workers=3)
    assert np.array_equal(one.wins, many.wins)
    assert one.t_star_summary == many.t_star_summary
    for index in (0, 150, 299):
        assert np.array_equal(run_trial(cfg, index).final_populations,
                              run_trial(cfg, index).final_populations)


def test_cli_reproducible_across_threads(tmp_path):
    outputs = []
    for threads in ('1', '3'):
        out = str(tmp_path / f'compete_{threads}.json')
        assert main(['compete', '--trials', '200', '--t-end', '4e-10', '--seed', '9',
                     '--threads', threads, '-o', out]) == 0
        with open(out) as f:
            outputs.append(json.load(f))
    assert outputs[0]['W_i'] == outputs[1]['W_i']
    assert outputs[0]['t_star_summary'] == outputs[1]['t_star_summary']
