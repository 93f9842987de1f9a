import numpy as np
import pytest

from simulators.mode_system import AmplitudeState, IntegrationConfig, ModeSystem, reference_mode_system
from simulators.sde_core import (EnsembleIntegrator, complex_noise_increment, drift_derivative, em_step,
                                 integrate, linear_moments, trajectory_frame)
from utils.errors import ConfigurationError, DimensionMismatchError, NonFiniteStateError
from utils.rng import trial_generator

from conftest import unit_system


def linear_system(gamma=1.0, eta=2.0, mode_count=1):
    return ModeSystem(gains=np.full(mode_count, gamma + 1.0), losses=np.ones(mode_count),
                      noise_strengths=np.full(mode_count, eta),
                      saturation=np.zeros((mode_count, mode_count)))


def test_mode_system_rejects_bad_shapes():
    with pytest.raises(DimensionMismatchError):
        ModeSystem(gains=[1.0, 1.0], losses=[1.0], noise_strengths=[1.0, 1.0],
                   saturation=np.zeros((2, 2)))
    with pytest.raises(DimensionMismatchError):
        ModeSystem(gains=[1.0, 1.0], losses=[1.0, 1.0], noise_strengths=[1.0, 1.0],
                   saturation=np.zeros((3, 3)))
    with pytest.raises(ConfigurationError):
        ModeSystem(gains=[-1.0], losses=[1.0], noise_strengths=[1.0], saturation=[[0.0]])


def test_mode_system_does_not_freeze_caller_arrays():
    gains = np.array([2.0, 2.0])
    ModeSystem(gains=gains, losses=[1.0, 1.0], noise_strengths=[1.0, 1.0], saturation=np.zeros((2, 2)))
    gains[0] = 3.0


def test_reference_system_constants():
    sys_ = reference_mode_system(2)
    assert np.allclose(sys_.net_gains, 7e10)
    assert np.allclose(2 * sys_.noise_strengths / sys_.net_gains, 12.5)
    assert sys_.saturation[0, 0] == 1e-5 and sys_.saturation[0, 1] == 2e-5
    assert ModeSystem.from_dict(sys_.to_dict()).to_dict() == sys_.to_dict()


def test_integration_config_validation(reference_system):
    with pytest.raises(ConfigurationError):
        IntegrationConfig(dt=1.0, t_end=0.5)
    with pytest.raises(ConfigurationError):
        IntegrationConfig(dt=0.0, t_end=1.0)
    with pytest.raises(ConfigurationError):
        IntegrationConfig(dt=2e-12, t_end=1e-10).validate_for(reference_system)
    cfg = IntegrationConfig.for_system(reference_system, 4e-10)
    assert cfg.dt == pytest.approx(0.01 / 7e10)
    assert cfg.n_steps == 2800


def test_drift_without_noise_or_saturation_is_linear():
    sys_ = linear_system(gamma=0.5)
    state = AmplitudeState([1.0 + 2.0j])
    assert np.allclose(drift_derivative(state, sys_), 0.5 * (1.0 + 2.0j))


def test_drift_saturates_with_population():
    sys_ = ModeSystem(gains=[2.0], losses=[1.0], noise_strengths=[0.0], saturation=[[0.01]])
    state = AmplitudeState.from_populations([100.0])
    # g / (1 + beta n) - kappa = 2/2 - 1 = 0
    assert np.allclose(drift_derivative(state, sys_), 0.0)


def test_em_step_zero_noise_is_explicit_euler():
    sys_ = linear_system(gamma=1.0)
    state = AmplitudeState([1.0 + 0.0j])
    stepped = em_step(state, sys_, 0.01, np.zeros(1))
    assert stepped.amplitudes[0] == pytest.approx(1.01)
    assert stepped.time == pytest.approx(0.01)


def test_em_step_rejects_mismatched_state():
    with pytest.raises(DimensionMismatchError):
        em_step(AmplitudeState([1.0, 1.0, 1.0]), unit_system(2), 0.01, np.zeros(3))


def test_em_step_overflow_raises():
    sys_ = ModeSystem(gains=[1e10], losses=[0.0], noise_strengths=[0.0], saturation=[[0.0]])
    with pytest.raises(NonFiniteStateError):
        em_step(AmplitudeState([1e300]), sys_, 1.0, np.zeros(1))


def test_complex_noise_increment_moments():
    rng = np.random.default_rng(3)
    dt = 0.01
    draws = np.array([complex_noise_increment(rng, dt, 1)[0] for _ in range(20000)])
    assert np.mean(np.abs(draws) ** 2) == pytest.approx(dt, rel=0.04)
    assert abs(np.mean(draws ** 2)) < 0.04 * dt
    assert np.var(draws.real) == pytest.approx(dt / 2, rel=0.05)


def test_integrate_records_initial_and_end_states():
    sys_ = unit_system(2)
    cfg = IntegrationConfig(dt=0.01, t_end=1.0, record_stride=30)
    initial = AmplitudeState.from_populations([6.0, 6.0])
    trajectory = integrate(initial, sys_, cfg, trial_generator(1, 0))
    assert trajectory[0] is initial
    assert trajectory[-1].time == pytest.approx(1.0)
    assert len(trajectory) == 1 + 3 + 1
    times = [s.time for s in trajectory]
    assert times == sorted(times)


def test_integrate_is_reproducible():
    sys_ = unit_system(2)
    cfg = IntegrationConfig(dt=0.01, t_end=0.5)
    initial = AmplitudeState.from_populations([6.0, 6.0])
    a = integrate(initial, sys_, cfg, trial_generator(11, 4))[-1].amplitudes
    b = integrate(initial, sys_, cfg, trial_generator(11, 4))[-1].amplitudes
    c = integrate(initial, sys_, cfg, trial_generator(11, 5))[-1].amplitudes
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_free_growth_matches_discrete_exponential():
    sys_ = linear_system(gamma=1.0, eta=0.0)
    cfg = IntegrationConfig(dt=0.001, t_end=1.0)
    final = integrate(AmplitudeState([1.0]), sys_, cfg, trial_generator(0, 0))[-1]
    assert final.total_population == pytest.approx((1.001) ** 2000, rel=1e-10)


def test_batched_integration_matches_single_trajectories():
    sys_ = unit_system(2)
    cfg = IntegrationConfig(dt=0.01, t_end=2.0, record_stride=7)
    integrator = EnsembleIntegrator(sys_, cfg)
    initial = np.array([[np.sqrt(7.5), np.sqrt(5.0) * 1j]] * 3)
    normals = np.stack([trial_generator(5, i).standard_normal(integrator.noise_shape())
                        for i in range(3)])
    batch = integrator.run(initial, normals)
    for i in range(3):
        single = integrate(AmplitudeState(initial[i]), sys_, cfg, trial_generator(5, i))
        assert np.array_equal(batch.final_amplitudes[i], single[-1].amplitudes)
        assert np.array_equal(batch.total_populations[:, i],
                              [s.total_population for s in single])
    assert not batch.aborted.any()


def test_global_phase_rotation_commutes_with_step():
    sys_ = unit_system(2)
    rng = np.random.default_rng(9)
    rotation = np.exp(0.7j)
    a = AmplitudeState([2.0 + 1.0j, -0.5 + 3.0j])
    b = AmplitudeState(a.amplitudes * rotation)
    for _ in range(200):
        dW = complex_noise_increment(rng, 0.01, 2)
        a = em_step(a, sys_, 0.01, dW)
        b = em_step(b, sys_, 0.01, dW * rotation)
    assert np.allclose(b.amplitudes, a.amplitudes * rotation, rtol=1e-8)


def test_linear_moments_zero_gain_limit():
    mean0, var0 = linear_moments(1.0, 0.0, 2.0, 1.5)
    mean, var = linear_moments(1.0, 1e-9, 2.0, 1.5)
    assert mean == pytest.approx(mean0, rel=1e-6)
    assert var == pytest.approx(var0, rel=1e-6)
    assert mean0 == pytest.approx(4.0)
    assert var0 == pytest.approx(2 * 1.0 * 3.0 + 9.0)


def test_monte_carlo_moments_match_linear_theory():
    gamma, eta, dt, trials = 1.0, 2.0, 1e-3, 4000
    sys_ = linear_system(gamma, eta)
    cfg = IntegrationConfig(dt=dt, t_end=0.5, record_stride=500)
    integrator = EnsembleIntegrator(sys_, cfg)
    rng = np.random.default_rng(2024)
    normals = rng.standard_normal((trials,) + integrator.noise_shape())
    result = integrator.run(np.ones((trials, 1), dtype=complex), normals)
    n = result.final_populations[:, 0]
    mean, var = linear_moments(1.0, gamma, eta, 0.5)
    se_mean = n.std() / np.sqrt(trials)
    se_var = np.sqrt(np.mean((n - n.mean()) ** 4) - n.var() ** 2) / np.sqrt(trials)
    assert abs(n.mean() - mean) < 4 * se_mean
    assert abs(n.var() - var) < 4 * se_var


def test_trajectory_frame_columns():
    sys_ = unit_system(2)
    cfg = IntegrationConfig(dt=0.01, t_end=0.1)
    trajectory = integrate(AmplitudeState.from_populations([1.0, 2.0]), sys_, cfg, trial_generator(0, 0))
    frame = trajectory_frame(trajectory)
    assert list(frame.columns) == ['t', 're_a0', 'im_a0', 're_a1', 'im_a1', 'n0', 'n1']
    assert len(frame) == len(trajectory)
    assert frame['n1'].iloc[0] == pytest.approx(2.0)


def test_integration_ends_exactly_at_t_end():
    cfg = IntegrationConfig(dt=0.03, t_end=1.0)
    assert cfg.n_steps == 34
    assert cfg.step <= cfg.dt
    assert cfg.time_at(cfg.n_steps) == 1.0
    assert IntegrationConfig(dt=0.01, t_end=1.0).step == pytest.approx(0.01)
    sys_ = unit_system(2)
    initial = AmplitudeState.from_populations([6.0, 6.0])
    trajectory = integrate(initial, sys_, cfg, trial_generator(2, 0))
    assert trajectory[-1].time == 1.0
    integrator = EnsembleIntegrator(sys_, IntegrationConfig(dt=0.03, t_end=1.0, record_stride=4))
    normals = trial_generator(2, 0).standard_normal((1,) + integrator.noise_shape())
    result = integrator.run(np.array([[np.sqrt(6.0), np.sqrt(6.0)]], dtype=complex), normals)
    assert result.times[-1] == 1.0


def test_noiseless_end_state_converges_at_first_order():
    sys_ = unit_system(2, noise=0.0)
    initial = AmplitudeState.from_populations([6.0, 4.0])
    ends = [integrate(initial, sys_, IntegrationConfig(dt=dt, t_end=3.0), trial_generator(0, 0))[-1].populations
            for dt in (0.01, 0.005, 0.0025)]
    coarse = np.linalg.norm(ends[0] - ends[1])
    fine = np.linalg.norm(ends[1] - ends[2])
    assert coarse > 0
    assert coarse / fine == pytest.approx(2.0, abs=0.4)


def test_ensemble_mean_obeys_ito_mean_law():
    # d<n>/dt = 2 gamma <n> + eta without saturation
    gamma, eta, chunk = 1.0, 2.0, 5000
    cfg = IntegrationConfig(dt=0.005, t_end=1.0, record_stride=10)
    integrator = EnsembleIntegrator(linear_system(gamma, eta), cfg)
    rng = np.random.default_rng(77)
    runs = []
    for _ in range(4):
        normals = rng.standard_normal((chunk,) + integrator.noise_shape())
        runs.append(integrator.run(np.ones((chunk, 1), dtype=complex), normals).total_populations)
    n = np.concatenate(runs, axis=1)
    spacing = 10 * cfg.step
    for k in range(1, n.shape[0] - 1):
        residual = (n[k + 1] - n[k - 1]) / (2 * spacing) - 2 * gamma * n[k] - eta
        tolerance = 4 * residual.std() / np.sqrt(residual.size) + 0.02 * (2 * gamma * n[k].mean() + eta)
        assert abs(residual.mean()) < tolerance, k
