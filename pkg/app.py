"""gaincomp: mode competition, wedge billiards and pattern statistics from the command line."""
import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import constants

from simulators.billiard import (REFERENCE_GRAVITY, REFERENCE_MASS, ParticleState, WedgeGeometry,
                                 coarse_occupancy, lyapunov_exponent, simulate_trajectory)
from simulators.cavity import (DEFAULT_MODE_NUMBER, DEFAULT_PROFILE_DEPTH, DEFAULT_REFRACTIVE_INDEX,
                               DEFAULT_SEPARATION, TARGET_GRAVITY, CavityParams, cavity_summary,
                               tilt_for_gravity)
from simulators.mode_competition import (CompetitionConfig, alpha_constant, analytic_win_probability,
                                         born_rule_probabilities, detect_saturation_time,
                                         estimate_win_probabilities, midpoint_slope, outcome_to_dict,
                                         pilot_end_time, seed_population_threshold,
                                         sweep_initial_fraction, STATIONARY_RATE_TIME)
from simulators.mode_system import (REFERENCE_BETA_CROSS, REFERENCE_BETA_SELF, REFERENCE_NOISE_TO_GAIN,
                                    AmplitudeState, IntegrationConfig, ModeSystem, reference_mode_system,
                                    saturation_matrix)
from simulators.pattern_analysis import (DEFAULT_BINS, neighbor_correlations, normalized_entropy,
                                         pearson_correlation, porter_thomas_fit, synthetic_pattern)
from simulators.sde_core import integrate, trajectory_frame
from simulators.stability_map import (StabilityParams, compute_stability_map, default_grid,
                                      map_frame, map_summary)
from utils.config import RunConfig, load_config, resolve
from utils.errors import ConfigurationError, GainCompError
from utils.helpers import handle_error, resolve_seed, write_frame_csv, write_json
from utils.pattern_io import load_pattern, write_csv_matrix, write_pgm
from utils.rng import trial_generator

logger = logging.getLogger('gaincomp')

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

SYSTEM_DEFAULTS = {
    'modes': 2,
    'gains': None,
    'losses': None,
    'noise': None,
    'beta_diag': REFERENCE_BETA_SELF,
    'beta_off': REFERENCE_BETA_CROSS,
    'z_total': 12.5,
    'initial': None,
    't_end': None,
    'dt': None,
    'phase_policy': 'random-uniform',
    'record_stride': 10,
}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    'compete': dict(SYSTEM_DEFAULTS, trials=10000, sweep=None, batch_size=128),
    'born': {'gamma': [7e10, 7e10], 'eta': [4.375e11, 4.375e11], 'initial': [7.5, 5.0],
             't_star': 6e-11, 't': None, 'alpha': 3.0},
    'trajectory': dict(SYSTEM_DEFAULTS, record_stride=1),
    'billiard': {'angle_deg': 45.0, 'gravity': REFERENCE_GRAVITY, 'mass': REFERENCE_MASS,
                 'x0': 10e-6, 'y0': 100e-6, 'vx0': 1e6, 'vy0': 0.0, 'bounces': 1000,
                 'lyapunov': False, 'horizon': None, 'samples_per_flight': 0},
    'stability-map': {'angle_deg': 35.0, 'gravity': REFERENCE_GRAVITY, 'mass': REFERENCE_MASS,
                      'pump_diameter': 25e-6, 'confidence': 0.5, 'grid': 101,
                      'y_max': 1e-3, 'summary': None},
    'entropy': {'inputs': None, 'mask': None, 'bins': DEFAULT_BINS},
    'correlate': {'inputs': None, 'mask': None, 'scan': False},
    'pt-fit': {'inputs': None, 'mask': None},
    'synth': {'kind': 'chaotic', 'angle_deg': 35.0, 'gravity': REFERENCE_GRAVITY, 'mass': REFERENCE_MASS,
              'energy': None, 'grid': [64, 64], 'n_waves': 50, 'wavenumber': None,
              'format': 'csv'},
    'cavity': {'separation': DEFAULT_SEPARATION, 'refractive_index': DEFAULT_REFRACTIVE_INDEX,
               'tilt': None, 'target_gravity': TARGET_GRAVITY, 'profile_depth': DEFAULT_PROFILE_DEPTH,
               'mode_number': DEFAULT_MODE_NUMBER},
}


def _per_mode(values: Optional[List[float]], modes: int, name: str) -> Optional[np.ndarray]:
    if values is None:
        return None
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        return np.full(modes, values[0])
    if values.size != modes:
        raise ConfigurationError(f"--{name} needs 1 or {modes} values, got {values.size}")
    return values


def _mode_system(p: Dict[str, Any]) -> ModeSystem:
    modes = int(p['modes'])
    reference = reference_mode_system(modes)
    gains = _per_mode(p['gains'], modes, 'gains')
    losses = _per_mode(p['losses'], modes, 'losses')
    noise = _per_mode(p['noise'], modes, 'noise')
    gains = reference.gains if gains is None else gains
    losses = reference.losses if losses is None else losses
    if noise is None:
        gamma = gains[0] - losses[0]
        if gamma <= 0:
            raise ConfigurationError(f"--noise is required when gains do not exceed losses (gamma={gamma:g})")
        noise = np.full(modes, REFERENCE_NOISE_TO_GAIN * gamma)
    return ModeSystem(gains=gains, losses=losses, noise_strengths=noise,
                      saturation=saturation_matrix(modes, p['beta_diag'], p['beta_off']))


def _initial_populations(p: Dict[str, Any]) -> np.ndarray:
    modes = int(p['modes'])
    if p['initial'] is not None:
        return _per_mode(p['initial'], modes, 'initial')
    return np.full(modes, float(p['z_total']) / modes)


def _integration(p: Dict[str, Any], sys_: ModeSystem, n0: np.ndarray, seed: int) -> IntegrationConfig:
    t_end = p['t_end']
    if t_end is None:
        t_end = pilot_end_time(sys_, n0, dt=p['dt'], seed=seed)
    if p['dt'] is None:
        return IntegrationConfig.for_system(sys_, t_end, record_stride=p['record_stride'])
    return IntegrationConfig(dt=p['dt'], t_end=t_end, record_stride=p['record_stride'])


def run_compete(cfg: RunConfig) -> int:
    p = cfg.params
    seed = resolve_seed(cfg.seed)
    sys_ = _mode_system(p)
    n0 = _initial_populations(p)
    integration = _integration(p, sys_, n0, seed)
    competition = CompetitionConfig(sys=sys_, initial_populations=n0, integration=integration,
                                    trials=p['trials'], master_seed=seed,
                                    initial_phase_policy=p['phase_policy'],
                                    batch_size=p['batch_size'])
    echo = dict(cfg.to_dict(), seed=seed, resolved=competition.to_dict())
    if p['sweep']:
        frame = sweep_initial_fraction(competition, p['sweep'], p['z_total'], workers=cfg.threads,
                                       show_progress=True)
        if len(frame) >= 2 and np.any(np.abs(frame['sweep_param'] - 0.5) <= 0.1 + 1e-12):
            try:
                logger.info("midpoint slope %.4f", midpoint_slope(frame['sweep_param'], frame['P_0']))
            except ConfigurationError:
                pass
        write_frame_csv(frame, cfg.output, header={'config': echo})
        return 0
    outcome = estimate_win_probabilities(competition, workers=cfg.threads, show_progress=True)
    payload = outcome_to_dict(outcome, echo)
    median = outcome.t_star_summary.get('median')
    if median is not None:
        payload['born_P_i'] = born_rule_probabilities(n0, sys_.net_gains, median).tolist()
    write_json(payload, cfg.output)
    return 0


def run_born(cfg: RunConfig) -> int:
    p = cfg.params
    n0 = np.asarray(p['initial'], dtype=float)
    gamma = np.asarray(p['gamma'], dtype=float)
    eta = np.asarray(p['eta'], dtype=float)
    if gamma.size not in (1, n0.size) or eta.size not in (1, n0.size):
        raise ConfigurationError("gamma and eta need one value or one per mode")
    gamma = np.broadcast_to(gamma, n0.shape)
    eta = np.broadcast_to(eta, n0.shape)
    payload = {
        'P_B': born_rule_probabilities(n0, gamma, p['t_star'], p['alpha']).tolist(),
        'alpha_exact': alpha_constant(),
        'seed_threshold': [seed_population_threshold(e, g) for e, g in zip(eta, gamma)],
    }
    if n0.size == 2:
        t = p['t'] if p['t'] is not None else STATIONARY_RATE_TIME / float(np.min(gamma))
        payload['P_gauss_0'] = analytic_win_probability(gamma[0], gamma[1], eta[0], eta[1],
                                                        n0[0], n0[1], t)
        payload['t'] = t
    payload['config'] = cfg.to_dict()
    write_json(payload, cfg.output)
    return 0


def run_trajectory(cfg: RunConfig) -> int:
    p = cfg.params
    seed = resolve_seed(cfg.seed)
    sys_ = _mode_system(p)
    n0 = _initial_populations(p)
    integration = _integration(p, sys_, n0, seed)
    rng = trial_generator(seed, 0)
    if p['phase_policy'] == 'random-uniform':
        phases = rng.uniform(0.0, 2.0 * np.pi, size=sys_.mode_count)
    else:
        phases = np.zeros(sys_.mode_count)
    trajectory = integrate(AmplitudeState.from_populations(n0, phases), sys_, integration, rng)
    t_star = detect_saturation_time(trajectory)
    header = {'config': dict(cfg.to_dict(), seed=seed, integration=integration.to_dict(),
                             system=sys_.to_dict()),
              't_star': t_star}
    write_frame_csv(trajectory_frame(trajectory), cfg.output, header=header)
    return 0


def _wedge(p: Dict[str, Any]) -> WedgeGeometry:
    return WedgeGeometry.from_degrees(p['angle_deg'], p['gravity'], p['mass'])


def run_billiard(cfg: RunConfig) -> int:
    p = cfg.params
    wedge = _wedge(p)
    initial = ParticleState(p['x0'], p['y0'], p['vx0'], p['vy0'])
    path = simulate_trajectory(initial, wedge, max_bounces=p['bounces'],
                               samples_per_flight=p['samples_per_flight'])
    if not p['lyapunov']:
        header = {'config': cfg.to_dict(), 'energy_drift': path.max_relative_energy_drift(wedge)}
        write_frame_csv(path.to_frame(), cfg.output, header=header)
        return 0
    horizon = p['horizon'] if p['horizon'] is not None else path.final_state.t - initial.t
    estimate = lyapunov_exponent(initial, wedge, horizon)
    write_json({
        'lyapunov_rate': estimate.rate,
        'lyapunov_stderr': estimate.stderr,
        'rate_per_bounce': estimate.rate_per_bounce,
        'windows': estimate.windows,
        'regular': estimate.is_regular(),
        'chaotic': estimate.is_chaotic(),
        'bounces': path.bounces,
        'corner': path.corner,
        'energy_drift': path.max_relative_energy_drift(wedge),
        'occupancy': coarse_occupancy(path, wedge),
        'config': cfg.to_dict(),
    }, cfg.output)
    return 0


def run_stability_map(cfg: RunConfig) -> int:
    p = cfg.params
    params = StabilityParams(_wedge(p), d_pump=p['pump_diameter'], p=p['confidence'])
    grid = default_grid(params.wedge, p['y_max'], resolution=p['grid'])
    cells = compute_stability_map(grid, params, show_progress=True)
    summary = map_summary(cells, params, cfg.to_dict())
    write_frame_csv(map_frame(cells), cfg.output, header={'config': cfg.to_dict()})
    summary_path = p['summary'] or (f"{cfg.output}.summary.json" if cfg.output not in (None, '-') else None)
    if summary_path:
        write_json(summary, summary_path)
    logger.info("%d regular, %d chaotic, %d failed cells",
                summary['regular'], summary['chaotic'], summary['errors'])
    return 0


def _patterns(p: Dict[str, Any], minimum: int = 1):
    inputs = p['inputs'] or []
    if len(inputs) < minimum:
        raise ConfigurationError(f"need at least {minimum} input pattern(s)")
    return [load_pattern(path, p['mask']) for path in inputs]


def run_entropy(cfg: RunConfig) -> int:
    p = cfg.params
    rows = []
    for pattern in _patterns(p):
        result = normalized_entropy(pattern, p['bins'])
        rows.append({'file': pattern.label, 'S': result.normalized, 'raw': result.raw,
                     's_min': result.bounds[0], 's_max': result.bounds[1], 'bins': result.bin_count})
    write_frame_csv(pd.DataFrame(rows), cfg.output, header={'config': cfg.to_dict()})
    return 0


def run_correlate(cfg: RunConfig) -> int:
    p = cfg.params
    patterns = _patterns(p, minimum=2)
    if p['scan']:
        write_frame_csv(neighbor_correlations(patterns), cfg.output, header={'config': cfg.to_dict()})
        return 0
    if len(patterns) != 2:
        raise ConfigurationError("correlate without --scan takes exactly two patterns")
    write_json({'r': pearson_correlation(*patterns), 'config': cfg.to_dict()}, cfg.output)
    return 0


def run_pt_fit(cfg: RunConfig) -> int:
    rows = []
    for pattern in _patterns(cfg.params):
        fit = porter_thomas_fit(pattern)
        rows.append({'file': pattern.label, 'mean_intensity': fit.mean_intensity,
                     'ks_statistic': fit.ks_statistic, 'ks_pvalue': fit.ks_pvalue,
                     'ks_critical_1pct': fit.ks_critical_1pct, 'chi2_per_dof': fit.chi2_per_dof,
                     'n_samples': fit.n_samples})
    write_frame_csv(pd.DataFrame(rows), cfg.output, header={'config': cfg.to_dict()})
    return 0


def run_synth(cfg: RunConfig) -> int:
    p = cfg.params
    if cfg.output in (None, '-'):
        raise ConfigurationError("synth needs --output")
    seed = resolve_seed(cfg.seed)
    wedge = _wedge(p)
    energy = p['energy'] if p['energy'] is not None else wedge.mass * wedge.gravity * 500e-6
    pattern = synthetic_pattern(p['kind'], wedge, energy, tuple(p['grid']), seed,
                                n_waves=p['n_waves'], wavenumber=p['wavenumber'])
    if p['format'] == 'pgm':
        write_pgm(cfg.output, pattern.values)
    else:
        write_csv_matrix(cfg.output, pattern.values)
    logger.info("wrote %s pattern (seed %d) to %s", p['kind'], seed, cfg.output)
    return 0


def run_cavity(cfg: RunConfig) -> int:
    p = cfg.params
    speed = constants.c / p['refractive_index']
    tilt = p['tilt'] if p['tilt'] is not None else tilt_for_gravity(p['target_gravity'], p['separation'], speed)
    cav = CavityParams(separation=p['separation'], light_speed=speed, tilt=tilt,
                       profile_depth=p['profile_depth'], mode_number=p['mode_number'])
    write_json(dict(cavity_summary(cav), config=cfg.to_dict()), cfg.output)
    return 0


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    'compete': run_compete,
    'born': run_born,
    'trajectory': run_trajectory,
    'billiard': run_billiard,
    'stability-map': run_stability_map,
    'entropy': run_entropy,
    'correlate': run_correlate,
    'pt-fit': run_pt_fit,
    'synth': run_synth,
    'cavity': run_cavity,
}


def _add_system_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--modes', type=int, default=None, help="Number of modes M.")
    parser.add_argument('--gains', type=float, nargs='+', default=None, help="Gain rates g_i (1/s).")
    parser.add_argument('--losses', type=float, nargs='+', default=None, help="Loss rates kappa_i (1/s).")
    parser.add_argument('--noise', type=float, nargs='+', default=None, help="Noise strengths eta_i (1/s).")
    parser.add_argument('--beta-diag', type=float, default=None, help="Self saturation beta_ii.")
    parser.add_argument('--beta-off', type=float, default=None, help="Cross saturation beta_ij.")
    parser.add_argument('--z-total', type=float, default=None, help="Total initial population Z.")
    parser.add_argument('--initial', type=float, nargs='+', default=None, help="Initial populations n_i(0).")
    parser.add_argument('--t-end', type=float, default=None, help="End time (s); default from a pilot run.")
    parser.add_argument('--dt', type=float, default=None, help="Time step (s); default 0.01/max(gamma).")
    parser.add_argument('--phase-policy', choices=['random-uniform', 'fixed'], default=None)
    parser.add_argument('--record-stride', type=int, default=None)


def _add_wedge_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--angle-deg', type=float, default=None, help="Wedge half angle in degrees.")
    parser.add_argument('--gravity', type=float, default=None, help="Effective gravity (m/s^2).")
    parser.add_argument('--mass', type=float, default=None, help="Effective mass (kg).")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help="JSON config file (schema_version 1).")
    common.add_argument('--output', '-o', default=None, help="Output path ('-' or omitted for stdout).")
    common.add_argument('--seed', type=int, default=None, help="Master seed.")
    common.add_argument('--threads', type=int, default=None, help="Worker processes.")
    common.add_argument('-v', '--verbose', action='store_true', help="Debug logging.")

    parser = argparse.ArgumentParser(prog='gaincomp', description=__doc__)
    sub = parser.add_subparsers(dest='command', required=True)

    compete = sub.add_parser('compete', parents=[common], help="Monte Carlo win probabilities.")
    _add_system_flags(compete)
    compete.add_argument('--trials', type=int, default=None)
    compete.add_argument('--sweep', type=float, nargs='+', default=None,
                         help="Initial fractions n_0(0)/Z for a two-mode sweep.")
    compete.add_argument('--batch-size', type=int, default=None)

    born = sub.add_parser('born', parents=[common], help="Born-rule and Gaussian predictions.")
    born.add_argument('--gamma', type=float, nargs='+', default=None, help="Net gains gamma_i (1/s).")
    born.add_argument('--eta', type=float, nargs='+', default=None, help="Noise strengths eta_i (1/s).")
    born.add_argument('--initial', type=float, nargs='+', default=None, help="Initial populations.")
    born.add_argument('--t-star', type=float, default=None, help="Saturation time (s).")
    born.add_argument('--t', type=float, default=None, help="Time for the Gaussian estimate (s).")
    born.add_argument('--alpha', type=float, default=None, help="Exponent in G_i = exp(alpha gamma_i t*).")

    trajectory = sub.add_parser('trajectory', parents=[common], help="Single SDE trajectory.")
    _add_system_flags(trajectory)

    billiard = sub.add_parser('billiard', parents=[common], help="Classical wedge billiard.")
    _add_wedge_flags(billiard)
    for name in ('x0', 'y0', 'vx0', 'vy0'):
        billiard.add_argument(f'--{name}', type=float, default=None)
    billiard.add_argument('--bounces', type=int, default=None)
    billiard.add_argument('--lyapunov', action='store_true', default=None)
    billiard.add_argument('--horizon', type=float, default=None, help="Lyapunov horizon (s).")
    billiard.add_argument('--samples-per-flight', type=int, default=None)

    stability = sub.add_parser('stability-map', parents=[common], help="Regular vs chaotic pump map.")
    _add_wedge_flags(stability)
    stability.add_argument('--pump-diameter', type=float, default=None, help="d_pump (m).")
    stability.add_argument('--confidence', type=float, default=None, help="Exceedance probability p.")
    stability.add_argument('--grid', type=int, default=None, help="Grid resolution per axis.")
    stability.add_argument('--y-max', type=float, default=None, help="Top of the grid (m).")
    stability.add_argument('--summary', default=None, help="JSON summary path.")

    for name, text in (('entropy', "Normalized intensity entropy."),
                       ('correlate', "Pearson correlation between patterns."),
                       ('pt-fit', "Porter-Thomas goodness of fit.")):
        cmd = sub.add_parser(name, parents=[common], help=text)
        cmd.add_argument('inputs', nargs='*', default=None, help="PGM or CSV patterns.")
        cmd.add_argument('--mask', default=None, help="0/1 mask image.")
        if name == 'entropy':
            cmd.add_argument('--bins', type=int, default=None)
        if name == 'correlate':
            cmd.add_argument('--scan', action='store_true', default=None,
                             help="Correlate consecutive patterns of an ordered scan.")

    synth = sub.add_parser('synth', parents=[common], help="Synthetic test patterns.")
    _add_wedge_flags(synth)
    synth.add_argument('--kind', choices=['chaotic', 'regular'], default=None)
    synth.add_argument('--energy', type=float, default=None, help="Particle energy (J).")
    synth.add_argument('--grid', type=int, nargs=2, default=None, metavar=('ROWS', 'COLS'))
    synth.add_argument('--n-waves', type=int, default=None)
    synth.add_argument('--wavenumber', type=float, default=None, help="Override k (1/m).")
    synth.add_argument('--format', choices=['csv', 'pgm'], default=None)

    cavity = sub.add_parser('cavity', parents=[common], help="Cavity to wedge unit conversion.")
    cavity.add_argument('--separation', type=float, default=None, help="Mirror separation D0 (m).")
    cavity.add_argument('--refractive-index', type=float, default=None)
    cavity.add_argument('--tilt', type=float, default=None, help="Tilt angle (rad).")
    cavity.add_argument('--target-gravity', type=float, default=None, help="g_eff used to back-solve the tilt.")
    cavity.add_argument('--profile-depth', type=float, default=None, help="Mirror profile depth (m).")
    cavity.add_argument('--mode-number', type=int, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format=LOG_FORMAT, stream=sys.stderr)
    flags = vars(args)
    if flags.get('inputs') == []:
        flags['inputs'] = None
    try:
        cfg = resolve(args.command, DEFAULTS[args.command], load_config(args.config), flags)
        return COMMANDS[args.command](cfg)
    except GainCompError as e:
        return handle_error(e)


if __name__ == '__main__':
    sys.exit(main())
