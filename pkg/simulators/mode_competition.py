"""Monte Carlo mode competition and the Born-rule-like winner statistics."""
import concurrent.futures
import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import ndtr

from utils.errors import (AllTrialsAbortedError, ConfigurationError,
                          DimensionMismatchError, NonFiniteStateError)
from utils.helpers import progress
from utils.rng import trial_generator
from .mode_system import AmplitudeState, IntegrationConfig, ModeSystem
from .sde_core import EnsembleIntegrator, integrate, linear_moments

logger = logging.getLogger(__name__)

PHASE_POLICIES = ('random-uniform', 'fixed')

# Rounded exponent of G_i = exp(3 * gamma_i * t_star).
BORN_EXPONENT = 3.0

# n_{t=0} = THRESHOLD_COEFFICIENT * eta / gamma
THRESHOLD_COEFFICIENT = math.pi / 4 + math.sqrt(math.pi) * math.sqrt(math.pi + 4) / 4

SATURATION_SLOPE_FRACTION = 0.5
# Share of the log-population span (from the start) used to fit the early growth rate.
GROWTH_FIT_WINDOW = (0.2, 0.5)
MIN_LOG_GROWTH = 2.0

# gamma * t beyond which P_>(t) is treated as stationary.
STATIONARY_RATE_TIME = 15.0
PILOT_RATE_TIME = 60.0


@dataclasses.dataclass(frozen=True, eq=False)
class CompetitionConfig:
    sys: ModeSystem
    initial_populations: np.ndarray
    integration: IntegrationConfig
    trials: int
    master_seed: int
    initial_phase_policy: str = 'random-uniform'
    batch_size: int = 128

    def __post_init__(self):
        n0 = np.array(self.initial_populations, dtype=float, ndmin=1)
        if n0.size != self.sys.mode_count:
            raise DimensionMismatchError(
                f"{n0.size} initial populations for {self.sys.mode_count} modes"
            )
        if np.any(n0 < 0) or not np.all(np.isfinite(n0)) or n0.sum() <= 0:
            raise ConfigurationError("initial populations must be non-negative with a positive sum")
        if int(self.trials) < 1:
            raise ConfigurationError("trials must be at least 1")
        if self.initial_phase_policy not in PHASE_POLICIES:
            raise ConfigurationError(
                f"unknown phase policy {self.initial_phase_policy!r}; expected one of {PHASE_POLICIES}"
            )
        if int(self.batch_size) < 1:
            raise ConfigurationError("batch_size must be positive")
        self.integration.validate_for(self.sys)
        n0.setflags(write=False)
        object.__setattr__(self, 'initial_populations', n0)
        object.__setattr__(self, 'trials', int(self.trials))
        object.__setattr__(self, 'master_seed', int(self.master_seed))

    @property
    def total_initial_population(self) -> float:
        """Z = sum_i |a_i(0)|^2."""
        return float(self.initial_populations.sum())

    def replace(self, **changes) -> 'CompetitionConfig':
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'system': self.sys.to_dict(),
            'initial_populations': self.initial_populations.tolist(),
            'initial_phase_policy': self.initial_phase_policy,
            'integration': self.integration.to_dict(),
            'trials': self.trials,
            'master_seed': self.master_seed,
        }


@dataclasses.dataclass
class TrialResult:
    trial_index: int
    winner: Optional[int]
    final_populations: np.ndarray
    t_star: Optional[float] = None
    tie: bool = False
    aborted: bool = False
    diagnostic: str = ""


@dataclasses.dataclass
class CompetitionOutcome:
    wins: np.ndarray
    win_probabilities: np.ndarray
    standard_errors: np.ndarray
    t_star_summary: Dict[str, Any]
    trials: int
    aborted: int = 0
    ties: int = 0


def _initial_amplitudes(cfg: CompetitionConfig, rng: np.random.Generator) -> np.ndarray:
    m = cfg.sys.mode_count
    if cfg.initial_phase_policy == 'random-uniform':
        phases = rng.uniform(0.0, 2.0 * np.pi, size=m)
    else:
        phases = np.zeros(m)
    return np.sqrt(cfg.initial_populations) * np.exp(1j * phases)


def _saturation_time(times: np.ndarray, totals: np.ndarray,
                     slope_fraction: float = SATURATION_SLOPE_FRACTION) -> Optional[float]:
    if times.size < 3:
        raise ConfigurationError("saturation detection needs at least 3 samples")
    log_n = np.log(np.maximum(totals, np.finfo(float).tiny))
    start = log_n[0]
    span = log_n.max() - start
    if span < MIN_LOG_GROWTH:
        return None
    lo, hi = GROWTH_FIT_WINDOW
    i0 = int(np.argmax(log_n >= start + lo * span))
    i1 = max(int(np.argmax(log_n >= start + hi * span)), i0 + 2)
    if i1 >= times.size:
        return None
    reference = np.polyfit(times[i0:i1 + 1], log_n[i0:i1 + 1], 1)[0]
    if reference <= 0:
        return None
    slopes = np.gradient(log_n, times)
    below = np.nonzero(slopes[i1:] < slope_fraction * reference)[0]
    if below.size == 0:
        return None
    return float(times[i1 + below[0]] - times[0])


def detect_saturation_time(trajectory: Sequence[AmplitudeState],
                           slope_fraction: float = SATURATION_SLOPE_FRACTION) -> Optional[float]:
    """Duration of exponential growth before gain saturation sets in.

    The early growth rate is a least-squares fit of log(total population)
    over the lower part of its range; t* is the first later time at which the
    local log-slope falls below slope_fraction of that rate. Returns None when
    the slope never drops (e.g. without saturation).
    """
    times = np.array([s.time for s in trajectory])
    totals = np.array([s.total_population for s in trajectory])
    return _saturation_time(times, totals, slope_fraction)


def _simulate_range(cfg: CompetitionConfig, start: int, stop: int) -> List[TrialResult]:
    integrator = EnsembleIntegrator(cfg.sys, cfg.integration)
    shape = integrator.noise_shape()
    m = cfg.sys.mode_count
    results = []
    for first in range(start, stop, cfg.batch_size):
        indices = range(first, min(first + cfg.batch_size, stop))
        a0 = np.empty((len(indices), m), dtype=complex)
        normals = np.empty((len(indices),) + shape)
        for row, index in enumerate(indices):
            rng = trial_generator(cfg.master_seed, index)
            a0[row] = _initial_amplitudes(cfg, rng)
            normals[row] = rng.standard_normal(shape)
        ensemble = integrator.run(a0, normals)
        finals = ensemble.final_populations
        for row, index in enumerate(indices):
            if ensemble.aborted[row]:
                message = f"trial {index} aborted: non-finite amplitudes (dt={cfg.integration.dt:g})"
                logger.warning(message)
                results.append(TrialResult(index, None, finals[row], aborted=True, diagnostic=message))
                continue
            pops = finals[row]
            winner = int(np.argmax(pops))
            tie = int(np.count_nonzero(pops == pops[winner])) > 1
            if tie:
                logger.warning("trial %d: tie between modes at %g, lowest index %d wins",
                               index, pops[winner], winner)
            t_star = _saturation_time(ensemble.times, ensemble.total_populations[:, row])
            results.append(TrialResult(index, winner, pops, t_star=t_star, tie=tie))
    return results


def run_trial(cfg: CompetitionConfig, trial_index: int) -> TrialResult:
    """One competition run with the stream of (master_seed, trial_index)."""
    if not 0 <= trial_index < cfg.trials:
        raise ConfigurationError(f"trial_index {trial_index} outside [0, {cfg.trials})")
    result = _simulate_range(cfg, trial_index, trial_index + 1)[0]
    if result.aborted:
        raise NonFiniteStateError(result.diagnostic)
    return result


class CompetitionAnalyzer:
    """Reduces trial results to win counts and probabilities."""

    def __init__(self, mode_count: int):
        self.mode_count = mode_count
        self.results: List[TrialResult] = []

    def analyze_trial(self, result: TrialResult) -> None:
        self.results.append(result)

    def analyze_trials(self, results: Sequence[TrialResult]) -> None:
        for result in results:
            self.analyze_trial(result)

    def get_win_counts(self) -> np.ndarray:
        winners = [r.winner for r in self.results if not r.aborted]
        return np.bincount(np.asarray(winners, dtype=int), minlength=self.mode_count)

    def get_t_star_summary(self) -> Dict[str, Any]:
        values = np.array([r.t_star for r in self.results
                           if not r.aborted and r.t_star is not None])
        summary = {'detected': int(values.size),
                   'completed': sum(1 for r in self.results if not r.aborted)}
        if values.size:
            summary.update({
                'mean': float(values.mean()),
                'median': float(np.median(values)),
                'std': float(values.std()),
                'min': float(values.min()),
                'max': float(values.max()),
            })
        return summary

    def get_outcome(self) -> CompetitionOutcome:
        wins = self.get_win_counts()
        completed = int(wins.sum())
        aborted = sum(1 for r in self.results if r.aborted)
        if completed == 0:
            raise AllTrialsAbortedError(f"all {aborted} trials aborted")
        probabilities = wins / completed
        return CompetitionOutcome(
            wins=wins,
            win_probabilities=probabilities,
            standard_errors=np.sqrt(probabilities * (1.0 - probabilities) / completed),
            t_star_summary=self.get_t_star_summary(),
            trials=completed,
            aborted=aborted,
            ties=sum(1 for r in self.results if r.tie),
        )


def _chunks(trials: int, workers: int, batch_size: int):
    size = max(batch_size, math.ceil(trials / (4 * workers)))
    return [(s, min(s + size, trials)) for s in range(0, trials, size)]


def estimate_win_probabilities(cfg: CompetitionConfig, workers: int = 1,
                               show_progress: bool = False) -> CompetitionOutcome:
    """Aggregate run_trial over all trials; the result does not depend on `workers`."""
    chunks = _chunks(cfg.trials, max(1, workers), cfg.batch_size)
    results: List[TrialResult] = []
    if workers <= 1:
        for start, stop in progress(chunks, "Trials", enabled=show_progress):
            results.extend(_simulate_range(cfg, start, stop))
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_simulate_range, cfg, start, stop) for start, stop in chunks]
            for future in progress(concurrent.futures.as_completed(futures), "Trials",
                                   total=len(futures), enabled=show_progress):
                results.extend(future.result())
    results.sort(key=lambda r: r.trial_index)
    analyzer = CompetitionAnalyzer(cfg.sys.mode_count)
    analyzer.analyze_trials(results)
    outcome = analyzer.get_outcome()
    logger.info("%d trials: P = %s (aborted %d, ties %d)", outcome.trials,
                np.array2string(outcome.win_probabilities, precision=4),
                outcome.aborted, outcome.ties)
    return outcome


def born_rule_probabilities(n0, gamma, t_star: float, alpha: float = BORN_EXPONENT) -> np.ndarray:
    """P_i = G_i n0_i / sum_j G_j n0_j with G_i = exp(alpha * gamma_i * t_star)."""
    n0 = np.asarray(n0, dtype=float)
    if t_star < 0:
        raise ConfigurationError("t_star must be non-negative")
    if np.any(n0 < 0) or n0.sum() <= 0:
        raise ConfigurationError("initial populations must be non-negative and not all zero")
    exponent = alpha * np.broadcast_to(np.asarray(gamma, dtype=float), n0.shape) * t_star
    weights = n0 * np.exp(exponent - exponent.max())
    return weights / weights.sum()


def analytic_win_probability(gamma0: float, gamma1: float, eta0: float, eta1: float,
                             n0: float, n1: float, t: float) -> float:
    """Phi(mu/sigma) for the Gaussian approximation of |a_0|^2 - |a_1|^2 at time t."""
    if t < 0:
        raise ConfigurationError("t must be non-negative")
    mean0, var0 = linear_moments(n0, gamma0, eta0, t)
    mean1, var1 = linear_moments(n1, gamma1, eta1, t)
    mu = float(mean0 - mean1)
    sigma = math.sqrt(float(var0 + var1))
    if sigma == 0:
        if mu == 0:
            return 0.5
        return 1.0 if mu > 0 else 0.0
    return float(ndtr(mu / sigma))


def alpha_constant() -> float:
    root_pi = math.sqrt(math.pi)
    gap = math.sqrt(math.pi + 4) - root_pi
    return (math.pi + 2) * gap / root_pi + gap ** 2 / 2


def seed_population_threshold(eta: float, gamma: float) -> float:
    """Total population n_{t=0} that defines the start of the competition."""
    if gamma <= 0:
        raise ConfigurationError("seed threshold needs gamma > 0")
    return THRESHOLD_COEFFICIENT * eta / gamma


def born_vs_analytic(n_total: float, dn: float, gamma0: float, gamma1: float,
                     eta0: float, eta1: float, t: float,
                     alpha: Optional[float] = None) -> Dict[str, float]:
    """Compare P_>(t) with the two-mode ansatz P_B(t) around n_total/2 +- dn."""
    alpha = alpha_constant() if alpha is None else alpha
    n0, n1 = n_total / 2 + dn, n_total / 2 - dn
    p_gauss = analytic_win_probability(gamma0, gamma1, eta0, eta1, n0, n1, t)
    g0, g1 = math.exp(alpha * gamma0 * t), math.exp(alpha * gamma1 * t)
    p_born = g0 * n0 / (g0 * n0 + g1 * n1)
    return {'P_gauss': p_gauss, 'P_born': p_born, 'difference': p_gauss - p_born}


def pilot_end_time(sys: ModeSystem, initial_populations, dt: Optional[float] = None,
                   seed: int = 0, factor: float = 5.0) -> float:
    """factor * t* of a single pilot trajectory (or the pilot horizon if none is found)."""
    rate = float(np.max(sys.net_gains))
    if rate <= 0:
        raise ConfigurationError("pilot run needs at least one mode with positive net gain")
    horizon = PILOT_RATE_TIME / rate
    if dt is None:
        cfg = IntegrationConfig.for_system(sys, horizon, record_stride=10)
    else:
        cfg = IntegrationConfig(dt=dt, t_end=horizon, record_stride=10)
    rng = trial_generator(seed, 0)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=sys.mode_count)
    initial = AmplitudeState.from_populations(initial_populations, phases)
    t_star = detect_saturation_time(integrate(initial, sys, cfg, rng))
    if t_star is None:
        logger.warning("pilot run found no saturation; using horizon %g s", horizon)
        return horizon
    logger.info("pilot t* = %g s, t_end = %g s", t_star, factor * t_star)
    return factor * t_star


def sweep_initial_fraction(base_cfg: CompetitionConfig, fractions: Sequence[float],
                           z_total: float, workers: int = 1,
                           t_star: float = 0.0, show_progress: bool = False) -> pd.DataFrame:
    """Two-mode sweep of P_0 over n_0(0)/Z at fixed Z."""
    if base_cfg.sys.mode_count != 2:
        raise ConfigurationError("the initial-fraction sweep is defined for two modes")
    gamma = base_cfg.sys.net_gains
    eta = base_cfg.sys.noise_strengths
    t_stationary = STATIONARY_RATE_TIME / float(np.min(gamma)) if np.min(gamma) > 0 else 0.0
    rows = []
    for fraction in fractions:
        n0 = np.array([fraction * z_total, (1.0 - fraction) * z_total])
        outcome = estimate_win_probabilities(base_cfg.replace(initial_populations=n0),
                                             workers=workers, show_progress=show_progress)
        analytic = analytic_win_probability(gamma[0], gamma[1], eta[0], eta[1],
                                            n0[0], n0[1], t_stationary)
        rows.append({
            'sweep_param': float(fraction),
            'P_0': outcome.win_probabilities[0],
            'stderr_0': outcome.standard_errors[0],
            'P_1': outcome.win_probabilities[1],
            'stderr_1': outcome.standard_errors[1],
            'W_0': int(outcome.wins[0]),
            'W_1': int(outcome.wins[1]),
            'analytic_P_0': analytic,
            'born_P_0': born_rule_probabilities(n0, gamma, t_star)[0],
        })
    return pd.DataFrame(rows)


def midpoint_slope(fractions, probabilities, center: float = 0.5,
                   half_width: float = 0.1) -> float:
    """Least-squares slope of P_0 against n_0(0)/Z near `center`."""
    x = np.asarray(fractions, dtype=float)
    y = np.asarray(probabilities, dtype=float)
    near = np.abs(x - center) <= half_width + 1e-12
    if np.count_nonzero(near) < 2:
        raise ConfigurationError("need at least two sweep points around the midpoint")
    return float(np.polyfit(x[near], y[near], 1)[0])


def outcome_to_dict(outcome: CompetitionOutcome, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        'P_i': outcome.win_probabilities.tolist(),
        'W_i': outcome.wins.tolist(),
        'stderr_i': outcome.standard_errors.tolist(),
        't_star_summary': outcome.t_star_summary,
        'trials': outcome.trials,
        'aborted': outcome.aborted,
        'ties': outcome.ties,
        'config': config or {},
    }
