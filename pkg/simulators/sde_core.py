"""Euler-Maruyama integration of the stochastic multimode laser equation.

    da_i = (g_i / (1 + sum_j beta_ij |a_j|^2) - kappa_i) a_i dt + sqrt(eta_i) dW_i

in the Ito interpretation, with complex Wiener increments
dW = (dW1 + i dW2) / sqrt(2), dWk ~ N(0, dt), so that <dW dW*> = dt and
<dW dW> = 0.
"""
import dataclasses
import logging
from typing import List, Tuple

import numpy as np
import pandas as pd

from utils.errors import NonFiniteStateError
from .mode_system import AmplitudeState, IntegrationConfig, ModeSystem

logger = logging.getLogger(__name__)


def _saturation_denominator(populations: np.ndarray, beta: np.ndarray) -> np.ndarray:
    # Explicit accumulation over j keeps single-state and batched runs bit-identical.
    denom = np.ones_like(populations)
    for j in range(beta.shape[1]):
        denom = denom + beta[:, j] * populations[..., j:j + 1]
    return denom


def _drift(amplitudes: np.ndarray, sys: ModeSystem) -> np.ndarray:
    populations = amplitudes.real ** 2 + amplitudes.imag ** 2
    rate = sys.gains / _saturation_denominator(populations, sys.saturation) - sys.losses
    return rate * amplitudes


def _complex_increments(normals: np.ndarray, dt: float) -> np.ndarray:
    # normals[..., 0, :] and normals[..., 1, :] are N(0, 1); each quadrature
    # carries half of the variance dt.
    return np.sqrt(dt / 2.0) * (normals[..., 0, :] + 1j * normals[..., 1, :])


def _euler_maruyama(amplitudes, sys: ModeSystem, dt: float, dW):
    return amplitudes + _drift(amplitudes, sys) * dt + np.sqrt(sys.noise_strengths) * dW


def _record_steps(n_steps: int, stride: int) -> List[int]:
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def drift_derivative(state: AmplitudeState, sys: ModeSystem) -> np.ndarray:
    """Deterministic part of the laser equation at `state`."""
    state.check_compatible(sys)
    return _drift(state.amplitudes, sys)


def complex_noise_increment(rng: np.random.Generator, dt: float, mode_count: int) -> np.ndarray:
    """M independent complex Wiener increments with <dW dW*> = dt."""
    return _complex_increments(rng.standard_normal((2, mode_count)), dt)


def em_step(state: AmplitudeState, sys: ModeSystem, dt: float,
            noise_draw: np.ndarray) -> AmplitudeState:
    state.check_compatible(sys)
    with np.errstate(over='ignore', invalid='ignore'):
        updated = _euler_maruyama(state.amplitudes, sys, dt, np.asarray(noise_draw))
    if not np.all(np.isfinite(updated)):
        raise NonFiniteStateError(
            f"Non-finite amplitudes at t={state.time + dt:g}; dt={dt:g} is too large"
        )
    return AmplitudeState(updated, state.time + dt)


def integrate(initial: AmplitudeState, sys: ModeSystem, cfg: IntegrationConfig,
              rng_stream: np.random.Generator) -> List[AmplitudeState]:
    """Integrate from `initial` to cfg.t_end, keeping every record_stride-th state.

    The first entry is the initial state and the last one is the end state.
    """
    initial.check_compatible(sys)
    cfg.validate_for(sys)
    n_steps, dt = cfg.n_steps, cfg.step
    recorded = set(_record_steps(n_steps, cfg.record_stride))
    trajectory = [initial]
    a = initial.amplitudes.copy()
    for k in range(1, n_steps + 1):
        dW = complex_noise_increment(rng_stream, dt, sys.mode_count)
        with np.errstate(over='ignore', invalid='ignore'):
            a = _euler_maruyama(a, sys, dt, dW)
        if not np.all(np.isfinite(a)):
            raise NonFiniteStateError(
                f"Failed to integrate: non-finite amplitudes at step {k} (t={initial.time + cfg.time_at(k):g})"
            )
        if k in recorded:
            trajectory.append(AmplitudeState(a, initial.time + cfg.time_at(k)))
    return trajectory


def linear_moments(a0_sq, gamma: float, eta: float, t) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of |a_t|^2 for the unsaturated equation.

    For gamma = 0 the L'Hopital limit is used: mean = a0_sq + eta*t and
    variance = 2*a0_sq*eta*t + (eta*t)^2.
    """
    a0_sq = np.asarray(a0_sq, dtype=float)
    t = np.asarray(t, dtype=float)
    if gamma == 0:
        mean = a0_sq + eta * t
        variance = 2.0 * a0_sq * eta * t + (eta * t) ** 2
        return mean, variance
    growth = np.exp(2.0 * gamma * t)
    excess = np.expm1(2.0 * gamma * t)
    scale = eta / (2.0 * gamma)
    mean = a0_sq * growth + scale * excess
    variance = (eta / gamma) * a0_sq * growth * excess + (scale * excess) ** 2
    return mean, variance


def trajectory_frame(trajectory: List[AmplitudeState]) -> pd.DataFrame:
    """Tabular form: t, re_a0, im_a0, ..., n0, n1, ..."""
    rows = []
    for state in trajectory:
        row = {'t': state.time}
        for i, a in enumerate(state.amplitudes):
            row[f're_a{i}'] = a.real
            row[f'im_a{i}'] = a.imag
        for i, n in enumerate(state.populations):
            row[f'n{i}'] = n
        rows.append(row)
    return pd.DataFrame(rows)


@dataclasses.dataclass
class EnsembleResult:
    final_amplitudes: np.ndarray
    times: np.ndarray
    total_populations: np.ndarray  # (n_records, batch)
    aborted: np.ndarray

    @property
    def final_populations(self) -> np.ndarray:
        a = self.final_amplitudes
        return a.real ** 2 + a.imag ** 2


class EnsembleIntegrator:
    """Batched Euler-Maruyama over independent trials.

    Each row evolves with exactly the arithmetic of `integrate`, so the batch
    layout never changes a trial's result.
    """

    def __init__(self, sys: ModeSystem, cfg: IntegrationConfig):
        cfg.validate_for(sys)
        self.sys = sys
        self.cfg = cfg
        self.record_steps = _record_steps(cfg.n_steps, cfg.record_stride)

    def noise_shape(self) -> Tuple[int, int, int]:
        return self.cfg.n_steps, 2, self.sys.mode_count

    def run(self, initial_amplitudes: np.ndarray, normals: np.ndarray,
            t0: float = 0.0) -> EnsembleResult:
        """initial_amplitudes: (B, M) complex; normals: (B, n_steps, 2, M)."""
        a = np.array(initial_amplitudes, dtype=complex)
        batch = a.shape[0]
        dt = self.cfg.step
        aborted = np.zeros(batch, dtype=bool)
        totals = np.empty((len(self.record_steps), batch))
        totals[0] = (a.real ** 2 + a.imag ** 2).sum(axis=1)
        slot = 1
        with np.errstate(over='ignore', invalid='ignore'):
            for k in range(1, self.cfg.n_steps + 1):
                dW = _complex_increments(normals[:, k - 1], dt)
                a = _euler_maruyama(a, self.sys, dt, dW)
                if slot < len(self.record_steps) and k == self.record_steps[slot]:
                    bad = ~np.all(np.isfinite(a), axis=1)
                    if np.any(bad & ~aborted):
                        logger.debug("%d trajectories turned non-finite by step %d",
                                     int(np.count_nonzero(bad & ~aborted)), k)
                    aborted |= bad
                    a[bad] = 0.0
                    totals[slot] = (a.real ** 2 + a.imag ** 2).sum(axis=1)
                    slot += 1
        times = t0 + np.array([self.cfg.time_at(k) for k in self.record_steps])
        return EnsembleResult(final_amplitudes=a, times=times,
                              total_populations=totals, aborted=aborted)
