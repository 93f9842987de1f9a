import dataclasses
from typing import Any, Dict, Optional, Sequence

import numpy as np

from utils.errors import ConfigurationError, DimensionMismatchError

# Cross-gain saturation used for every two- and five-mode scenario.
REFERENCE_BETA_SELF = 1e-5
REFERENCE_BETA_CROSS = 2e-5
REFERENCE_GAMMA = 7e10
REFERENCE_LOSS = 7e10
# eta / gamma, i.e. 2*eta/gamma = 12.5
REFERENCE_NOISE_TO_GAIN = 6.25


@dataclasses.dataclass(frozen=True, eq=False)
class ModeSystem:
    """Parameters of M modes competing for a saturable gain pool.

    gains, losses and noise_strengths are rates in 1/s; saturation is the
    dimensionless M x M cross-gain matrix per unit population.
    """
    gains: np.ndarray
    losses: np.ndarray
    noise_strengths: np.ndarray
    saturation: np.ndarray

    def __post_init__(self):
        gains = np.array(self.gains, dtype=float, ndmin=1)
        losses = np.array(self.losses, dtype=float, ndmin=1)
        noise = np.array(self.noise_strengths, dtype=float, ndmin=1)
        beta = np.array(self.saturation, dtype=float, ndmin=2)
        m = gains.size
        if m < 1:
            raise ConfigurationError("ModeSystem needs at least one mode")
        if losses.size != m or noise.size != m:
            raise DimensionMismatchError(
                f"gains, losses and noise strengths must all have length {m}"
            )
        if beta.shape != (m, m):
            raise DimensionMismatchError(f"saturation must be {m}x{m}, got {beta.shape}")
        for name, arr in (("gains", gains), ("losses", losses),
                          ("noise strengths", noise), ("saturation", beta)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ConfigurationError(f"{name} must be finite and non-negative")
        for name, arr in (("gains", gains), ("losses", losses),
                          ("noise_strengths", noise), ("saturation", beta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def mode_count(self) -> int:
        return self.gains.size

    @property
    def net_gains(self) -> np.ndarray:
        """gamma_i = g_i - kappa_i."""
        return self.gains - self.losses

    def to_dict(self) -> Dict[str, Any]:
        return {
            'gains': self.gains.tolist(),
            'losses': self.losses.tolist(),
            'noise_strengths': self.noise_strengths.tolist(),
            'saturation': self.saturation.tolist(),
        }

    @staticmethod
    def from_dict(system_dict: Dict[str, Any]) -> 'ModeSystem':
        return ModeSystem(
            gains=system_dict['gains'],
            losses=system_dict['losses'],
            noise_strengths=system_dict['noise_strengths'],
            saturation=system_dict['saturation'],
        )


def saturation_matrix(mode_count: int, self_term: float, cross_term: float) -> np.ndarray:
    beta = np.full((mode_count, mode_count), float(cross_term))
    np.fill_diagonal(beta, float(self_term))
    return beta


def reference_mode_system(mode_count: int = 2,
                          gains: Optional[Sequence[float]] = None,
                          noise_to_gain: float = REFERENCE_NOISE_TO_GAIN,
                          beta_self: float = REFERENCE_BETA_SELF,
                          beta_cross: float = REFERENCE_BETA_CROSS) -> ModeSystem:
    """Documented stand-in for the unpublished gain/noise values.

    Losses are fixed at 7e10 1/s and gains default to twice that, so a lone
    mode saturates at n = 1/beta_self. The noise strength is
    noise_to_gain * gamma of the first mode (2*eta/gamma = 12.5 by default).
    """
    if gains is None:
        gains = [REFERENCE_LOSS + REFERENCE_GAMMA] * mode_count
    gains = np.asarray(gains, dtype=float)
    if gains.size != mode_count:
        raise DimensionMismatchError(f"expected {mode_count} gains, got {gains.size}")
    losses = np.full(mode_count, REFERENCE_LOSS)
    eta = noise_to_gain * (gains[0] - losses[0])
    return ModeSystem(
        gains=gains,
        losses=losses,
        noise_strengths=np.full(mode_count, eta),
        saturation=saturation_matrix(mode_count, beta_self, beta_cross),
    )


@dataclasses.dataclass(frozen=True, eq=False)
class AmplitudeState:
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex, ndmin=1)
        if not np.all(np.isfinite(a)):
            raise ConfigurationError("amplitudes must be finite")
        a.setflags(write=False)
        object.__setattr__(self, 'amplitudes', a)
        object.__setattr__(self, 'time', float(self.time))

    @property
    def populations(self) -> np.ndarray:
        a = self.amplitudes
        return a.real ** 2 + a.imag ** 2

    @property
    def total_population(self) -> float:
        return float(self.populations.sum())

    def check_compatible(self, sys: ModeSystem) -> None:
        if self.amplitudes.size != sys.mode_count:
            raise DimensionMismatchError(
                f"state has {self.amplitudes.size} modes, system has {sys.mode_count}"
            )

    @staticmethod
    def from_populations(populations, phases=None, time: float = 0.0) -> 'AmplitudeState':
        n = np.asarray(populations, dtype=float)
        if np.any(n < 0):
            raise ConfigurationError("populations must be non-negative")
        theta = np.zeros_like(n) if phases is None else np.asarray(phases, dtype=float)
        return AmplitudeState(np.sqrt(n) * np.exp(1j * theta), time)


@dataclasses.dataclass(frozen=True)
class IntegrationConfig:
    dt: float
    t_end: float
    record_stride: int = 1

    # Constructor rejects steps at or beyond this max(gamma)*dt.
    MAX_RATE_STEP = 0.1
    DEFAULT_RATE_STEP = 0.01

    def __post_init__(self):
        if not (np.isfinite(self.dt) and np.isfinite(self.t_end)):
            raise ConfigurationError("dt and t_end must be finite")
        if not 0 < self.dt <= self.t_end:
            raise ConfigurationError(f"need 0 < dt <= t_end, got dt={self.dt}, t_end={self.t_end}")
        if int(self.record_stride) < 1:
            raise ConfigurationError("record_stride must be a positive integer")
        object.__setattr__(self, 'record_stride', int(self.record_stride))

    @property
    def n_steps(self) -> int:
        ratio = self.t_end / self.dt
        nearest = round(ratio)
        if nearest >= 1 and abs(ratio - nearest) <= 1e-9 * ratio:
            return int(nearest)
        return int(np.ceil(ratio))

    @property
    def step(self) -> float:
        """Step actually taken: dt shrunk so that n_steps * step == t_end."""
        return self.t_end / self.n_steps

    def time_at(self, k: int) -> float:
        return self.t_end if k == self.n_steps else k * self.step

    def validate_for(self, sys: ModeSystem) -> None:
        rate = float(np.max(sys.net_gains))
        if rate * self.dt >= self.MAX_RATE_STEP:
            raise ConfigurationError(
                f"dt={self.dt:g} too large: max(gamma)*dt = {rate * self.dt:.3g} >= {self.MAX_RATE_STEP}"
            )

    @classmethod
    def for_system(cls, sys: ModeSystem, t_end: float, record_stride: int = 1,
                   rate_step: float = DEFAULT_RATE_STEP) -> 'IntegrationConfig':
        rate = float(np.max(sys.net_gains))
        dt = rate_step / rate if rate > 0 else t_end / 1000.0
        cfg = cls(dt=min(dt, t_end), t_end=t_end, record_stride=record_stride)
        cfg.validate_for(sys)
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return {'dt': self.dt, 't_end': self.t_end, 'record_stride': self.record_stride}
