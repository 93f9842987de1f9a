"""Event-driven point mass in the gravitational wedge y >= alpha |x|.

Flights are parabolas in closed form; wall impacts come from the exact roots
of a quadratic, so no time stepping and no integration error is involved.
"""
import dataclasses
import enum
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from utils.errors import ConfigurationError, CornerEventError, GeometryError

logger = logging.getLogger(__name__)

REFERENCE_GRAVITY = 1.1e17
REFERENCE_MASS = 6.9e-36

# Corner tolerance in units of the energy height E/(m g).
CORNER_TOLERANCE = 1e-9
# Allowed overshoot past a wall (relative to the local scale) before a state is rejected.
INSIDE_TOLERANCE = 1e-9


class Wall(enum.Enum):
    LEFT = 'left'
    RIGHT = 'right'


@dataclasses.dataclass(frozen=True)
class WedgeGeometry:
    """Wedge with half opening angle `half_angle` (radians) around the +y axis."""
    half_angle: float
    gravity: float = REFERENCE_GRAVITY
    mass: float = REFERENCE_MASS

    def __post_init__(self):
        if not 0 < self.half_angle < math.pi / 2:
            raise ConfigurationError(f"half angle must lie in (0, pi/2), got {self.half_angle}")
        if not self.gravity > 0 or not self.mass > 0:
            raise ConfigurationError("gravity and mass must be positive")

    @classmethod
    def from_degrees(cls, degrees: float, gravity: float = REFERENCE_GRAVITY,
                     mass: float = REFERENCE_MASS) -> 'WedgeGeometry':
        return cls(math.radians(degrees), gravity, mass)

    @property
    def slope(self) -> float:
        """alpha = cot(half_angle)."""
        return 1.0 / math.tan(self.half_angle)

    def height_for(self, energy: float) -> float:
        """Turning height E/(m g) of a particle at rest."""
        return energy / (self.mass * self.gravity)

    def contains(self, x: float, y: float, tolerance: float = 0.0) -> bool:
        return y - self.slope * abs(x) >= -tolerance

    def wall_normal(self, wall: Wall) -> np.ndarray:
        """Inward unit normal of `wall`."""
        alpha = self.slope
        sign = -1.0 if wall is Wall.RIGHT else 1.0
        return np.array([sign * alpha, 1.0]) / math.sqrt(1.0 + alpha * alpha)


@dataclasses.dataclass(frozen=True)
class ParticleState:
    x: float
    y: float
    vx: float
    vy: float
    t: float = 0.0

    def energy(self, wedge: WedgeGeometry) -> float:
        return 0.5 * wedge.mass * (self.vx ** 2 + self.vy ** 2) + wedge.mass * wedge.gravity * self.y

    def mirrored(self) -> 'ParticleState':
        """Image under x -> -x."""
        return ParticleState(-self.x, self.y, -self.vx, self.vy, self.t)

    def reversed(self) -> 'ParticleState':
        """Same point with the velocity flipped; the clock keeps running."""
        return ParticleState(self.x, self.y, -self.vx, -self.vy, self.t)


def _check_inside(state: ParticleState, wedge: WedgeGeometry) -> None:
    scale = max(abs(state.y), wedge.slope * abs(state.x), np.finfo(float).tiny)
    if not wedge.contains(state.x, state.y, INSIDE_TOLERANCE * scale):
        raise GeometryError(f"state ({state.x:g}, {state.y:g}) lies outside the wedge")


def free_flight(state: ParticleState, tau: float, gravity: float) -> ParticleState:
    if tau < 0:
        raise ConfigurationError(f"flight time must be non-negative, got {tau}")
    return ParticleState(
        x=state.x + state.vx * tau,
        y=state.y + state.vy * tau - 0.5 * gravity * tau * tau,
        vx=state.vx,
        vy=state.vy - gravity * tau,
        t=state.t + tau,
    )


def _crossing_root(b: float, c: float, gravity: float) -> float:
    # Positive root of g/2 tau^2 - b tau - c = 0 with c >= 0.
    root = math.sqrt(b * b + 2.0 * gravity * c)
    if b >= 0:
        return (b + root) / gravity
    return 2.0 * c / (root - b) if root - b > 0 else 0.0


def wall_crossing_time(state: ParticleState, wedge: WedgeGeometry) -> Tuple[float, Wall]:
    """Time to the next wall impact and the wall that is hit."""
    _check_inside(state, wedge)
    alpha = wedge.slope
    tau_right = _crossing_root(state.vy - alpha * state.vx,
                               max(state.y - alpha * state.x, 0.0), wedge.gravity)
    tau_left = _crossing_root(state.vy + alpha * state.vx,
                              max(state.y + alpha * state.x, 0.0), wedge.gravity)
    if not (math.isfinite(tau_left) and math.isfinite(tau_right)):
        raise GeometryError("no wall crossing found")
    if tau_right <= tau_left:
        return tau_right, Wall.RIGHT
    return tau_left, Wall.LEFT


def reflect_velocity(velocity, wall: Wall, wedge: WedgeGeometry) -> np.ndarray:
    """Specular reflection v' = v - 2 (v.n) n."""
    v = np.asarray(velocity, dtype=float)
    n = wedge.wall_normal(wall)
    return v - 2.0 * np.dot(v, n) * n


def _corner_tolerance(state: ParticleState, wedge: WedgeGeometry) -> float:
    return CORNER_TOLERANCE * wedge.height_for(state.energy(wedge))


def _bounce(state: ParticleState, wedge: WedgeGeometry) -> Tuple[ParticleState, Wall, float]:
    """Fly to the next wall and reflect; returns the post-impact state."""
    tau, wall = wall_crossing_time(state, wedge)
    impact = free_flight(state, tau, wedge.gravity)
    if abs(impact.x) < _corner_tolerance(state, wedge):
        raise CornerEventError(f"corner hit at t={impact.t:g}")
    vx, vy = reflect_velocity((impact.vx, impact.vy), wall, wedge)
    return ParticleState(impact.x, impact.y, float(vx), float(vy), impact.t), wall, tau


def advance_to(state: ParticleState, wedge: WedgeGeometry, t_target: float) -> ParticleState:
    """Propagate through any number of bounces to time t_target."""
    if t_target < state.t:
        raise ConfigurationError(f"cannot advance backwards from t={state.t:g} to {t_target:g}")
    while True:
        tau, _ = wall_crossing_time(state, wedge)
        if state.t + tau >= t_target:
            return free_flight(state, t_target - state.t, wedge.gravity)
        state, _, _ = _bounce(state, wedge)


@dataclasses.dataclass
class BilliardPath:
    states: List[ParticleState]
    events: List[str]
    bounces: int = 0
    corner: bool = False

    @property
    def final_state(self) -> ParticleState:
        return self.states[-1]

    def bounce_states(self) -> List[ParticleState]:
        return [s for s, e in zip(self.states, self.events) if e.startswith('bounce')]

    def max_relative_energy_drift(self, wedge: WedgeGeometry) -> float:
        energies = np.array([s.energy(wedge) for s in self.states])
        return float(np.max(np.abs(energies - energies[0])) / abs(energies[0]))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for state, event in zip(self.states, self.events):
            rows.append({'t': state.t, 'x': state.x, 'y': state.y,
                         'vx': state.vx, 'vy': state.vy, 'event': event})
        return pd.DataFrame(rows, columns=['t', 'x', 'y', 'vx', 'vy', 'event'])


def simulate_trajectory(initial: ParticleState, wedge: WedgeGeometry,
                        max_bounces: Optional[int] = None, t_end: Optional[float] = None,
                        samples_per_flight: int = 0) -> BilliardPath:
    """Bounce-to-bounce simulation until max_bounces or t_end, whichever comes first.

    Each flight can be sampled at `samples_per_flight` evenly spaced interior
    points. A corner approach ends the path with a `corner` event.
    """
    if max_bounces is None and t_end is None:
        raise ConfigurationError("simulate_trajectory needs max_bounces or t_end")
    if samples_per_flight < 0:
        raise ConfigurationError("samples_per_flight must be non-negative")
    _check_inside(initial, wedge)
    path = BilliardPath(states=[initial], events=['flight'])
    state = initial
    corner_eps = _corner_tolerance(initial, wedge)
    while max_bounces is None or path.bounces < max_bounces:
        tau, wall = wall_crossing_time(state, wedge)
        stop = t_end is not None and state.t + tau >= t_end
        flight = (t_end - state.t) if stop else tau
        for k in range(1, samples_per_flight + 1):
            fraction = k / (samples_per_flight + 1)
            path.states.append(free_flight(state, fraction * flight, wedge.gravity))
            path.events.append('flight')
        if stop:
            path.states.append(free_flight(state, flight, wedge.gravity))
            path.events.append('flight')
            break
        impact = free_flight(state, tau, wedge.gravity)
        if abs(impact.x) < corner_eps:
            logger.warning("corner event at t=%g after %d bounces", impact.t, path.bounces)
            path.states.append(impact)
            path.events.append('corner')
            path.corner = True
            break
        vx, vy = reflect_velocity((impact.vx, impact.vy), wall, wedge)
        state = ParticleState(impact.x, impact.y, float(vx), float(vy), impact.t)
        path.states.append(state)
        path.events.append(f'bounce_{wall.value}')
        path.bounces += 1
    logger.debug("simulated %d bounces up to t=%g", path.bounces, path.final_state.t)
    return path


@dataclasses.dataclass
class LyapunovEstimate:
    rate: float
    stderr: float
    rate_per_bounce: float
    windows: int
    mean_flight_time: float

    def is_regular(self, threshold: float = 0.05) -> bool:
        """Finite-time rate per bounce below threshold.

        Stands in for the bound |rate| * horizon < ln 10. Separation on a
        torus grows linearly, so that product rises like ln(horizon) and
        fails for long horizons; the per-bounce rate of regular motion
        instead decays like ln t / t.
        """
        return self.rate_per_bounce < threshold

    def is_chaotic(self, sigmas: float = 3.0) -> bool:
        return self.rate - sigmas * self.stderr > 0


def _scaled_distance(a: ParticleState, b: ParticleState, length: float, speed: float) -> float:
    return math.hypot((a.x - b.x) / length, (a.y - b.y) / length,
                      (a.vx - b.vx) / speed, (a.vy - b.vy) / speed)


def lyapunov_exponent(initial: ParticleState, wedge: WedgeGeometry, horizon: float,
                      d0: float = 1e-8, batches: int = 10) -> LyapunovEstimate:
    """Two-trajectory estimate of the largest Lyapunov exponent (1/s).

    Distances are measured in units of E/(m g) and sqrt(2E/m). The twin is
    pulled back to distance d0 once per bounce, at the midpoint of the
    reference's next flight, and the log stretching is averaged over time.
    """
    if horizon <= 0:
        raise ConfigurationError("horizon must be positive")
    _check_inside(initial, wedge)
    energy = initial.energy(wedge)
    length = wedge.height_for(energy)
    speed = math.sqrt(2.0 * energy / wedge.mass)
    offset = d0 / 2.0
    twin = ParticleState(initial.x + offset * length, initial.y + offset * length,
                         initial.vx + offset * speed, initial.vy + offset * speed, initial.t)
    logs, durations = [], []
    reference = initial
    last_t = initial.t
    end = initial.t + horizon
    while True:
        reference, _, _ = _bounce(reference, wedge)
        tau, _ = wall_crossing_time(reference, wedge)
        t_mid = reference.t + tau / 2.0
        if t_mid > end:
            break
        ref_mid = free_flight(reference, tau / 2.0, wedge.gravity)
        twin = advance_to(twin, wedge, t_mid)
        d = _scaled_distance(ref_mid, twin, length, speed)
        if d == 0:
            raise GeometryError("twin trajectory collapsed onto the reference")
        logs.append(math.log(d / d0))
        durations.append(t_mid - last_t)
        last_t = t_mid
        shrink = d0 / d
        twin = ParticleState(ref_mid.x + (twin.x - ref_mid.x) * shrink,
                             ref_mid.y + (twin.y - ref_mid.y) * shrink,
                             ref_mid.vx + (twin.vx - ref_mid.vx) * shrink,
                             ref_mid.vy + (twin.vy - ref_mid.vy) * shrink,
                             t_mid)
    windows = len(logs)
    if windows < 2:
        raise ConfigurationError(f"horizon {horizon:g} s covers fewer than two bounces")
    logs = np.asarray(logs)
    durations = np.asarray(durations)
    rate = float(logs.sum() / durations.sum())
    n_batches = min(batches, windows)
    if n_batches >= 2:
        batch_rates = [l.sum() / d.sum() for l, d in
                       zip(np.array_split(logs, n_batches), np.array_split(durations, n_batches))]
        stderr = float(np.std(batch_rates, ddof=1) / math.sqrt(n_batches))
    else:
        stderr = float('inf')
    mean_flight = float(durations.mean())
    logger.debug("lyapunov rate %g +- %g over %d windows", rate, stderr, windows)
    return LyapunovEstimate(rate=rate, stderr=stderr, rate_per_bounce=rate * mean_flight,
                            windows=windows, mean_flight_time=mean_flight)


@dataclasses.dataclass(frozen=True)
class PeriodicOrbit:
    """Symmetric orbit hitting both walls at right angles.

    Apex (0, y0) with horizontal speed vx; impacts at (+-x_max, alpha x_max).
    """
    y0: float
    vx: float
    period: float
    energy: float
    x_max: float
    gravity: float
    slope: float

    def launch_state(self, t: float = 0.0) -> ParticleState:
        return ParticleState(0.0, self.y0, self.vx, 0.0, t)

    def orthogonality(self) -> float:
        """Product of orbit and wall slopes at the impact point (-1 for this family)."""
        return -self.gravity * self.x_max / self.vx ** 2 * self.slope

    def height_at(self, x: float) -> float:
        return self.y0 - self.gravity * x * x / (2.0 * self.vx ** 2)


def periodic_orbit(x_pump: float, y_pump: float, wedge: WedgeGeometry) -> PeriodicOrbit:
    """Member of the periodic family passing through the pump point."""
    alpha = wedge.slope
    g = wedge.gravity
    if not y_pump > alpha * abs(x_pump):
        raise GeometryError(f"pump point ({x_pump:g}, {y_pump:g}) is not inside the wedge")
    y0 = 0.5 * y_pump + math.sqrt(0.25 * y_pump ** 2 + (1.0 / (4.0 * alpha ** 2) + 0.5) * x_pump ** 2)
    k = 2.0 * alpha ** 2 + 1.0
    vx = alpha * math.sqrt(2.0 * g * y0 / k)
    period = 4.0 * math.sqrt(2.0 * y0 / (g * k))
    energy = wedge.mass * g * y0 + 0.5 * wedge.mass * vx ** 2
    x_max = vx ** 2 / (g * alpha)
    return PeriodicOrbit(y0=y0, vx=vx, period=period, energy=energy, x_max=x_max,
                         gravity=g, slope=alpha)


def pump_speed(orbit: PeriodicOrbit, y_pump: float, wedge: WedgeGeometry) -> float:
    kinetic = orbit.energy - wedge.mass * wedge.gravity * y_pump
    if kinetic < 0:
        raise GeometryError(f"pump height {y_pump:g} lies above the orbit's turning height")
    return math.sqrt(2.0 * kinetic / wedge.mass)


def pump_fraction_periodic(orbit: PeriodicOrbit, y_pump: float, d_pump: float,
                           wedge: WedgeGeometry) -> float:
    """Fraction of one period spent inside a pump spot of diameter d_pump."""
    if d_pump <= 0:
        raise ConfigurationError("pump diameter must be positive")
    alpha2 = wedge.slope ** 2
    radicand = orbit.y0 * ((3.0 * alpha2 + 1.0) * orbit.y0 - (2.0 * alpha2 + 1.0) * y_pump)
    if radicand <= 0:
        raise GeometryError(f"pump height {y_pump:g} is not reached by the orbit")
    return (2.0 * alpha2 + 1.0) * d_pump / (4.0 * math.sqrt(radicand))


def coarse_occupancy(path: BilliardPath, wedge: WedgeGeometry, cells: int = 20) -> float:
    """Share of energetically allowed coarse cells visited by the path."""
    height = wedge.height_for(path.states[0].energy(wedge))
    half_width = height / wedge.slope
    xs = np.array([s.x for s in path.states])
    ys = np.array([s.y for s in path.states])
    edges_x = np.linspace(-half_width, half_width, cells + 1)
    edges_y = np.linspace(0.0, height, cells + 1)
    counts, _, _ = np.histogram2d(xs, ys, bins=[edges_x, edges_y])
    cx = 0.5 * (edges_x[:-1] + edges_x[1:])
    cy = 0.5 * (edges_y[:-1] + edges_y[1:])
    gx, gy = np.meshgrid(cx, cy, indexing='ij')
    allowed = gy > wedge.slope * np.abs(gx)
    return float(np.count_nonzero((counts > 0) & allowed) / np.count_nonzero(allowed))
