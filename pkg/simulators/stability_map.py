"""Semiclassical comparison of periodic-orbit and chaotic-mode gain at a pump spot.

A cell is regular when the periodic orbit through the pump point spends a
larger share of its period in the spot (f_p) than the brightest of N
Porter-Thomas distributed chaotic modes collects there (f_c).
"""
import dataclasses
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from scipy import constants
from scipy.special import erf, erfc, erfcinv, erfinv

from utils.errors import ConfigurationError, GainCompError, SemiclassicalRangeError
from utils.helpers import progress
from .billiard import WedgeGeometry, periodic_orbit, pump_fraction_periodic

logger = logging.getLogger(__name__)

REFERENCE_HALF_ANGLE_DEG = 35.0
REFERENCE_PUMP_DIAMETER = 25e-6
REFERENCE_CONFIDENCE = 0.5
# Below this many modes the p-quantile of the brightest mode no longer
# tracks a chaotic spectrum; cells there are reported as errors.
MIN_SEMICLASSICAL_MODES = 3.0

_TWO_OVER_ROOT_PI = 2.0 / math.sqrt(math.pi)


@dataclasses.dataclass(frozen=True)
class StabilityParams:
    wedge: WedgeGeometry
    d_pump: float = REFERENCE_PUMP_DIAMETER
    p: float = REFERENCE_CONFIDENCE
    planck: float = constants.h
    min_modes: float = MIN_SEMICLASSICAL_MODES

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ConfigurationError(f"confidence p must lie in (0, 1), got {self.p}")
        if not self.d_pump > 0:
            raise ConfigurationError("pump diameter must be positive")
        if not self.planck > 0:
            raise ConfigurationError("Planck constant must be positive")
        if not self.min_modes >= 1:
            raise ConfigurationError(f"min_modes must be at least 1, got {self.min_modes}")

    @property
    def mass(self) -> float:
        return self.wedge.mass

    @classmethod
    def reference_defaults(cls) -> 'StabilityParams':
        return cls(WedgeGeometry.from_degrees(REFERENCE_HALF_ANGLE_DEG))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'half_angle_deg': math.degrees(self.wedge.half_angle),
            'alpha': self.wedge.slope,
            'gravity': self.wedge.gravity,
            'mass': self.mass,
            'd_pump': self.d_pump,
            'p': self.p,
            'planck': self.planck,
            'min_modes': self.min_modes,
        }


@dataclasses.dataclass
class StabilityCell:
    x_pump: float
    y_pump: float
    f_p: float
    f_c: float
    n_modes: float
    label: str
    error: str = ""


def porter_thomas_pdf(x):
    """Density of x = I/<I> for a real Gaussian random wave."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ConfigurationError("Porter-Thomas density is defined for x > 0")
    return np.exp(-x / 2.0) / np.sqrt(2.0 * np.pi * x)


def exceedance_probability(gamma):
    """P(x >= gamma) = 1 - erf(sqrt(gamma/2))."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ConfigurationError("exceedance threshold must be non-negative")
    return erfc(np.sqrt(gamma / 2.0))


def erf_inverse(y):
    x = erfinv(y)
    with np.errstate(invalid='ignore', over='ignore'):
        step = (erf(x) - y) / (_TWO_OVER_ROOT_PI * np.exp(-x * x))
    return np.where(np.isfinite(step), x - step, x)


def erf_inverse_complement(q):
    """x with erfc(x) = q, i.e. erf^-1(1 - q) without forming 1 - q."""
    x = erfcinv(q)
    with np.errstate(invalid='ignore', over='ignore'):
        step = (erfc(x) - q) / (_TWO_OVER_ROOT_PI * np.exp(-x * x))
    return np.where(np.isfinite(step), x + step, x)


def intensity_quantile(p: float, n_modes: float) -> float:
    """Threshold exceeded by at least one of n_modes independent modes with probability p."""
    if not 0 < p < 1:
        raise ConfigurationError(f"p must lie in (0, 1), got {p}")
    if not n_modes >= 1:
        raise SemiclassicalRangeError(f"need at least one mode, got N = {n_modes:g}")
    # 1 - (1 - p)^(1/N)
    q = -math.expm1(math.log1p(-p) / n_modes)
    return float(2.0 * erf_inverse_complement(q) ** 2)


def cumulative_states(energy, params: StabilityParams):
    """Number of states below `energy` in the wedge (phase-space volume / h^2)."""
    energy = np.asarray(energy, dtype=float)
    if np.any(energy < 0):
        raise ConfigurationError("energy must be non-negative")
    g = params.wedge.gravity
    return 2.0 * np.pi * energy ** 3 / (3.0 * params.wedge.slope * params.mass * g * g * params.planck ** 2)


def density_of_states(energy, params: StabilityParams):
    energy = np.asarray(energy, dtype=float)
    if np.any(energy < 0):
        raise ConfigurationError("energy must be non-negative")
    g = params.wedge.gravity
    return 2.0 * np.pi * energy ** 2 / (params.wedge.slope * params.mass * g * g * params.planck ** 2)


def available_mode_count(y_pump: float, params: StabilityParams) -> float:
    """Modes within the energy window m g d_pump around E = m g y_pump."""
    if not y_pump > 0:
        raise ConfigurationError("pump height must be positive")
    m, g = params.mass, params.wedge.gravity
    return float(density_of_states(m * g * y_pump, params) * m * g * params.d_pump)


def pump_fraction_chaotic(y_pump: float, params: StabilityParams) -> float:
    """Spot area over mode area V = y^2/alpha, times the p-quantile of the brightest mode."""
    n_modes = available_mode_count(y_pump, params)
    if n_modes < params.min_modes:
        raise SemiclassicalRangeError(
            f"only {n_modes:.3g} modes at y_pump = {y_pump:g} m (need {params.min_modes:g}); too close to the apex"
        )
    mean_fraction = math.pi * (params.d_pump / 2.0) ** 2 * params.wedge.slope / y_pump ** 2
    return mean_fraction * intensity_quantile(params.p, n_modes)


def _stability_cell(x_pump: float, y_pump: float, params: StabilityParams) -> StabilityCell:
    try:
        orbit = periodic_orbit(x_pump, y_pump, params.wedge)
        f_p = pump_fraction_periodic(orbit, y_pump, params.d_pump, params.wedge)
        n_modes = available_mode_count(y_pump, params)
        f_c = pump_fraction_chaotic(y_pump, params)
    except GainCompError as e:
        return StabilityCell(x_pump, y_pump, math.nan, math.nan, math.nan, 'error', str(e))
    # f_p == f_c counts as chaotic
    label = 'regular' if f_p > f_c else 'chaotic'
    return StabilityCell(x_pump, y_pump, f_p, f_c, n_modes, label)


def compute_stability_map(grid: Sequence[Tuple[float, float]], params: StabilityParams,
                          show_progress: bool = False) -> List[StabilityCell]:
    cells = [_stability_cell(x, y, params)
             for x, y in progress(grid, "Cells", enabled=show_progress)]
    failed = sum(1 for c in cells if c.label == 'error')
    if failed:
        logger.warning("%d of %d stability cells failed", failed, len(cells))
    return cells


def default_grid(wedge: WedgeGeometry, y_max: float, resolution: int = 101) -> List[Tuple[float, float]]:
    """resolution x resolution points over the bounding box, strict interior only."""
    if resolution < 2 or not y_max > 0:
        raise ConfigurationError("grid needs resolution >= 2 and y_max > 0")
    half = y_max / wedge.slope
    full = np.linspace(-half, half, resolution)
    # exact mirror pairs, so the interior test keeps or drops both
    xs = (full - full[::-1]) / 2.0
    ys = np.linspace(0.0, y_max, resolution)
    return [(float(x), float(y)) for y in ys for x in xs if y > wedge.slope * abs(x)]


class StabilityMapAnalyzer:
    """Connectivity of the regular region on the grid of computed cells."""

    def __init__(self, cells: Sequence[StabilityCell]):
        self.cells = list(cells)
        self.xs = sorted({c.x_pump for c in self.cells})
        self.ys = sorted({c.y_pump for c in self.cells})
        column = {x: i for i, x in enumerate(self.xs)}
        row = {y: j for j, y in enumerate(self.ys)}
        self.index = {(column[c.x_pump], row[c.y_pump]): c for c in self.cells}
        self.graph = nx.Graph()
        self._build_graph()

    def _build_graph(self):
        for (i, j), cell in self.index.items():
            if cell.label != 'regular':
                continue
            self.graph.add_node((i, j))
            for ni, nj in ((i - 1, j), (i, j - 1)):
                neighbor = self.index.get((ni, nj))
                if neighbor is not None and neighbor.label == 'regular':
                    self.graph.add_edge((i, j), (ni, nj))

    def get_region_summary(self) -> Dict[str, Any]:
        regions = sorted(nx.connected_components(self.graph), key=len, reverse=True)
        center = min(range(len(self.xs)), key=lambda i: abs(self.xs[i])) if self.xs else None
        return {
            'regular_regions': len(regions),
            'region_sizes': [len(r) for r in regions],
            'largest_touches_center': bool(regions) and any(i == center for i, _ in regions[0]),
        }

    def get_cut_summary(self) -> pd.DataFrame:
        """Per horizontal cut: whether regular cells form one interval around x = 0."""
        rows = []
        for j, y in enumerate(self.ys):
            row_cells = sorted(((i, c) for (i, jj), c in self.index.items()
                                if jj == j and c.label != 'error'), key=lambda item: item[0])
            regular = [(i, j) for i, c in row_cells if c.label == 'regular']
            if not row_cells:
                continue
            sub = self.graph.subgraph(regular)
            center_cell = min(row_cells, key=lambda item: abs(item[1].x_pump))[1]
            rows.append({
                'y_pump': y,
                'n_regular': len(regular),
                'n_chaotic': len(row_cells) - len(regular),
                'contiguous': len(regular) == 0 or nx.number_connected_components(sub) == 1,
                'contains_center': center_cell.label == 'regular',
                'flanked': (row_cells[0][1].label == 'chaotic'
                            and row_cells[-1][1].label == 'chaotic'),
            })
        return pd.DataFrame(rows, columns=['y_pump', 'n_regular', 'n_chaotic',
                                           'contiguous', 'contains_center', 'flanked'])


def map_frame(cells: Sequence[StabilityCell]) -> pd.DataFrame:
    return pd.DataFrame(
        [{'x_pump': c.x_pump, 'y_pump': c.y_pump, 'f_p': c.f_p, 'f_c': c.f_c,
          'N_modes': c.n_modes, 'label': c.label} for c in cells],
        columns=['x_pump', 'y_pump', 'f_p', 'f_c', 'N_modes', 'label'],
    )


def map_summary(cells: Sequence[StabilityCell], params: StabilityParams,
                config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    labels = [c.label for c in cells]
    analyzer = StabilityMapAnalyzer(cells)
    return {
        'cells': len(cells),
        'regular': labels.count('regular'),
        'chaotic': labels.count('chaotic'),
        'errors': labels.count('error'),
        'warnings': 'error' in labels,
        'regions': analyzer.get_region_summary(),
        'params': params.to_dict(),
        'config': config or {},
    }
