"""Intensity statistics of particle-density images."""
import dataclasses
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import constants, stats
from scipy.spatial.distance import cdist

from utils.errors import ConfigurationError, GeometryError, PatternError
from .billiard import WedgeGeometry, periodic_orbit

logger = logging.getLogger(__name__)

DEFAULT_BINS = 128
MIN_FIT_PIXELS = 100
PT_FIT_BINS = 20


@dataclasses.dataclass(frozen=True, eq=False)
class PatternMatrix:
    """Non-negative intensity image; `mask` marks the pixels that take part."""
    values: np.ndarray
    mask: Optional[np.ndarray] = None
    pixel_pitch: Optional[Tuple[float, float]] = None
    label: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 1:
            raise PatternError(f"pattern must be a non-empty 2-D array, got shape {values.shape}")
        mask = np.ones(values.shape, dtype=bool) if self.mask is None else np.array(self.mask, dtype=bool)
        if mask.shape != values.shape:
            raise PatternError(f"mask shape {mask.shape} does not match pattern {values.shape}")
        if np.count_nonzero(mask) < 2:
            raise PatternError("pattern needs at least two unmasked pixels")
        inside = values[mask]
        if not np.all(np.isfinite(inside)) or np.any(inside < 0):
            raise PatternError("unmasked intensities must be finite and non-negative")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'mask', mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def samples(self) -> np.ndarray:
        return self.values[self.mask]

    def normalized_samples(self) -> np.ndarray:
        """Unmasked intensities divided by their mean."""
        samples = self.samples
        mean = samples.mean()
        if mean <= 0:
            raise PatternError(f"pattern {self.label!r} is zero everywhere")
        return samples / mean

    def scaled(self, factor: float) -> 'PatternMatrix':
        return PatternMatrix(self.values * factor, self.mask, self.pixel_pitch, self.label)


@dataclasses.dataclass
class DensityEstimate:
    centers: np.ndarray
    widths: np.ndarray
    density: np.ndarray
    rho_max: float

    def integral(self) -> float:
        return float(np.sum(self.density * self.widths))


@dataclasses.dataclass
class EntropyResult:
    raw: float
    normalized: float
    bin_count: int
    bounds: Tuple[float, float]


@dataclasses.dataclass
class PorterThomasFit:
    mean_intensity: float
    ks_statistic: float
    ks_pvalue: float
    ks_critical_1pct: float
    chi2_per_dof: float
    chi2_pvalue: float
    n_samples: int

    @property
    def below_critical(self) -> bool:
        return self.ks_statistic < self.ks_critical_1pct


@dataclasses.dataclass
class PowerLawFit:
    exponent: float
    amplitude: float
    r_squared: float
    points: int


def density_pdf(pattern: PatternMatrix, bins: int = DEFAULT_BINS) -> DensityEstimate:
    """Histogram estimate of the density of rho = I/<I> on [0, rho_max]."""
    if bins < 2:
        raise ConfigurationError("density_pdf needs at least 2 bins")
    rho = pattern.normalized_samples()
    rho_max = float(rho.max())
    counts, edges = np.histogram(rho, bins=bins, range=(0.0, rho_max))
    widths = np.diff(edges)
    density = counts / (rho.size * widths)
    return DensityEstimate(centers=0.5 * (edges[:-1] + edges[1:]), widths=widths,
                           density=density, rho_max=rho_max)


def normalized_entropy(pattern: PatternMatrix, bins: int = DEFAULT_BINS) -> EntropyResult:
    """Differential entropy of the intensity density, mapped onto [0, 1].

    The lower bound is a single occupied bin, log(d_rho); the upper bound is
    the uniform density on [0, rho_max], log(rho_max).
    """
    estimate = density_pdf(pattern, bins)
    occupied = estimate.density > 0
    f = estimate.density[occupied]
    raw = float(-np.sum(f * np.log(f) * estimate.widths[occupied]))
    s_max = math.log(estimate.rho_max)
    s_min = math.log(estimate.widths[0])
    if s_max == s_min:
        raise PatternError("entropy bounds coincide; the support is a single bin")
    normalized = min(max((raw - s_min) / (s_max - s_min), 0.0), 1.0)
    return EntropyResult(raw=raw, normalized=normalized, bin_count=bins, bounds=(s_min, s_max))


def _check_same_support(a: PatternMatrix, b: PatternMatrix) -> None:
    if a.shape != b.shape:
        raise PatternError(f"pattern shapes differ: {a.shape} vs {b.shape}")
    if not np.array_equal(a.mask, b.mask):
        raise PatternError("pattern masks differ")


def pearson_correlation(a: PatternMatrix, b: PatternMatrix) -> float:
    _check_same_support(a, b)
    da = a.samples - a.samples.mean()
    db = b.samples - b.samples.mean()
    saa, sbb = np.dot(da, da), np.dot(db, db)
    if saa == 0 or sbb == 0:
        raise PatternError("correlation is undefined for a pattern with zero variance")
    r = float(np.dot(da, db) / (math.sqrt(saa) * math.sqrt(sbb)))
    return min(max(r, -1.0), 1.0)


def porter_thomas_fit(pattern: PatternMatrix) -> PorterThomasFit:
    """Distance of the normalized intensities from the Porter-Thomas law (chi^2 with 1 dof)."""
    samples = pattern.samples
    if samples.size < MIN_FIT_PIXELS:
        raise PatternError(f"need at least {MIN_FIT_PIXELS} unmasked pixels, got {samples.size}")
    rho = pattern.normalized_samples()
    law = stats.chi2(df=1)
    ks = stats.kstest(rho, law.cdf)
    # equiprobable bins of the reference law
    edges = law.ppf(np.linspace(0.0, 1.0, PT_FIT_BINS + 1))
    observed, _ = np.histogram(rho, bins=edges)
    expected = rho.size / PT_FIT_BINS
    chi2 = float(np.sum((observed - expected) ** 2) / expected)
    dof = PT_FIT_BINS - 1
    return PorterThomasFit(
        mean_intensity=float(samples.mean()),
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        ks_critical_1pct=1.63 / math.sqrt(rho.size),
        chi2_per_dof=chi2 / dof,
        chi2_pvalue=float(stats.chi2.sf(chi2, dof)),
        n_samples=int(rho.size),
    )


def power_law_fit(pattern: PatternMatrix, bins: int = DEFAULT_BINS, rho_min: float = 1.0) -> PowerLawFit:
    """Least-squares fit of log f(rho) = log A - k log rho over occupied bins above rho_min."""
    estimate = density_pdf(pattern, bins)
    keep = (estimate.density > 0) & (estimate.centers >= rho_min)
    if np.count_nonzero(keep) < 3:
        raise PatternError("fewer than three occupied bins in the tail")
    x = np.log(estimate.centers[keep])
    y = np.log(estimate.density[keep])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - np.sum(residual ** 2) / spread if spread > 0 else 1.0
    return PowerLawFit(exponent=float(-slope), amplitude=float(math.exp(intercept)),
                       r_squared=float(r_squared), points=int(np.count_nonzero(keep)))


def _wedge_grid(wedge: WedgeGeometry, energy: float, grid: Tuple[int, int]):
    if not energy > 0:
        raise GeometryError("pattern energy must be positive")
    rows, cols = grid
    if rows < 2 or cols < 2:
        raise ConfigurationError("pattern grid must be at least 2 x 2")
    height = wedge.height_for(energy)
    half_width = height / wedge.slope
    dy, dx = height / rows, 2.0 * half_width / cols
    ys = (np.arange(rows) + 0.5) * dy
    xs = -half_width + (np.arange(cols) + 0.5) * dx
    gx, gy = np.meshgrid(xs, ys)
    # row 0 is the top of the image
    gx, gy = gx[::-1], gy[::-1]
    mask = (gy >= wedge.slope * np.abs(gx)) & (gy <= height)
    if np.count_nonzero(mask) < 2:
        raise GeometryError("energy too low for the grid region")
    return gx, gy, mask, (dy, dx), height


def _chaotic_values(gx, gy, wedge, energy, rng, n_waves, wavenumber):
    if wavenumber is None:
        # mean kinetic energy over the allowed region is E/3
        wavenumber = math.sqrt(2.0 * wedge.mass * energy / 3.0) / constants.hbar
    angles = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    directions = wavenumber * np.vstack([np.cos(angles), np.sin(angles)])
    psi = math.sqrt(2.0 / n_waves) * np.cos(points @ directions + phases).sum(axis=1)
    return (psi ** 2).reshape(gx.shape)


def _regular_values(gx, gy, wedge, energy, pump, ridge_width):
    if pump is None:
        alpha2 = wedge.slope ** 2
        pump = (0.0, wedge.height_for(energy) * (2.0 * alpha2 + 1.0) / (3.0 * alpha2 + 1.0))
    orbit = periodic_orbit(pump[0], pump[1], wedge)
    if orbit.energy > energy * (1.0 + 1e-9):
        raise GeometryError("periodic orbit through the pump point exceeds the pattern energy")
    xs = np.linspace(-orbit.x_max, orbit.x_max, 1024)
    curve = np.column_stack([xs, orbit.height_at(xs)])
    # dwell time along the path goes as 1/speed
    weight = orbit.vx / np.hypot(orbit.vx, orbit.gravity * xs / orbit.vx)
    distances = cdist(np.column_stack([gx.ravel(), gy.ravel()]), curve)
    nearest = distances.argmin(axis=1)
    d = distances[np.arange(nearest.size), nearest]
    values = weight[nearest] * np.exp(-0.5 * (d / ridge_width) ** 2)
    return values.reshape(gx.shape)


def synthetic_pattern(kind: str, wedge: WedgeGeometry, energy: float, grid: Tuple[int, int],
                      seed: int, n_waves: int = 50, pump: Optional[Tuple[float, float]] = None,
                      wavenumber: Optional[float] = None,
                      ridge_width: Optional[float] = None) -> PatternMatrix:
    """Test image standing in for a camera frame.

    chaotic: |psi|^2 of a real superposition of n_waves plane waves with
    random directions and phases at fixed wavenumber. regular: Gaussian ridge
    along the periodic orbit through `pump`. Both are masked to the classically
    allowed region of the wedge at `energy`.
    """
    gx, gy, mask, pitch, _ = _wedge_grid(wedge, energy, grid)
    if kind == 'chaotic':
        if n_waves < 1:
            raise ConfigurationError("n_waves must be positive")
        rng = np.random.default_rng(seed)
        values = _chaotic_values(gx, gy, wedge, energy, rng, n_waves, wavenumber)
    elif kind == 'regular':
        width = ridge_width if ridge_width is not None else 2.0 * max(pitch)
        values = _regular_values(gx, gy, wedge, energy, pump, width)
    else:
        raise ConfigurationError(f"unknown pattern kind {kind!r}; expected 'chaotic' or 'regular'")
    values = np.where(mask, values, 0.0)
    return PatternMatrix(values, mask, pitch, label=f"synthetic {kind} (seed {seed})")


def average_patterns(patterns: Sequence[PatternMatrix]) -> PatternMatrix:
    """Pixelwise mean of frames that share shape and mask."""
    if not patterns:
        raise PatternError("nothing to average")
    first = patterns[0]
    for other in patterns[1:]:
        _check_same_support(first, other)
    values = np.mean([p.values for p in patterns], axis=0)
    return PatternMatrix(values, first.mask, first.pixel_pitch, label=f"average of {len(patterns)}")


def correlation_matrix(patterns: Sequence[PatternMatrix]) -> np.ndarray:
    k = len(patterns)
    r = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            r[i, j] = r[j, i] = pearson_correlation(patterns[i], patterns[j])
    return r


def neighbor_correlations(patterns: Sequence[PatternMatrix]) -> pd.DataFrame:
    """r between consecutive frames of an ordered scan."""
    if len(patterns) < 2:
        raise PatternError("a correlation scan needs at least two patterns")
    rows = [{'index': i, 'r_neighbor': pearson_correlation(patterns[i], patterns[i + 1])}
            for i in range(len(patterns) - 1)]
    return pd.DataFrame(rows, columns=['index', 'r_neighbor'])
