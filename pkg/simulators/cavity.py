"""Photon-in-a-wedge units: maps microcavity parameters onto mass, gravity and potential."""
import dataclasses
import math
from typing import Any, Dict

from scipy import constants

from utils.errors import ConfigurationError

DEFAULT_SEPARATION = 16e-6
DEFAULT_REFRACTIVE_INDEX = 1.43
DEFAULT_PROFILE_DEPTH = 40e-9
DEFAULT_MODE_NUMBER = 69
TARGET_GRAVITY = 1.3e17


@dataclasses.dataclass(frozen=True)
class CavityParams:
    separation: float
    light_speed: float
    tilt: float
    profile_depth: float
    mode_number: int

    def __post_init__(self):
        if not self.separation > 0:
            raise ConfigurationError("mirror separation must be positive")
        if not self.light_speed > 0:
            raise ConfigurationError("speed of light in the medium must be positive")
        if int(self.mode_number) < 1:
            raise ConfigurationError("longitudinal mode number must be at least 1")

    @classmethod
    def defaults(cls) -> 'CavityParams':
        """16 um dye-filled cavity with the tilt chosen for g_eff = 1.3e17 m/s^2."""
        speed = constants.c / DEFAULT_REFRACTIVE_INDEX
        return cls(
            separation=DEFAULT_SEPARATION,
            light_speed=speed,
            tilt=tilt_for_gravity(TARGET_GRAVITY, DEFAULT_SEPARATION, speed),
            profile_depth=DEFAULT_PROFILE_DEPTH,
            mode_number=DEFAULT_MODE_NUMBER,
        )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def effective_gravity(cav: CavityParams) -> float:
    """g_eff = tilt * c~^2 / D0."""
    return cav.tilt * cav.light_speed ** 2 / cav.separation


def tilt_for_gravity(gravity: float, separation: float, light_speed: float) -> float:
    return gravity * separation / light_speed ** 2


def effective_mass(cav: CavityParams) -> float:
    """m = hbar k_z / c~ with k_z = q pi / D0."""
    return constants.h * cav.mode_number / (2.0 * cav.separation * cav.light_speed)


def wedge_potential_depth(cav: CavityParams, mass: float) -> float:
    """V = -m c~^2 dd / D0; a raised mirror profile lowers the potential."""
    if not mass > 0:
        raise ConfigurationError("mass must be positive")
    return -mass * cav.light_speed ** 2 * cav.profile_depth / cav.separation


def cavity_summary(cav: CavityParams) -> Dict[str, Any]:
    mass = effective_mass(cav)
    return {
        'cavity': cav.to_dict(),
        'tilt_rad': cav.tilt,
        'tilt_deg': math.degrees(cav.tilt),
        'effective_gravity': effective_gravity(cav),
        'effective_mass': mass,
        'potential_depth': wedge_potential_depth(cav, mass),
    }
