"""Carrier media, loop geometry and steady laminar velocity fields.

The pipe axis is x; the cross-section lives in the (y, z) plane. All
velocity fields are steady, fully developed and purely axial, so the
full flow solution reduces to an axial profile u(r).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError, DataError

LAMINAR_REYNOLDS_LIMIT = 2300.0


@dataclass(frozen=True)
class FluidMedium:
    """Newtonian carrier liquid (water or blood-like)."""

    density: float  # kg/m^3
    dynamic_viscosity: float  # Pa s
    temperature: float  # K

    def __post_init__(self):
        problems = []
        if not self.density > 0:
            problems.append("medium.density must be > 0")
        if not self.dynamic_viscosity > 0:
            problems.append("medium.dynamic_viscosity must be > 0")
        if not self.temperature > 0:
            problems.append("medium.temperature must be > 0")
        if problems:
            raise ConfigError(problems)


# Literature-informed presets; see the shipped config for the same values
# in overridable form.
WATER = FluidMedium(density=1000.0, dynamic_viscosity=1.0e-3, temperature=293.0)
BLOOD_LIKE = FluidMedium(density=1060.0, dynamic_viscosity=3.5e-3, temperature=310.0)


@dataclass(frozen=True)
class LoopGeometry:
    """Closed-loop channel: a straight pipe with axial periodicity."""

    pipe_radius: float  # m
    detector_distance: float  # m, transmitter -> detector along the axis
    loop_length: float  # m, axial period of the circuit
    gravity: Tuple[float, float, float] = (0.0, 0.0, -9.81)  # m/s^2

    def __post_init__(self):
        problems = []
        if not self.pipe_radius > 0:
            problems.append("geometry.pipe_radius must be > 0")
        if not 0 < self.detector_distance < self.loop_length:
            problems.append(
                "geometry.detector_distance must lie in (0, loop_length)"
            )
        g = np.asarray(self.gravity, dtype=float)
        if g.shape != (3,) or not np.all(np.isfinite(g)):
            problems.append("geometry.gravity must be a finite 3-vector")
        elif not np.linalg.norm(g) <= 20.0:
            problems.append("geometry.gravity magnitude must be <= 20 m/s^2")
        if problems:
            raise ConfigError(problems)

    @property
    def gravity_vector(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)


class ProfileKind(Enum):
    POISEUILLE = "poiseuille"
    PLUG = "plug"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class FlowField:
    """Steady axial velocity profile scaled by the mean velocity."""

    profile_kind: ProfileKind
    mean_velocity: float  # m/s
    tabulated_profile: Optional[Tuple[Tuple[float, float], ...]] = None
    _interpolator: PchipInterpolator = field(
        init=False, repr=False, compare=False, default=None
    )

    def __post_init__(self):
        problems = []
        if not self.mean_velocity >= 0:
            problems.append("flow.mean_velocity must be >= 0")
        if self.profile_kind is ProfileKind.TABULATED:
            table = self.tabulated_profile
            if not table:
                problems.append("flow.tabulated_profile required for tabulated kind")
            else:
                rs = np.array([row[0] for row in table], dtype=float)
                us = np.array([row[1] for row in table], dtype=float)
                if len(rs) < 2 or rs[0] != 0.0 or rs[-1] != 1.0:
                    problems.append(
                        "flow.tabulated_profile must span r/R from 0.0 to 1.0"
                    )
                elif np.any(np.diff(rs) <= 0):
                    problems.append(
                        "flow.tabulated_profile r/R column must be strictly increasing"
                    )
                elif not np.all(np.isfinite(us)):
                    problems.append("flow.tabulated_profile values must be finite")
                else:
                    object.__setattr__(
                        self, "_interpolator", PchipInterpolator(rs, us)
                    )
        if problems:
            raise ConfigError(problems)

    def axial_speed(self, r: np.ndarray, pipe_radius: float) -> np.ndarray:
        """Axial velocity u(r) for radii in metres; radii beyond the wall
        are clamped to the wall value."""
        r = np.asarray(r, dtype=float)
        eta = np.clip(r / pipe_radius, 0.0, 1.0)
        u = self.mean_velocity
        if self.profile_kind is ProfileKind.POISEUILLE:
            return 2.0 * u * (1.0 - eta * eta)
        if self.profile_kind is ProfileKind.PLUG:
            return np.full_like(eta, u)
        if self._interpolator is None:
            raise ConfigError("flow.tabulated_profile required for tabulated kind")
        return u * self._interpolator(eta)

    @property
    def max_speed(self) -> float:
        """Peak axial speed, used for time-step sizing."""
        if self.profile_kind is ProfileKind.POISEUILLE:
            return 2.0 * self.mean_velocity
        if self.profile_kind is ProfileKind.PLUG:
            return self.mean_velocity
        eta = np.linspace(0.0, 1.0, 2001)
        return float(np.max(self.axial_speed(eta * 1.0, 1.0)))


def velocity_at(
    flow: FlowField, geom: LoopGeometry, position: Sequence[float]
) -> np.ndarray:
    """Fluid velocity vector at a point; purely axial by construction."""
    p = np.asarray(position, dtype=float)
    r = float(np.hypot(p[1], p[2]))
    u = float(flow.axial_speed(np.array(r), geom.pipe_radius))
    return np.array([u, 0.0, 0.0])


class ChannelReynolds(NamedTuple):
    value: float
    laminar: bool


def channel_reynolds(
    medium: FluidMedium, geom: LoopGeometry, flow: FlowField
) -> ChannelReynolds:
    """Pipe Reynolds number Re = rho U 2R / mu with a laminar-regime flag."""
    re = (
        medium.density
        * flow.mean_velocity
        * 2.0
        * geom.pipe_radius
        / medium.dynamic_viscosity
    )
    return ChannelReynolds(value=re, laminar=re <= LAMINAR_REYNOLDS_LIMIT)


def flow_rate(flow: FlowField, geom: LoopGeometry) -> float:
    """Volumetric flow rate Q = U_mean * pi R^2."""
    return flow.mean_velocity * np.pi * geom.pipe_radius**2


def quadrature_flow_rate(flow: FlowField, geom: LoopGeometry, n: int = 4096) -> float:
    """Cross-check of the profile normalization: integral of u(r) 2 pi r dr
    over the cross-section, by composite trapezoid."""
    r = np.linspace(0.0, geom.pipe_radius, n)
    u = flow.axial_speed(r, geom.pipe_radius)
    return float(np.trapezoid(u * 2.0 * np.pi * r, r))


def load_tabulated_profile(text_or_path) -> Tuple[Tuple[float, float], ...]:
    """Read a two-column (r_over_R, u_over_Umean) CSV with a header row."""
    if hasattr(text_or_path, "read"):
        handle = text_or_path
        rows = list(csv.reader(handle))
    else:
        with open(text_or_path, newline="") as handle:
            rows = list(csv.reader(handle))
    if not rows:
        raise DataError("empty profile CSV")
    header = [c.strip().lower() for c in rows[0]]
    if header[:2] != ["r_over_r", "u_over_umean"]:
        raise DataError(
            "profile CSV must start with header 'r_over_R,u_over_Umean'"
        )
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            samples.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError) as exc:
            raise DataError(f"profile CSV line {lineno}: {exc}") from exc
    return tuple(samples)


def profile_to_csv(samples: Sequence[Tuple[float, float]]) -> str:
    out = io.StringIO()
    out.write("r_over_R,u_over_Umean\n")
    for r, u in samples:
        out.write(f"{r!r},{u!r}\n")
    return out.getvalue()
