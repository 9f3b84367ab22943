"""Microbubble force models and the stiff-safe velocity update.

The bubble relaxation time (~1e-7 s) is far below transport-relevant
time steps (~1e-4..1e-2 s), so the velocity update is the exact
exponential solution of the linearized drag equation rather than an
explicit scheme. All functions broadcast over numpy arrays so the
transport engine can apply them to whole particle populations; the
scalar `step_particle` wraps the same arithmetic for a single bubble.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Tuple

import numpy as np

from .errors import ConfigError, NumericsError, UsageError
from .fluidmodel import FluidMedium

BOLTZMANN = 1.380649e-23  # J/K

MAX_DIAMETER = 100e-6  # m, upper sanity bound for microbubbles


class Distribution(Enum):
    MONODISPERSE = "monodisperse"
    LOGNORMAL = "lognormal"


@dataclass(frozen=True)
class BubbleSpecies:
    """Gas density plus the injected diameter distribution.

    SonoVue-like defaults live in the shipped config (median 2.5 um,
    geometric sigma 1.6, SF6-like gas density 6.6 kg/m^3).
    """

    gas_density: float  # kg/m^3
    distribution: Distribution = Distribution.MONODISPERSE
    diameter: float = 2.5e-6  # m, monodisperse
    median_diameter: float = 2.5e-6  # m, lognormal median
    geometric_sigma: float = 1.6
    diameter_range: Tuple[float, float] = (0.5e-6, 10e-6)  # truncation, m

    def __post_init__(self):
        problems = []
        if not self.gas_density >= 0:
            problems.append("species.gas_density must be >= 0")
        for name, d in (
            ("diameter", self.diameter),
            ("median_diameter", self.median_diameter),
        ):
            if not 0 < d <= MAX_DIAMETER:
                problems.append(f"species.{name} must be in (0, 100e-6] m")
        d_min, d_max = self.diameter_range
        if not (0 < d_min < d_max <= MAX_DIAMETER):
            problems.append(
                "species.diameter_range must satisfy 0 < d_min < d_max <= 100e-6"
            )
        if not self.geometric_sigma >= 1:
            problems.append("species.geometric_sigma must be >= 1")
        if problems:
            raise ConfigError(problems)

    def sample_diameters(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n diameters; lognormal samples are truncated by rejection."""
        if self.distribution is Distribution.MONODISPERSE:
            return np.full(n, self.diameter)
        d_min, d_max = self.diameter_range
        mu = np.log(self.median_diameter)
        sigma = np.log(self.geometric_sigma)
        out = np.empty(n)
        filled = 0
        while filled < n:
            draw = rng.lognormal(mu, sigma, size=max(n - filled, 16))
            keep = draw[(draw >= d_min) & (draw <= d_max)]
            take = min(len(keep), n - filled)
            out[filled : filled + take] = keep[:take]
            filled += take
        return out


class Status(Enum):
    IN_FLIGHT = "in_flight"
    ABSORBED = "absorbed"
    EXPIRED = "expired"


@dataclass(frozen=True)
class ParticleState:
    """One microbubble parcel."""

    id: int
    position: Tuple[float, float, float]
    velocity: Tuple[float, float, float]
    diameter: float
    pass_count: int = 0
    status: Status = Status.IN_FLIGHT

    def __post_init__(self):
        if not self.diameter > 0:
            raise ConfigError("particle diameter must be > 0")
        if self.pass_count < 0:
            raise ConfigError("particle pass_count must be >= 0")


class IntegratorMode(Enum):
    EXPONENTIAL_DRAG = "exponential"
    EQUILIBRIUM = "equilibrium"


@dataclass(frozen=True)
class IntegratorConfig:
    mode: IntegratorMode = IntegratorMode.EXPONENTIAL_DRAG
    dt: float = 1e-3  # s
    brownian_enabled: bool = False
    added_mass_coefficient: float = 0.5

    def __post_init__(self):
        problems = []
        if not self.dt > 0:
            problems.append("integrator.dt must be > 0")
        if not 0 <= self.added_mass_coefficient <= 1:
            problems.append("integrator.added_mass_coefficient must be in [0, 1]")
        if problems:
            raise ConfigError(problems)


def particle_reynolds(medium: FluidMedium, diameter, slip_speed):
    """Re_p = rho_f |u - v| d / mu."""
    return medium.density * np.asarray(slip_speed) * diameter / medium.dynamic_viscosity


def drag_multiplier(re_p):
    """Schiller-Naumann correction to Stokes drag.

    phi = 1 + 0.15 Re^0.687 up to Re = 1000, then the constant-C_D
    branch phi = 0.44 Re / 24. Drag is written as 3 pi mu d (u - v) phi
    so the Stokes limit needs no division by Re.
    """
    re_p = np.asarray(re_p, dtype=float)
    if np.any(re_p < 0):
        raise ValueError("particle Reynolds number must be >= 0")
    low = 1.0 + 0.15 * re_p**0.687
    high = 0.44 * re_p / 24.0
    out = np.where(re_p <= 1000.0, low, high)
    return out if out.ndim else float(out)


def drag_force(medium: FluidMedium, p: ParticleState, u_fluid) -> np.ndarray:
    """Quasi-steady drag 3 pi mu d (u - v) phi(Re_p)."""
    slip = np.asarray(u_fluid, dtype=float) - np.asarray(p.velocity, dtype=float)
    re_p = particle_reynolds(medium, p.diameter, np.linalg.norm(slip))
    return 3.0 * np.pi * medium.dynamic_viscosity * p.diameter * slip * drag_multiplier(re_p)


def net_weight_force(medium: FluidMedium, gas_density, diameter, gravity) -> np.ndarray:
    """Combined gravity + buoyancy (rho_p - rho_f) V g."""
    volume = np.pi * np.asarray(diameter, dtype=float) ** 3 / 6.0
    return (gas_density - medium.density) * volume * np.asarray(gravity, dtype=float)


def relaxation_time(medium: FluidMedium, gas_density, diameter, added_mass=0.5):
    """Added-mass-corrected response time (rho_p + C_am rho_f) d^2 / (18 mu)."""
    return (
        (gas_density + added_mass * medium.density)
        * np.asarray(diameter, dtype=float) ** 2
        / (18.0 * medium.dynamic_viscosity)
    )


def terminal_rise_velocity(
    medium: FluidMedium,
    gas_density,
    diameter,
    gravity_magnitude: float = 9.81,
    max_iter: int = 20,
    rel_tol: float = 1e-10,
):
    """Signed terminal velocity from the drag/buoyancy fixed point.

    Positive for rising bubbles (rho_p < rho_f), negative for settling
    particles. Seeded by the Stokes balance, then iterated with the
    Schiller-Naumann correction; microbubbles converge in one step.
    """
    d = np.asarray(diameter, dtype=float)
    v0 = (
        (medium.density - gas_density)
        * gravity_magnitude
        * d**2
        / (18.0 * medium.dynamic_viscosity)
    )
    v = np.asarray(v0, dtype=float)
    if np.all(v0 == 0):
        return v0 if np.ndim(diameter) else 0.0
    for _ in range(max_iter):
        phi = drag_multiplier(particle_reynolds(medium, d, np.abs(v)))
        v_next = v0 / phi
        if np.all(np.abs(v_next - v) <= rel_tol * np.maximum(np.abs(v_next), 1e-300)):
            return v_next if np.ndim(diameter) else float(v_next)
        v = v_next
    raise NumericsError(
        f"terminal velocity fixed point did not converge in {max_iter} iterations "
        f"(d={diameter!r}, last v={v!r})"
    )


def brownian_diffusivity(medium: FluidMedium, diameter):
    """Stokes-Einstein diffusivity k_B T / (3 pi mu d)."""
    return BOLTZMANN * medium.temperature / (
        3.0 * np.pi * medium.dynamic_viscosity * np.asarray(diameter, dtype=float)
    )


def exponential_step_arrays(
    position: np.ndarray,
    velocity: np.ndarray,
    u_eq: np.ndarray,
    tau: np.ndarray,
    dt: float,
    equilibrium: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized stiff-safe update shared by the engine and step_particle.

    v(t+dt) = u_eq + (v - u_eq) exp(-dt/tau); the position uses the exact
    integral of that exponential. tau = 0 degenerates to the equilibrium
    update. Shapes: position/velocity/u_eq (n, 3), tau (n,).
    """
    tau = np.asarray(tau, dtype=float)
    if equilibrium:
        decay = np.zeros_like(tau)
    else:
        with np.errstate(divide="ignore"):
            decay = np.exp(-np.where(tau > 0, dt / np.maximum(tau, 1e-300), np.inf))
    dv = velocity - u_eq
    v_new = u_eq + dv * decay[:, None]
    x_new = position + u_eq * dt + dv * (tau * (1.0 - decay))[:, None]
    return x_new, v_new


def step_particle(
    p: ParticleState,
    u_fluid,
    medium: FluidMedium,
    species: BubbleSpecies,
    cfg: IntegratorConfig,
    noise=None,
    gravity=(0.0, 0.0, 0.0),
) -> ParticleState:
    """Advance one in-flight bubble by dt in a locally uniform flow.

    The equilibrium velocity is the local fluid velocity plus the
    terminal rise vector for the given gravity; Brownian displacement
    sqrt(2 D dt) * noise is added per axis when enabled.
    """
    if p.status is not Status.IN_FLIGHT:
        raise UsageError(f"particle {p.id} is not in flight ({p.status.value})")
    pos = np.asarray(p.position, dtype=float)
    vel = np.asarray(p.velocity, dtype=float)
    u = np.asarray(u_fluid, dtype=float)
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel)) and np.all(np.isfinite(u))):
        raise NumericsError(f"non-finite state for particle {p.id}")

    g = np.asarray(gravity, dtype=float)
    g_mag = float(np.linalg.norm(g))
    if g_mag > 0:
        v_rise = terminal_rise_velocity(medium, species.gas_density, p.diameter, g_mag)
        u_eq = u + v_rise * (-g / g_mag)
    else:
        u_eq = u

    tau = relaxation_time(
        medium, species.gas_density, p.diameter, cfg.added_mass_coefficient
    )
    x_new, v_new = exponential_step_arrays(
        pos[None, :],
        vel[None, :],
        u_eq[None, :],
        np.array([tau]),
        cfg.dt,
        equilibrium=cfg.mode is IntegratorMode.EQUILIBRIUM or tau == 0.0,
    )
    x_new, v_new = x_new[0], v_new[0]

    if cfg.brownian_enabled:
        if noise is None:
            raise UsageError(
                f"Brownian enabled but no noise draws given (particle {p.id})"
            )
        diff = brownian_diffusivity(medium, p.diameter)
        x_new = x_new + np.sqrt(2.0 * diff * cfg.dt) * np.asarray(noise, dtype=float)

    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise NumericsError(f"non-finite update for particle {p.id}")
    return replace(p, position=tuple(x_new), velocity=tuple(v_new))
