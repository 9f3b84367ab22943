"""Simulation engine: injection, time stepping, walls, detection, recirculation.

Particles are stored struct-of-arrays and advanced with the vectorized
exponential update from `bubbledyn`. Randomness is counter-based
(Philox) and keyed on (seed, stream, step), with per-particle rows
indexed by particle id, so results are bit-identical for a fixed
(scenario, seed) regardless of worker count.
"""

from __future__ import annotations

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import bubbledyn
from .bubbledyn import (
    BubbleSpecies,
    IntegratorConfig,
    IntegratorMode,
    ParticleState,
    Status,
)
from .errors import ConfigError, NumericsError
from .fluidmodel import FlowField, FluidMedium, LoopGeometry

# Philox stream tags; the key is (seed, tag).
_STREAM_INJECTION = 1
_STREAM_BROWNIAN = 2
_STREAM_REMIX = 3

_STATUS_IN_FLIGHT = 0
_STATUS_ABSORBED = 1
_STATUS_EXPIRED = 2

_STATUS_ENUM = {
    _STATUS_IN_FLIGHT: Status.IN_FLIGHT,
    _STATUS_ABSORBED: Status.ABSORBED,
    _STATUS_EXPIRED: Status.EXPIRED,
}

_PARALLEL_THRESHOLD = 4096  # particles below this are not worth threading


class InitialVelocity(Enum):
    LOCAL_FLUID = "local_fluid"
    ZERO = "zero"


@dataclass(frozen=True)
class InjectionSchedule:
    """Transmitter abstraction: timed bursts released over a disk at x=0."""

    events: Tuple[Tuple[float, int], ...]
    release_radius_fraction: float = 1.0
    initial_velocity_rule: InitialVelocity = InitialVelocity.LOCAL_FLUID

    def __post_init__(self):
        problems = []
        times = [t for t, _ in self.events]
        if any(t < 0 for t in times):
            problems.append("injection.events times must be >= 0")
        if any(b < a for a, b in zip(times, times[1:])):
            problems.append("injection.events times must be non-decreasing")
        if any(c <= 0 for _, c in self.events):
            problems.append("injection.events counts must be > 0")
        if not 0 <= self.release_radius_fraction <= 1:
            problems.append("injection.release_radius_fraction must be in [0, 1]")
        if problems:
            raise ConfigError(problems)

    @property
    def total_count(self) -> int:
        return sum(c for _, c in self.events)


class DetectorMode(Enum):
    TRANSPARENT = "transparent"
    ABSORBING = "absorbing"


@dataclass(frozen=True)
class DetectorSpec:
    axial_position: float  # m, equals the geometry's detector distance
    mode: DetectorMode = DetectorMode.TRANSPARENT
    max_passes_recorded: int = 100

    def __post_init__(self):
        problems = []
        if not self.axial_position > 0:
            problems.append("detector.axial_position must be > 0")
        if self.max_passes_recorded < 1:
            problems.append("detector.max_passes_recorded must be >= 1")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class RecirculationSpec:
    enabled: bool = True
    reservoir_delay: float = 0.0
    remix_radial: bool = True

    def __post_init__(self):
        if self.reservoir_delay < 0:
            raise ConfigError("recirculation.reservoir_delay must be >= 0")


@dataclass(frozen=True)
class ArrivalEvent:
    particle_id: int
    time: float
    pass_index: int
    radial_position: float


@dataclass(frozen=True)
class Scenario:
    """Everything one run needs; validated as a whole before running."""

    medium: FluidMedium
    geometry: LoopGeometry
    flow: FlowField
    species: BubbleSpecies
    injection: InjectionSchedule
    detector: DetectorSpec
    recirculation: RecirculationSpec
    integrator: IntegratorConfig
    duration: float = 30.0
    max_particles: int = 1_000_000
    trajectory_stride: int = 100

    def validate(self) -> List[str]:
        """Cross-field checks; per-type invariants hold by construction."""
        problems = []
        if not self.duration > 0:
            problems.append("run.duration must be > 0")
        if not 0 < self.detector.axial_position < self.geometry.loop_length:
            problems.append(
                "detector.axial_position must lie in (0, geometry.loop_length)"
            )
        n = self.injection.total_count
        if n > self.max_particles:
            problems.append(
                f"injection schedule creates {n} particles, above the cap "
                f"{self.max_particles}"
            )
        if self.trajectory_stride < 1:
            problems.append("run.trajectory_stride must be >= 1")
        d_max = (
            self.species.diameter
            if self.species.distribution is bubbledyn.Distribution.MONODISPERSE
            else self.species.diameter_range[1]
        )
        if d_max / 2 >= self.geometry.pipe_radius:
            problems.append("species diameters must be smaller than the pipe radius")
        n_steps = math.ceil(self.duration / self.integrator.dt - 1e-9)
        if n_steps > 50_000_000:
            problems.append(
                f"run.duration / integrator.dt = {n_steps} steps exceeds the guard "
                "of 5e7; raise dt or shorten the run"
            )
        return problems


def default_dt(
    geometry: LoopGeometry, flow: FlowField, symbol_duration: Optional[float] = None
) -> float:
    """Step-size rule: bound cross-channel displacement per step and, when
    modulation is active, guarantee >= 50 samples per symbol."""
    u_max = max(flow.max_speed, 1e-12)
    dt = 0.05 * geometry.pipe_radius / u_max
    if symbol_duration is not None:
        dt = min(dt, symbol_duration / 50.0)
    return dt


@dataclass
class SimulationResult:
    arrival_ids: np.ndarray
    arrival_times: np.ndarray
    arrival_passes: np.ndarray
    arrival_radii: np.ndarray
    injected_count: int
    in_flight_count: int
    absorbed_count: int
    expired_count: int
    scenario: Scenario
    seed: int
    final_positions: np.ndarray = None
    final_velocities: np.ndarray = None
    final_statuses: np.ndarray = None
    final_pass_counts: np.ndarray = None
    diameters: np.ndarray = None
    wall_clock_stats: dict = field(default_factory=dict)

    @property
    def arrivals(self) -> List[ArrivalEvent]:
        return list(self.events())

    def events(self) -> Iterator[ArrivalEvent]:
        for pid, t, p, r in zip(
            self.arrival_ids, self.arrival_times, self.arrival_passes, self.arrival_radii
        ):
            yield ArrivalEvent(int(pid), float(t), int(p), float(r))

    def first_pass_times(self) -> np.ndarray:
        return self.arrival_times[self.arrival_passes == 1]


def _stream(seed: int, tag: int, counter: int = 0) -> np.random.Generator:
    # the per-step index sits in the second counter word so consecutive
    # steps draw from disjoint counter ranges (2^64 blocks apart)
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, tag], dtype=np.uint64),
                         counter=np.array([0, counter, 0, 0], dtype=np.uint64))
    )


def run(
    scenario: Scenario,
    seed: int,
    workers: int = 1,
    trajectory_sink=None,
) -> SimulationResult:
    """Execute one transport simulation.

    Deterministic for a fixed (scenario, seed) for any worker count.
    `trajectory_sink`, when given, receives CSV rows
    (particle_id,t,x,y,z,pass_count) every `trajectory_stride` steps.
    """
    problems = scenario.validate()
    if problems:
        raise ConfigError(problems)

    t_start = _time.perf_counter()
    geom = scenario.geometry
    flow = scenario.flow
    medium = scenario.medium
    cfg = scenario.integrator
    det = scenario.detector
    recirc = scenario.recirculation
    dt = cfg.dt
    n_steps = math.ceil(scenario.duration / dt - 1e-9)
    radius = geom.pipe_radius
    l_det = det.axial_position
    l_loop = geom.loop_length

    # --- injection: build the whole population up front, in event order ---
    inj = scenario.injection
    n = inj.total_count
    inj_rng = _stream(seed, _STREAM_INJECTION)
    t_inject = np.concatenate(
        [np.full(c, t) for t, c in inj.events]
    ) if n else np.empty(0)
    diameters = scenario.species.sample_diameters(n, inj_rng)
    disk_r = inj.release_radius_fraction * radius * np.sqrt(inj_rng.random(n))
    disk_r = np.minimum(disk_r, np.maximum(radius - diameters / 2, 0.0))
    theta = 2.0 * np.pi * inj_rng.random(n)
    positions = np.zeros((n, 3))
    positions[:, 1] = disk_r * np.cos(theta)
    positions[:, 2] = disk_r * np.sin(theta)
    velocities = np.zeros((n, 3))
    if inj.initial_velocity_rule is InitialVelocity.LOCAL_FLUID:
        velocities[:, 0] = flow.axial_speed(disk_r, radius)
    start_step = np.ceil(t_inject / dt - 1e-9).astype(np.int64)

    # --- per-particle constants ---
    tau = bubbledyn.relaxation_time(
        medium, scenario.species.gas_density, diameters, cfg.added_mass_coefficient
    )
    gvec = geom.gravity_vector
    g_mag = float(np.linalg.norm(gvec))
    rise_vec = np.zeros((n, 3))
    if g_mag > 0 and n:
        v_rise = bubbledyn.terminal_rise_velocity(
            medium, scenario.species.gas_density, diameters, g_mag
        )
        rise_vec = np.asarray(v_rise)[:, None] * (-gvec / g_mag)[None, :]
    if cfg.mode is IntegratorMode.EQUILIBRIUM:
        decay = np.zeros(n)
    else:
        with np.errstate(divide="ignore"):
            decay = np.exp(-np.where(tau > 0, dt / np.maximum(tau, 1e-300), np.inf))
    tau_eff = tau * (1.0 - decay)
    sqrt_2ddt = None
    if cfg.brownian_enabled:
        sqrt_2ddt = np.sqrt(2.0 * bubbledyn.brownian_diffusivity(medium, diameters) * dt)
    wall_margin = radius - diameters / 2

    status = np.full(n, _STATUS_IN_FLIGHT, dtype=np.int8)
    pass_count = np.zeros(n, dtype=np.int64)
    hold_until = np.full(n, -np.inf)

    ev_ids: List[np.ndarray] = []
    ev_times: List[np.ndarray] = []
    ev_passes: List[np.ndarray] = []
    ev_radii: List[np.ndarray] = []

    pool = None
    if workers > 1:
        pool = ThreadPoolExecutor(max_workers=workers)

    def advance(idx: np.ndarray, noise: Optional[np.ndarray]):
        """Pure kinematics for a particle subset; returns (x0, r0, new_pos, v_new)."""
        pos = positions[idx]
        vel = velocities[idx]
        r0 = np.hypot(pos[:, 1], pos[:, 2])
        u_eq = rise_vec[idx].copy()
        u_eq[:, 0] += flow.axial_speed(r0, radius)
        dv = vel - u_eq
        v_new = u_eq + dv * decay[idx, None]
        new_pos = pos + u_eq * dt + dv * tau_eff[idx, None]
        if noise is not None:
            new_pos = new_pos + sqrt_2ddt[idx, None] * noise[idx]
        # wall: clamp radius to R - d/2, kill the radial velocity component
        r_new = np.hypot(new_pos[:, 1], new_pos[:, 2])
        over = r_new > wall_margin[idx]
        if np.any(over):
            oi = np.flatnonzero(over)
            scale = wall_margin[idx][oi] / r_new[oi]
            new_pos[oi, 1] *= scale
            new_pos[oi, 2] *= scale
            rr = np.maximum(r_new[oi] * scale, 1e-300)
            ry = new_pos[oi, 1] / rr
            rz = new_pos[oi, 2] / rr
            v_r = v_new[oi, 1] * ry + v_new[oi, 2] * rz
            v_new[oi, 1] -= v_r * ry
            v_new[oi, 2] -= v_r * rz
            r_new[oi] = wall_margin[idx][oi]
        return pos[:, 0].copy(), r0, new_pos, v_new

    try:
        for k in range(n_steps):
            t0 = k * dt
            active = (
                (status == _STATUS_IN_FLIGHT)
                & (start_step <= k)
                & (hold_until <= t0 + 1e-12 * max(t0, dt))
            )
            idx = np.flatnonzero(active)
            if idx.size == 0:
                continue
            noise = None
            if cfg.brownian_enabled:
                noise = _stream(seed, _STREAM_BROWNIAN, counter=k).standard_normal((n, 3))

            if pool is not None and idx.size >= _PARALLEL_THRESHOLD:
                chunks = np.array_split(idx, workers)
                parts = list(pool.map(lambda c: advance(c, noise), chunks))
                x0 = np.concatenate([p[0] for p in parts])
                r0 = np.concatenate([p[1] for p in parts])
                new_pos = np.concatenate([p[2] for p in parts])
                v_new = np.concatenate([p[3] for p in parts])
            else:
                x0, r0, new_pos, v_new = advance(idx, noise)

            if not np.all(np.isfinite(new_pos)):
                bad = idx[~np.all(np.isfinite(new_pos), axis=1)][0]
                raise NumericsError(
                    f"non-finite position for particle {bad} at step {k}"
                )

            x1 = new_pos[:, 0]
            r1 = np.hypot(new_pos[:, 1], new_pos[:, 2])

            # detector crossing before any wrap (tie-break x0 < plane <= x1)
            cross = (x0 < l_det) & (x1 >= l_det)
            if np.any(cross):
                ci = np.flatnonzero(cross)
                frac = (l_det - x0[ci]) / (x1[ci] - x0[ci])
                t_ev = t0 + frac * dt
                keep = t_ev <= scenario.duration
                ci, frac, t_ev = ci[keep], frac[keep], t_ev[keep]
                p_idx = pass_count[idx[ci]] + 1
                rec = p_idx <= det.max_passes_recorded
                ev_ids.append(idx[ci[rec]])
                ev_times.append(t_ev[rec])
                ev_passes.append(p_idx[rec])
                ev_radii.append(r0[ci[rec]] + frac[rec] * (r1[ci[rec]] - r0[ci[rec]]))
                if det.mode is DetectorMode.ABSORBING:
                    status[idx[ci]] = _STATUS_ABSORBED

            # loop wrap / expiry
            wrapped = x1 >= l_loop
            if det.mode is DetectorMode.ABSORBING:
                wrapped &= status[idx] == _STATUS_IN_FLIGHT
            if np.any(wrapped):
                wi = np.flatnonzero(wrapped)
                gi = idx[wi]
                if not recirc.enabled:
                    status[gi] = _STATUS_EXPIRED
                else:
                    t_wrap = t0 + dt * (l_loop - x0[wi]) / (x1[wi] - x0[wi])
                    new_pos[wi, 0] -= l_loop
                    pass_count[gi] += 1
                    reset_velocity = False
                    if recirc.remix_radial:
                        u2 = _stream(seed, _STREAM_REMIX, counter=k).random((n, 2))
                        rr = np.minimum(
                            radius * np.sqrt(u2[gi, 0]), wall_margin[gi]
                        )
                        th = 2.0 * np.pi * u2[gi, 1]
                        new_pos[wi, 1] = rr * np.cos(th)
                        new_pos[wi, 2] = rr * np.sin(th)
                        reset_velocity = True
                    if recirc.reservoir_delay > 0:
                        hold_until[gi] = t_wrap + recirc.reservoir_delay
                        reset_velocity = True
                    if reset_velocity:
                        v_new[wi] = 0.0
                        if inj.initial_velocity_rule is InitialVelocity.LOCAL_FLUID:
                            rw = np.hypot(new_pos[wi, 1], new_pos[wi, 2])
                            v_new[wi, 0] = flow.axial_speed(rw, radius)
                    # a large overshoot could cross the detector again
                    # within the same step on the new pass
                    cross2 = new_pos[wi, 0] >= l_det
                    if np.any(cross2):
                        c2 = wi[cross2]
                        over = np.maximum(new_pos[c2, 0], 1e-300)
                        t_ev2 = t_wrap[cross2] + (t0 + dt - t_wrap[cross2]) * l_det / over
                        p_idx2 = pass_count[idx[c2]] + 1
                        rec2 = (p_idx2 <= det.max_passes_recorded) & (
                            t_ev2 <= scenario.duration
                        )
                        ev_ids.append(idx[c2[rec2]])
                        ev_times.append(t_ev2[rec2])
                        ev_passes.append(p_idx2[rec2])
                        ev_radii.append(np.hypot(new_pos[c2[rec2], 1], new_pos[c2[rec2], 2]))
                        if det.mode is DetectorMode.ABSORBING:
                            status[idx[c2]] = _STATUS_ABSORBED

            positions[idx] = new_pos
            velocities[idx] = v_new

            if trajectory_sink is not None and k % scenario.trajectory_stride == 0:
                t1 = t0 + dt
                for j, gid in enumerate(idx):
                    trajectory_sink.write(
                        f"{gid},{t1!r},{float(new_pos[j, 0])!r},"
                        f"{float(new_pos[j, 1])!r},{float(new_pos[j, 2])!r},"
                        f"{pass_count[gid]}\n"
                    )
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    if ev_ids:
        a_ids = np.concatenate(ev_ids)
        a_times = np.concatenate(ev_times)
        a_passes = np.concatenate(ev_passes)
        a_radii = np.concatenate(ev_radii)
        order = np.lexsort((a_ids, a_times))
        a_ids, a_times = a_ids[order], a_times[order]
        a_passes, a_radii = a_passes[order], a_radii[order]
    else:
        a_ids = np.empty(0, dtype=np.int64)
        a_times = np.empty(0)
        a_passes = np.empty(0, dtype=np.int64)
        a_radii = np.empty(0)

    return SimulationResult(
        arrival_ids=a_ids,
        arrival_times=a_times,
        arrival_passes=a_passes,
        arrival_radii=a_radii,
        injected_count=n,
        in_flight_count=int(np.sum(status == _STATUS_IN_FLIGHT)),
        absorbed_count=int(np.sum(status == _STATUS_ABSORBED)),
        expired_count=int(np.sum(status == _STATUS_EXPIRED)),
        scenario=scenario,
        seed=seed,
        final_positions=positions,
        final_velocities=velocities,
        final_statuses=np.array([_STATUS_ENUM[s] for s in status], dtype=object),
        final_pass_counts=pass_count,
        diameters=diameters,
        wall_clock_stats={
            "elapsed_s": _time.perf_counter() - t_start,
            "steps": n_steps,
            "particles": n,
            "workers": workers,
        },
    )


# --- single-particle reference operations -------------------------------


def detect_crossing(
    p_before: ParticleState,
    p_after: ParticleState,
    det: DetectorSpec,
    t_before: float,
    t_after: float,
) -> Optional[ArrivalEvent]:
    """Forward crossing of the detector plane with linear time interpolation.

    Tie-break: the crossing counts when x_before < plane <= x_after.
    """
    x0 = p_before.position[0]
    x1 = p_after.position[0]
    if not (x0 < det.axial_position <= x1):
        return None
    frac = (det.axial_position - x0) / (x1 - x0)
    r0 = math.hypot(p_before.position[1], p_before.position[2])
    r1 = math.hypot(p_after.position[1], p_after.position[2])
    return ArrivalEvent(
        particle_id=p_before.id,
        time=t_before + frac * (t_after - t_before),
        pass_index=p_before.pass_count + 1,
        radial_position=r0 + frac * (r1 - r0),
    )


def apply_wall(p: ParticleState, geom: LoopGeometry) -> ParticleState:
    """Slide condition: clamp the radius to R - d/2 and zero the radial
    velocity component; axial and tangential components survive."""
    x, y, z = p.position
    r = math.hypot(y, z)
    margin = geom.pipe_radius - p.diameter / 2
    if r <= margin:
        return p
    scale = margin / r
    y2, z2 = y * scale, z * scale
    ry, rz = (y2 / margin, z2 / margin) if margin > 0 else (0.0, 0.0)
    vx, vy, vz = p.velocity
    v_r = vy * ry + vz * rz
    return replace(
        p,
        position=(x, y2, z2),
        velocity=(vx, vy - v_r * ry, vz - v_r * rz),
    )


def apply_recirculation(
    p: ParticleState,
    geom: LoopGeometry,
    spec: RecirculationSpec,
    rng_draws: Sequence[float] = (0.0, 0.0),
) -> ParticleState:
    """Wrap a particle that reached the end of the loop.

    With recirculation disabled the particle expires instead. With
    remix_radial the radial position is re-sampled area-uniformly,
    r = R * sqrt(U), from the two uniform draws (radius, angle).
    """
    x, y, z = p.position
    if x < geom.loop_length:
        raise ConfigError(
            "apply_recirculation called before the particle reached loop_length"
        )
    if not spec.enabled:
        return replace(p, status=Status.EXPIRED)
    x -= geom.loop_length
    if spec.remix_radial:
        margin = geom.pipe_radius - p.diameter / 2
        r = min(geom.pipe_radius * math.sqrt(rng_draws[0]), margin)
        th = 2.0 * math.pi * rng_draws[1]
        y, z = r * math.cos(th), r * math.sin(th)
    return replace(p, position=(x, y, z), pass_count=p.pass_count + 1)
