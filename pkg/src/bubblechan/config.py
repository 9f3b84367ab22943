"""Config parsing: TOML tree -> validated Scenario bundle.

Every key has a shipped default; a config file overrides defaults,
and dotted `--set section.key=value` overrides are applied after the
file and before validation. Unknown keys are errors, not warnings.
"""

from __future__ import annotations

import copy
import hashlib
import json

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from dataclasses import dataclass
from importlib import resources
from typing import List, Optional, Sequence

from . import fluidmodel, studies
from .bubbledyn import BubbleSpecies, Distribution, IntegratorConfig, IntegratorMode
from .commlink import OokScheme
from .errors import ConfigError
from .fluidmodel import FlowField, FluidMedium, LoopGeometry, ProfileKind
from .transport import (
    DetectorMode,
    DetectorSpec,
    InitialVelocity,
    InjectionSchedule,
    RecirculationSpec,
    Scenario,
    default_dt,
)


def default_config() -> dict:
    """The shipped defaults as a plain dict tree."""
    text = resources.files("bubblechan.data").joinpath("default.toml").read_text()
    return tomllib.loads(text)


def _merge(base: dict, override: dict, prefix: str, problems: List[str]) -> None:
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            problems.append(f"unknown key: {dotted}")
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                problems.append(f"{dotted} must be a table")
            else:
                _merge(base[key], value, dotted + ".", problems)
        else:
            base[key] = value


def parse_config(text: str, overrides: Sequence[str] = ()) -> dict:
    """Parse TOML text over the shipped defaults; reject unknown keys."""
    try:
        user = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    tree = default_config()
    problems: List[str] = []
    _merge(tree, user, "", problems)
    for item in overrides:
        _apply_override(tree, item, problems)
    if problems:
        raise ConfigError(problems)
    return tree


def _apply_override(tree: dict, item: str, problems: List[str]) -> None:
    if "=" not in item:
        problems.append(f"override {item!r} is not of the form key=value")
        return
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            problems.append(f"unknown key: {key}")
            return
        node = node[part]
    leaf = parts[-1]
    if leaf not in node or isinstance(node[leaf], dict):
        problems.append(f"unknown key: {key}")
        return
    node[leaf] = value


def config_hash(tree: dict) -> str:
    """Stable digest of the fully resolved config."""
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


_ENUMS = {
    "flow.profile": {k.value: k for k in ProfileKind},
    "species.distribution": {k.value: k for k in Distribution},
    "injection.initial_velocity": {k.value: k for k in InitialVelocity},
    "detector.mode": {k.value: k for k in DetectorMode},
    "integrator.mode": {
        "exponential": IntegratorMode.EXPONENTIAL_DRAG,
        "equilibrium": IntegratorMode.EQUILIBRIUM,
    },
}


def _enum(tree: dict, dotted: str, problems: List[str]):
    section, key = dotted.split(".")
    raw = tree[section][key]
    mapping = _ENUMS[dotted]
    if raw not in mapping:
        problems.append(
            f"{dotted} must be one of {sorted(mapping)} (got {raw!r})"
        )
        return next(iter(mapping.values()))
    return mapping[raw]


@dataclass(frozen=True)
class CommSettings:
    scheme: OokScheme
    threshold: int
    window_offset: Optional[float]  # None -> auto
    window_width: Optional[float]
    bin_width: Optional[float]
    n_bits: int


@dataclass(frozen=True)
class StudySettings:
    presets: studies.CasePresets
    reference_circulation_period: float
    comparison_seeds: int


@dataclass(frozen=True)
class Bundle:
    """Everything the CLI commands consume, plus the resolved tree."""

    scenario: Scenario
    comm: CommSettings
    study: StudySettings
    trajectory_dump: bool
    tree: dict

    @property
    def hash(self) -> str:
        return config_hash(self.tree)


def build_bundle(tree: dict) -> Bundle:
    """Turn a parsed tree into validated domain objects, collecting every
    violated field instead of stopping at the first."""
    tree = copy.deepcopy(tree)
    problems: List[str] = []

    def attempt(label, factory):
        try:
            return factory()
        except ConfigError as exc:
            problems.extend(exc.problems)
        except (TypeError, ValueError) as exc:
            problems.append(f"{label}: {exc}")
        return None

    m = tree["medium"]
    medium = attempt(
        "medium",
        lambda: FluidMedium(m["density"], m["dynamic_viscosity"], m["temperature"]),
    )
    g = tree["geometry"]
    geometry = attempt(
        "geometry",
        lambda: LoopGeometry(
            pipe_radius=g["pipe_radius"],
            detector_distance=g["detector_distance"],
            loop_length=g["loop_length"],
            gravity=tuple(g["gravity"]),
        ),
    )
    f = tree["flow"]
    profile = _enum(tree, "flow.profile", problems)
    table = None
    if profile is ProfileKind.TABULATED:
        if not f["profile_csv"]:
            problems.append("flow.profile_csv required for the tabulated profile")
        else:
            table = attempt(
                "flow.profile_csv",
                lambda: fluidmodel.load_tabulated_profile(f["profile_csv"]),
            )
    flow = attempt(
        "flow",
        lambda: FlowField(profile, f["mean_velocity"], tabulated_profile=table),
    )
    s = tree["species"]
    species = attempt(
        "species",
        lambda: BubbleSpecies(
            gas_density=s["gas_density"],
            distribution=_enum(tree, "species.distribution", problems),
            diameter=s["diameter"],
            median_diameter=s["median_diameter"],
            geometric_sigma=s["geometric_sigma"],
            diameter_range=(s["diameter_min"], s["diameter_max"]),
        ),
    )
    i = tree["injection"]
    injection = attempt(
        "injection",
        lambda: InjectionSchedule(
            events=tuple((float(t), int(c)) for t, c in i["events"]),
            release_radius_fraction=i["release_radius_fraction"],
            initial_velocity_rule=_enum(tree, "injection.initial_velocity", problems),
        ),
    )
    d = tree["detector"]
    detector = attempt(
        "detector",
        lambda: DetectorSpec(
            axial_position=g["detector_distance"],
            mode=_enum(tree, "detector.mode", problems),
            max_passes_recorded=d["max_passes"],
        ),
    )
    r = tree["recirculation"]
    recirculation = attempt(
        "recirculation",
        lambda: RecirculationSpec(
            enabled=r["enabled"],
            reservoir_delay=r["reservoir_delay"],
            remix_radial=r["remix_radial"],
        ),
    )
    it = tree["integrator"]
    c = tree["comm"]
    dt = it["dt"]
    if dt <= 0 and geometry is not None and flow is not None:
        dt = default_dt(
            geometry, flow,
            symbol_duration=c["symbol_duration"] if c["symbol_duration"] > 0 else None,
        )
    integrator = attempt(
        "integrator",
        lambda: IntegratorConfig(
            mode=_enum(tree, "integrator.mode", problems),
            dt=dt,
            brownian_enabled=it["brownian"],
            added_mass_coefficient=it["added_mass"],
        ),
    )
    run_tbl = tree["run"]
    scenario = None
    if all(
        x is not None
        for x in (medium, geometry, flow, species, injection, detector,
                  recirculation, integrator)
    ):
        scenario = Scenario(
            medium=medium,
            geometry=geometry,
            flow=flow,
            species=species,
            injection=injection,
            detector=detector,
            recirculation=recirculation,
            integrator=integrator,
            duration=run_tbl["duration"],
            max_particles=int(run_tbl["max_particles"]),
            trajectory_stride=int(run_tbl["trajectory_stride"]),
        )
        problems.extend(scenario.validate())

    comm = attempt(
        "comm",
        lambda: CommSettings(
            scheme=OokScheme(
                symbol_duration=c["symbol_duration"],
                bubbles_per_one=int(c["bubbles_per_one"]),
                guard_bins=int(c["guard_bins"]),
            ),
            threshold=int(c["threshold"]),
            window_offset=c["window_offset"] if c["window_offset"] >= 0 else None,
            window_width=c["window_width"] if c["window_width"] > 0 else None,
            bin_width=c["bin_width"] if c["bin_width"] > 0 else None,
            n_bits=int(c["n_bits"]),
        ),
    )
    st = tree["studies"]
    study = attempt(
        "studies",
        lambda: StudySettings(
            presets=studies.CasePresets(
                media={
                    studies.MediumTag.WATER: FluidMedium(
                        st["media"]["water"]["density"],
                        st["media"]["water"]["dynamic_viscosity"],
                        st["media"]["water"]["temperature"],
                    ),
                    studies.MediumTag.BLOOD_LIKE: FluidMedium(
                        st["media"]["blood_like"]["density"],
                        st["media"]["blood_like"]["dynamic_viscosity"],
                        st["media"]["blood_like"]["temperature"],
                    ),
                },
                velocities={
                    studies.VelocityTag.HIGH: st["velocity_high"],
                    studies.VelocityTag.PHYSIOLOGICAL: st["velocity_physiological"],
                },
            ),
            reference_circulation_period=st["reference_circulation_period"],
            comparison_seeds=int(st["comparison_seeds"]),
        ),
    )
    if study is not None and not study.reference_circulation_period > 0:
        problems.append("studies.reference_circulation_period must be > 0")

    if problems:
        raise ConfigError(sorted(set(problems)))
    # echo the resolved dt so the hash pins the actually used step
    tree["integrator"]["dt"] = scenario.integrator.dt
    return Bundle(
        scenario=scenario,
        comm=comm,
        study=study,
        trajectory_dump=bool(run_tbl["trajectory_dump"]),
        tree=tree,
    )


def load_bundle(text: str, overrides: Sequence[str] = ()) -> Bundle:
    return build_bundle(parse_config(text, overrides))
