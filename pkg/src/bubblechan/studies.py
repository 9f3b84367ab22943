"""Four-case study grid, circulation-timescale analysis and
measured-vs-simulated curve comparison.

Velocity presets and media presets are literature-informed config data,
not measured truths; they live in the shipped config and in
`CasePresets` defaults so updating them is a data change.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from . import commlink
from .errors import ConfigError, DataError
from .fluidmodel import BLOOD_LIKE, WATER, FluidMedium
from .transport import Scenario, SimulationResult, run


class MediumTag(Enum):
    WATER = "water"
    BLOOD_LIKE = "blood_like"


class VelocityTag(Enum):
    HIGH = "high"
    PHYSIOLOGICAL = "physiological"


@dataclass(frozen=True)
class CaseId:
    medium_tag: MediumTag
    velocity_tag: VelocityTag

    @property
    def label(self) -> str:
        return f"{self.medium_tag.value}_{self.velocity_tag.value}"


ALL_CASES = tuple(
    CaseId(m, v) for m in MediumTag for v in VelocityTag
)


@dataclass(frozen=True)
class CasePresets:
    media: Dict[MediumTag, FluidMedium] = field(
        default_factory=lambda: {
            MediumTag.WATER: WATER,
            MediumTag.BLOOD_LIKE: BLOOD_LIKE,
        }
    )
    velocities: Dict[VelocityTag, float] = field(
        default_factory=lambda: {
            VelocityTag.HIGH: 0.1,
            VelocityTag.PHYSIOLOGICAL: 0.01,
        }
    )


@dataclass(frozen=True)
class CaseRecord:
    case: CaseId
    peak_arrival_time: float  # s, median first-pass arrival
    transit_spread: float  # s, IQR of first-pass arrivals
    arrival_fraction: float
    recirculation_echo_times: Tuple[float, ...]  # per-pass median arrivals
    loop_period: float  # s


@dataclass(frozen=True)
class ComparisonReport:
    records: Dict[str, CaseRecord]
    seed: int


@dataclass(frozen=True)
class MeasuredSeries:
    times: np.ndarray
    intensities: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.intensities, dtype=float)
        if len(t) != len(v):
            raise DataError("times and intensities differ in length")
        if len(t) and (not np.all(np.isfinite(t)) or not np.all(np.isfinite(v))):
            raise DataError("non-finite samples in measured series")
        if np.any(np.diff(t) <= 0):
            raise DataError("measured series times must be strictly increasing")


@dataclass(frozen=True)
class FitMetrics:
    nrmse: float
    peak_time_error: float  # s
    best_lag: float  # s, argmax of normalized cross-correlation


def build_case(
    case: CaseId, template: Scenario, presets: Optional[CasePresets] = None
) -> Scenario:
    """Substitute medium and mean velocity; everything else is shared so
    the four cases form a controlled comparison."""
    presets = presets or CasePresets()
    return replace(
        template,
        medium=presets.media[case.medium_tag],
        flow=replace(template.flow, mean_velocity=presets.velocities[case.velocity_tag]),
    )


def summarize_case(case: CaseId, result: SimulationResult) -> CaseRecord:
    first = result.first_pass_times()
    if len(first):
        peak = float(np.median(first))
        q75, q25 = np.percentile(first, [75, 25])
        spread = float(q75 - q25)
    else:
        peak, spread = math.nan, math.nan
    arrived = len(np.unique(result.arrival_ids)) if len(result.arrival_ids) else 0
    fraction = arrived / result.injected_count if result.injected_count else 0.0
    echoes = []
    for p in sorted(set(int(x) for x in result.arrival_passes)):
        echoes.append(float(np.median(result.arrival_times[result.arrival_passes == p])))
    u = result.scenario.flow.mean_velocity
    loop_period = result.scenario.geometry.loop_length / u if u > 0 else math.inf
    return CaseRecord(
        case=case,
        peak_arrival_time=peak,
        transit_spread=spread,
        arrival_fraction=fraction,
        recirculation_echo_times=tuple(echoes),
        loop_period=loop_period,
    )


def run_comparison(
    template: Scenario,
    seed: int,
    presets: Optional[CasePresets] = None,
    workers: int = 1,
) -> ComparisonReport:
    """Run all four cases with one shared seed (paired comparison)."""
    records = {}
    for case in ALL_CASES:
        scenario = build_case(case, template, presets)
        try:
            result = run(scenario, seed, workers=workers)
        except Exception as exc:
            raise type(exc)(f"case {case.label}: {exc}") from exc
        records[case.label] = summarize_case(case, result)
    return ComparisonReport(records=records, seed=seed)


def circulation_analysis(
    report: ComparisonReport, reference_period: float = 60.0
) -> Dict[str, dict]:
    """Loop period vs a configured physiological circulation period, plus
    an echo-spacing consistency check per case."""
    if not reference_period > 0:
        raise ConfigError("studies.reference_circulation_period must be > 0")
    out = {}
    for label, rec in report.records.items():
        spacings = np.diff(rec.recirculation_echo_times)
        out[label] = {
            "loop_period": rec.loop_period,
            "period_ratio": rec.loop_period / reference_period,
            "mean_echo_spacing": float(np.mean(spacings)) if len(spacings) else None,
            "echo_spacing_matches_loop_period": (
                bool(np.allclose(spacings, rec.loop_period, rtol=0.05))
                if len(spacings)
                else None
            ),
        }
    return out


def load_measured(path_or_text, label: str = "") -> MeasuredSeries:
    """Read a measured time series from 't,intensity' CSV."""
    if hasattr(path_or_text, "read"):
        rows = list(csv.reader(path_or_text))
    else:
        with open(path_or_text, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
    if not rows:
        raise DataError("empty measured-series file")
    header = [c.strip().lower() for c in rows[0]]
    if header[:2] != ["t", "intensity"]:
        raise DataError("measured series must start with header 't,intensity'")
    times, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) < 2:
            raise DataError(f"line {lineno}: expected two columns")
        try:
            t, v = float(row[0]), float(row[1])
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from exc
        if not (math.isfinite(t) and math.isfinite(v)):
            raise DataError(f"line {lineno}: non-finite sample")
        times.append(t)
        values.append(v)
    return MeasuredSeries(np.array(times), np.array(values), label=label)


def measured_to_csv(series: MeasuredSeries) -> str:
    out = io.StringIO()
    out.write("t,intensity\n")
    for t, v in zip(series.times, series.intensities):
        out.write(f"{float(t)!r},{float(v)!r}\n")
    return out.getvalue()


def simulated_series_from_cir(cir: commlink.ImpulseResponse) -> MeasuredSeries:
    """Arrival-rate curve (bin centers vs total counts) for comparison."""
    return MeasuredSeries(
        cir.bin_centers, cir.total_counts.astype(float), label="simulated"
    )


def _minmax_normalize(v: np.ndarray) -> np.ndarray:
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi == lo:
        raise DataError("degenerate constant series: min-max normalization undefined")
    return (v - lo) / (hi - lo)


def resample_pair(
    measured: MeasuredSeries, simulated: MeasuredSeries, grid_points: int = 512
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Both curves linearly resampled over the overlap of their time
    supports and min-max normalized to [0, 1]; intensity units drop out."""
    if len(measured.times) < 2 or len(simulated.times) < 2:
        raise DataError("both series need at least two samples")
    t_lo = max(measured.times[0], simulated.times[0])
    t_hi = min(measured.times[-1], simulated.times[-1])
    if not t_hi > t_lo:
        raise DataError("series time supports do not overlap")
    grid = np.linspace(t_lo, t_hi, grid_points)
    a = _minmax_normalize(np.interp(grid, measured.times, measured.intensities))
    b = _minmax_normalize(np.interp(grid, simulated.times, simulated.intensities))
    return grid, a, b


def compare_series(
    measured: MeasuredSeries,
    simulated: MeasuredSeries,
    grid_points: int = 512,
    max_lag: Optional[float] = None,
) -> FitMetrics:
    """Shape-and-timing comparison on a common uniform grid."""
    grid, a, b = resample_pair(measured, simulated, grid_points)
    nrmse = float(np.sqrt(np.mean((a - b) ** 2)))
    dt_grid = grid[1] - grid[0]
    peak_err = float(grid[int(np.argmax(b))] - grid[int(np.argmax(a))])

    if max_lag is None:
        max_lag = (grid[-1] - grid[0]) / 4.0
    max_shift = max(1, int(round(max_lag / dt_grid)))
    # best_lag L satisfies simulated(t) ~ measured(t - L): positive when
    # the simulated curve trails the measured one
    a0 = a - a.mean()
    b0 = b - b.mean()
    best = (-np.inf, 0)
    for shift in range(-max_shift, max_shift + 1):
        if shift >= 0:
            x, y = a0[shift:], b0[: len(b0) - shift]
        else:
            x, y = a0[:shift], b0[-shift:]
        denom = np.sqrt(np.sum(x * x) * np.sum(y * y))
        corr = float(np.sum(x * y) / denom) if denom > 0 else -np.inf
        if corr > best[0]:
            best = (corr, shift)
    return FitMetrics(
        nrmse=nrmse, peak_time_error=peak_err, best_lag=-best[1] * dt_grid
    )
