"""Command-line entry point.

Subcommands: run | cases | ber-sweep | validate. Every output file
carries a metadata header (seed, version, config hash) and is
byte-reproducible from (config, seed, version); wall-clock numbers are
printed to stderr, never written into outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, commlink, studies
from .config import Bundle, load_bundle
from .errors import ConfigError, DataError, NumericsError, UsageError
from .transport import SimulationResult, run

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

WORKERS_ENV = "BUBBLECHAN_WORKERS"


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer (got {raw!r})")
    return os.cpu_count() or 1


def _meta_lines(bundle: Bundle, seed: int) -> str:
    return (
        f"# seed={seed}\n"
        f"# version={__version__}\n"
        f"# config_sha256={bundle.hash}\n"
    )


def _meta_dict(bundle: Bundle, seed: int) -> dict:
    return {"seed": seed, "version": __version__, "config_sha256": bundle.hash}


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def events_csv(bundle: Bundle, result: SimulationResult, seed: int) -> str:
    lines = [_meta_lines(bundle, seed), "particle_id,t_arrival,pass_index,r\n"]
    for pid, t, p, r in zip(
        result.arrival_ids, result.arrival_times, result.arrival_passes,
        result.arrival_radii,
    ):
        lines.append(f"{pid},{float(t)!r},{p},{float(r)!r}\n")
    return "".join(lines)


def _summary(result: SimulationResult) -> dict:
    return {
        "injected": result.injected_count,
        "in_flight": result.in_flight_count,
        "absorbed": result.absorbed_count,
        "expired": result.expired_count,
        "arrival_events": int(len(result.arrival_times)),
        "coupling": "one-way",  # particle forces never feed back into the flow
    }


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_run(bundle: Bundle, out: Path, seed: int, workers: int) -> int:
    sink = None
    traj_path = out / "trajectories.csv"
    try:
        if bundle.trajectory_dump:
            out.mkdir(parents=True, exist_ok=True)
            sink = open(traj_path, "w", encoding="utf-8")
            sink.write(_meta_lines(bundle, seed))
            sink.write("particle_id,t,x,y,z,pass_count\n")
        result = run(bundle.scenario, seed, workers=workers, trajectory_sink=sink)
    finally:
        if sink is not None:
            sink.close()
    _write(out / "events.csv", events_csv(bundle, result, seed))
    summary = {
        "meta": _meta_dict(bundle, seed),
        "counts": _summary(result),
        "config": bundle.tree,
    }
    if len(bundle.scenario.injection.events) == 1:
        bin_width = bundle.comm.bin_width or commlink.default_bin_width(result)
        cir = commlink.estimate_cir(result, bin_width)
        _write(out / "cir.csv", _meta_lines(bundle, seed) + commlink.cir_to_csv(cir))
        summary["isi_fraction_at_symbol_duration"] = commlink.isi_fraction(
            cir, bundle.comm.scheme.symbol_duration
        )
    else:
        print("note: multi-event schedule, cir.csv skipped", file=sys.stderr)
    _write(out / "summary.json", _json_dump(summary))
    print(
        f"run complete: {result.wall_clock_stats['elapsed_s']:.2f} s, "
        f"{len(result.arrival_times)} arrivals",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_cases(bundle: Bundle, out: Path, seed: int, workers: int) -> int:
    report = studies.run_comparison(
        bundle.scenario, seed, presets=bundle.study.presets, workers=workers
    )
    records = {}
    for case in studies.ALL_CASES:
        scenario = studies.build_case(case, bundle.scenario, bundle.study.presets)
        result = run(scenario, seed, workers=workers)
        _write(out / case.label / "events.csv", events_csv(bundle, result, seed))
        rec = report.records[case.label]
        records[case.label] = {
            "peak_arrival_time": rec.peak_arrival_time,
            "transit_spread": rec.transit_spread,
            "arrival_fraction": rec.arrival_fraction,
            "recirculation_echo_times": list(rec.recirculation_echo_times),
            "loop_period": rec.loop_period,
        }
    circulation = studies.circulation_analysis(
        report, bundle.study.reference_circulation_period
    )
    _write(
        out / "comparison_report.json",
        _json_dump(
            {
                "meta": _meta_dict(bundle, seed),
                "cases": records,
                "circulation": circulation,
                "config": bundle.tree,
            }
        ),
    )
    return EXIT_OK


def cmd_ber_sweep(
    bundle: Bundle, out: Path, seed: int, workers: int, tsym_list: List[float]
) -> int:
    if not tsym_list:
        raise ConfigError("ber-sweep needs --tsym-list")
    comm = bundle.comm
    rng = np.random.default_rng(seed)
    bits = list(rng.integers(0, 2, size=comm.n_bits))
    rows = [_meta_lines(bundle, seed), "T_sym,trials,errors,ber\n"]
    for tsym in tsym_list:
        scheme = commlink.OokScheme(
            symbol_duration=tsym,
            bubbles_per_one=comm.scheme.bubbles_per_one,
            guard_bins=comm.scheme.guard_bins,
        )
        trial = commlink.run_ook_trial(
            bundle.scenario,
            scheme,
            bits,
            seed,
            window_offset=comm.window_offset,
            window_width=comm.window_width,
            workers=workers,
        )
        errors = round(trial.ber * len(bits))
        rows.append(f"{tsym!r},{len(bits)},{errors},{trial.ber!r}\n")
        print(f"T_sym={tsym}: BER={trial.ber:.4f}", file=sys.stderr)
    _write(out / "ber_sweep.csv", "".join(rows))
    return EXIT_OK


def cmd_validate(
    bundle: Bundle, out: Path, seed: int, workers: int, measured_path: str
) -> int:
    measured = studies.load_measured(measured_path, label=Path(measured_path).stem)
    result = run(bundle.scenario, seed, workers=workers)
    bin_width = bundle.comm.bin_width or commlink.default_bin_width(result)
    cir = commlink.estimate_cir(result, bin_width)
    simulated = studies.simulated_series_from_cir(cir)
    metrics = studies.compare_series(measured, simulated)
    grid, a, b = studies.resample_pair(measured, simulated)
    curves = [_meta_lines(bundle, seed), "t,measured_norm,simulated_norm\n"]
    for t, x, y in zip(grid, a, b):
        curves.append(f"{float(t)!r},{float(x)!r},{float(y)!r}\n")
    _write(out / "comparison_curves.csv", "".join(curves))
    _write(
        out / "validation_metrics.json",
        _json_dump(
            {
                "meta": _meta_dict(bundle, seed),
                "measured_file": str(measured_path),
                "nrmse": metrics.nrmse,
                "peak_time_error": metrics.peak_time_error,
                "best_lag": metrics.best_lag,
            }
        ),
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bubblechan",
        description="Microbubble transport and molecular-communication "
        "channel simulator for recirculating pipe flow.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-key config override, repeatable",
        )

    common(sub.add_parser("run", help="single transport simulation"))
    common(sub.add_parser("cases", help="four-case media/velocity grid"))
    p_ber = sub.add_parser("ber-sweep", help="OOK BER vs symbol duration")
    common(p_ber)
    p_ber.add_argument(
        "--tsym-list",
        required=True,
        help="comma-separated symbol durations in seconds",
    )
    p_val = sub.add_parser("validate", help="compare against a measured series")
    common(p_val)
    p_val.add_argument("--measured", required=True, help="t,intensity CSV file")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        bundle = load_bundle(text, args.overrides)
        workers = _workers()
        out = Path(args.out)
        if args.command == "run":
            return cmd_run(bundle, out, args.seed, workers)
        if args.command == "cases":
            return cmd_cases(bundle, out, args.seed, workers)
        if args.command == "ber-sweep":
            tsyms = [float(x) for x in args.tsym_list.split(",") if x.strip()]
            return cmd_ber_sweep(bundle, out, args.seed, workers, tsyms)
        if args.command == "validate":
            return cmd_validate(bundle, out, args.seed, workers, args.measured)
        raise UsageError(f"unknown command {args.command}")
    except (ConfigError, UsageError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericsError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
