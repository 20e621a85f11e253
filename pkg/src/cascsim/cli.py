"""Command-line entry points: simulate, sweep, capacity, calibrate.

Exit status is 0 only when every requested run completed; failures emit a
machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .cascade import calibrate_static_threshold, cascade_accuracy
from .config import ExperimentConfig, load_config, preset_names
from .engine import run_simulation
from .errors import CascSimError, ConfigError
from .metrics import SWEEP_CSV_HEADER, MetricsReport, mean_report, sweep_csv_rows
from .server import BatchLatencyTable, compute_capacity_exact, compute_capacity_greedy
from .trace import load_trace_csv, trace_forward_rate


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _parse_seed_list(raw: Optional[str], default: Sequence[int]) -> list[int]:
    if raw is None:
        return list(default)
    try:
        return [int(s) for s in raw.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError("--seed-list", f"expected comma-separated integers, got {raw!r}") from None


def _parse_device_range(raw: str) -> list[int]:
    """Parse 'A..B:STEP' into an inclusive device-count series."""
    try:
        span, step_str = raw.split(":")
        lo_str, hi_str = span.split("..")
        lo, hi, step = int(lo_str), int(hi_str), int(step_str)
    except ValueError:
        raise ConfigError("--devices", f"expected A..B:STEP, got {raw!r}") from None
    if step <= 0 or hi < lo:
        raise ConfigError("--devices", f"empty or descending range {raw!r}")
    return list(range(lo, hi + 1, step))


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "scheduler", None) and args.scheduler != "both":
        cfg = replace(cfg, scheduler=replace(cfg.scheduler, kind=args.scheduler))
    if getattr(args, "devices_count", None):
        cfg = cfg.with_device_count(args.devices_count)
    return cfg


def _run_one(cfg: ExperimentConfig, seed: int, collect_event_log: bool) -> MetricsReport:
    return run_simulation(cfg, traces=None, seed=seed, collect_event_log=collect_event_log)


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    seeds = _parse_seed_list(args.seed_list, cfg.seeds)
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    if args.event_log and not out_dir:
        raise ConfigError("--event-log", "requires --out to know where to write")

    reports = []
    for seed in seeds:
        report = _run_one(cfg, seed, collect_event_log=args.event_log)
        reports.append(report)
        if out_dir:
            _write_atomic(out_dir / f"report_seed{seed}.json", report.to_json() + "\n")
            if args.event_log:
                _write_atomic(out_dir / f"events_seed{seed}.tsv",
                              "\n".join(report.event_log) + "\n")
    mean = mean_report(reports)
    mean_text = json.dumps(mean, sort_keys=True, indent=2)
    if out_dir:
        _write_atomic(out_dir / "report_mean.json", mean_text + "\n")
    print(mean_text)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seeds = _parse_seed_list(args.seed_list, cfg.seeds)
    counts = _parse_device_range(args.devices)
    kinds = ["multitasc", "static"] if args.scheduler == "both" else [args.scheduler]

    reports = []
    for kind in kinds:
        kind_cfg = replace(cfg, scheduler=replace(cfg.scheduler, kind=kind))
        for count in counts:
            point_cfg = kind_cfg.with_device_count(count)
            for seed in seeds:
                reports.append(_run_one(point_cfg, seed, collect_event_log=False))

    lines = [SWEEP_CSV_HEADER] + sweep_csv_rows(reports)
    text = "\n".join(lines) + "\n"
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_atomic(out_dir / "sweep.csv", text)
        print(str(out_dir / "sweep.csv"))
    else:
        print(text, end="")
    return 0


def _table_from_args(args) -> BatchLatencyTable:
    if args.config:
        return load_config(args.config).server_table
    if not args.table:
        raise ConfigError("--table", "either --config or --table is required")
    try:
        entries = json.loads(args.table)
    except json.JSONDecodeError as exc:
        raise ConfigError("--table", f"invalid JSON: {exc}") from None
    return BatchLatencyTable(entries, args.max_effective)


def cmd_capacity(args) -> int:
    table = _table_from_args(args)
    solver = compute_capacity_exact if args.exact else compute_capacity_greedy
    result = solver(table, args.slo)
    print(json.dumps({
        "capacity": result.capacity,
        "schedule": [[b, n] for b, n in result.schedule],
        "time_used_ms": result.time_used_ms,
        "slo_ms": args.slo,
        "solver": "exact" if args.exact else "greedy",
    }, sort_keys=True))
    return 0


def cmd_calibrate(args) -> int:
    if args.trace:
        trace = load_trace_csv(args.trace)
        threshold = calibrate_static_threshold(trace, args.target, args.tolerance)
        print(json.dumps({
            "threshold": threshold.value,
            "forward_rate": trace_forward_rate(trace, threshold.value),
            "cascade_accuracy": cascade_accuracy(trace, threshold),
        }, sort_keys=True))
        return 0
    if not args.config:
        raise ConfigError("--trace", "either --config or --trace is required")
    cfg = load_config(args.config)
    calib = cfg.scheduler.calibration
    if calib is not None:
        cfg = replace(cfg, scheduler=replace(
            cfg.scheduler,
            calibration=replace(calib, target_forward_rate=args.target,
                                accuracy_tolerance=args.tolerance)))
    thresholds = cfg.resolve_initial_thresholds()
    print(json.dumps({
        "thresholds": [
            {"group": i, "tier": g.tier.value, "model": g.model, "threshold": t.value}
            for i, (g, t) in enumerate(zip(cfg.fleet, thresholds))
        ],
        "target_forward_rate": args.target,
    }, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascsim",
        description="Discrete-event simulator for multi-device inference cascades "
                    "with adaptive forwarding thresholds.",
        epilog=f"Shipped presets: {', '.join(preset_names())}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one experiment across its seeds")
    sim.add_argument("--config", required=True, help="config file path or preset name")
    sim.add_argument("--out", help="directory for per-seed and mean reports")
    sim.add_argument("--seed-list", help="comma-separated seed override")
    sim.add_argument("--devices", dest="devices_count", type=int,
                     help="override total device count")
    sim.add_argument("--scheduler", choices=["multitasc", "static"],
                     help="override scheduler kind")
    sim.add_argument("--event-log", action="store_true",
                     help="also write per-seed event logs (requires --out)")
    sim.set_defaults(func=cmd_simulate)

    sweep = sub.add_parser("sweep", help="sweep device counts, emit a CSV series")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--devices", required=True, metavar="A..B:STEP",
                       help="device count range, e.g. 5..50:5")
    sweep.add_argument("--scheduler", choices=["multitasc", "static", "both"],
                       default="both")
    sweep.add_argument("--seed-list", help="comma-separated seed override")
    sweep.add_argument("--out", help="directory for sweep.csv (stdout when omitted)")
    sweep.set_defaults(func=cmd_sweep)

    cap = sub.add_parser("capacity", help="compute server capacity for a latency budget")
    cap.add_argument("--config", help="take the batch table from this config/preset")
    cap.add_argument("--table", help='batch latency table as JSON, e.g. \'{"1": 10, "2": 12}\'')
    cap.add_argument("--max-effective", type=int, default=None)
    cap.add_argument("--slo", type=float, required=True, help="latency budget in ms")
    cap.add_argument("--exact", action="store_true", help="use the exact DP solver")
    cap.set_defaults(func=cmd_capacity)

    cal = sub.add_parser("calibrate", help="pick static thresholds from a calibration trace")
    cal.add_argument("--config", help="calibrate every fleet group of this config/preset")
    cal.add_argument("--trace", help="calibrate a single trace CSV file")
    cal.add_argument("--target", type=float, default=0.30, help="target forward rate")
    cal.add_argument("--tolerance", type=float, default=0.01,
                     help="maximum cascade-accuracy loss")
    cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CascSimError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
