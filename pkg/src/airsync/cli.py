"""Command-line front end: run, sweep, presets.

Exit codes: 0 success, 2 configuration/usage error, 1 runtime error. Every
report embeds the fully resolved config and the seed actually used, and the
CSV rendering of a report carries exactly the same values as the JSON one
(flattened key paths), so either file replays and cross-checks the other.
Outputs contain no timestamps: identical config+seed means byte-identical
files.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import io
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .config import (
    ScenarioConfig,
    get_config_value,
    load_config,
    load_sweep_spec,
    set_config_value,
    validate_config,
)
from .engine import derive_seed
from .errors import AirsyncError, InvalidConfigError
from .metrics import BUILTIN_PRESETS, MetricsReport, build_report
from .scenario import build_scenario, run_scenario
from .timebase import parse_ticks, ticks_to_ns

SEED_ENV_VAR = "AIRSYNC_SEED"


def _resolve_seed(cli_seed: Optional[int], config_seed: int) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InvalidConfigError("seed", f"{SEED_ENV_VAR}={env!r} is not an integer") from None
    return config_seed


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "value") and obj.__class__.__module__ != "builtins":  # Enum
        return obj.value
    if isinstance(obj, (bool, int, float, str)) or obj is None:
        return obj
    return str(obj)


def _flatten(obj: Any, prefix: str = "") -> list[tuple[str, Any]]:
    rows: list[tuple[str, Any]] = []
    if isinstance(obj, dict):
        for key in obj:
            rows.extend(_flatten(obj[key], f"{prefix}.{key}" if prefix else str(key)))
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            rows.extend(_flatten(item, f"{prefix}[{i}]"))
    else:
        rows.append((prefix, obj))
    return rows


def _dump_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _dump_csv(obj: Any) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["key", "value"])
    for key, value in sorted(_flatten(_jsonable(obj))):
        writer.writerow([key, json.dumps(value, sort_keys=True)])
    return buffer.getvalue()


def _prepare_out_dir(out: str) -> Path:
    out_dir = Path(out)
    if (out_dir / "manifest.json").exists():
        raise InvalidConfigError(
            "out", f"{out_dir} already holds results; refusing to overwrite"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _write_outputs(out_dir: Path, name: str, payload: dict, fmt: str, command: str) -> list[str]:
    written = []
    if fmt in ("json", "both"):
        (out_dir / f"{name}.json").write_text(_dump_json(payload), encoding="utf-8")
        written.append(f"{name}.json")
    if fmt in ("csv", "both"):
        (out_dir / f"{name}.csv").write_text(_dump_csv(payload), encoding="utf-8")
        written.append(f"{name}.csv")
    manifest = {
        "schema_version": 1,
        "tool": {"name": "airsync", "version": __version__},
        "command": command,
        "outputs": sorted(written + ["manifest.json"]),
    }
    (out_dir / "manifest.json").write_text(_dump_json(manifest), encoding="utf-8")
    return written


def _metric_summary(report: MetricsReport) -> dict:
    """Headline per-run values used in sweep rows."""
    summary: dict[str, Any] = {}
    if report.device_error:
        summary["device_error_p99_ticks"] = report.device_error["p99"]
        summary["device_error_max_ticks"] = report.device_error["max"]
    if report.pairwise:
        summary["pairwise_max_ticks"] = report.pairwise["max"]
        summary["pairwise_p99_ticks"] = report.pairwise["p99"]
    if report.jitter:
        summary["jitter_peak_to_peak_ticks"] = report.jitter["peak_to_peak"]
    if report.fault:
        summary["fault_estimate_m"] = report.fault["estimate_m"]
        summary["fault_deviation_m"] = report.fault["deviation_m"]
        if "uncertainty_m" in report.fault:
            summary["fault_uncertainty_m"] = report.fault["uncertainty_m"]
    return summary


def _execute(config: ScenarioConfig, seed: int):
    scenario = build_scenario(config, root_seed=seed)
    trace = run_scenario(scenario, config.duration, root_seed=seed)
    report = build_report(
        trace,
        workload=config.workload,
        presets=config.presets,
        fault_probe=config.fault_probe,
    )
    return report, trace


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = _resolve_seed(args.seed, config.seed)
    out_dir = _prepare_out_dir(args.out)
    report, trace = _execute(config, seed)
    payload = {
        "schema_version": 1,
        "seed": seed,
        "config": config.raw,
        "metrics": {
            "per_node": report.per_node,
            "device_error": report.device_error,
            "pairwise": report.pairwise,
            "jitter": report.jitter,
            "fault": report.fault,
            "lost_sync": trace.lost_sync,
            "samples": len(trace.samples),
        },
        "verdicts": report.verdicts,
    }
    written = _write_outputs(out_dir, "report", payload, args.format, "run")
    if args.trace:
        trace_payload = {
            "samples": [[s.t_true, s.node, s.error] for s in trace.samples],
            "deliveries": [
                [d.node, d.grid_index, d.grid_point, d.true_arrival, d.local_stamp]
                for d in trace.deliveries
            ],
            "corrections": [
                [c.t_true, c.node, c.delta, c.kind, c.error_after]
                for c in trace.corrections
            ],
        }
        (out_dir / "trace.json").write_text(_dump_json(trace_payload), encoding="utf-8")
        written.append("trace.json")
    for verdict in report.verdicts:
        status = {True: "PASS", False: "FAIL", None: "n/a"}[verdict.passed]
        print(f"{verdict.preset}: {status}")
    print(f"wrote {', '.join(written)} to {out_dir}")
    return 0


def _sweep_sort_key(value: Any):
    try:
        return (0, parse_ticks(value))
    except (ValueError, AirsyncError):
        pass
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (0, value)
    return (1, str(value))


def cmd_sweep(args: argparse.Namespace) -> int:
    base = load_config(args.config)
    spec = load_sweep_spec(args.sweep)
    get_config_value(base.raw, spec.path)  # path must resolve before any run
    base_seed = _resolve_seed(args.seed, base.seed)
    out_dir = _prepare_out_dir(args.out)

    rows = []
    ordered = sorted(spec.values, key=_sweep_sort_key)
    for value in ordered:
        for rep in range(spec.repetitions):
            raw = copy.deepcopy(base.raw)
            set_config_value(raw, spec.path, value)
            config = validate_config(raw)
            # seeds depend only on the repetition, so every swept value sees
            # identical draws and points stay comparable
            seed = derive_seed(base_seed, f"rep/{rep}") if spec.repetitions > 1 else base_seed
            report, _trace = _execute(config, seed)
            row = {"value": value, "repetition": rep, "seed": seed}
            row.update(_metric_summary(report))
            rows.append(row)

    aggregates = []
    for value in ordered:
        group = [r for r in rows if r["value"] == value]
        agg: dict[str, Any] = {"value": value, "repetitions": len(group)}
        numeric_keys = sorted(
            {k for r in group for k in r if k not in ("value", "repetition", "seed")}
        )
        for key in numeric_keys:
            values = [r[key] for r in group if key in r]
            if values:
                agg[f"mean_{key}"] = sum(values) / len(values)
        aggregates.append(agg)

    payload = {
        "schema_version": 1,
        "seed": base_seed,
        "config": base.raw,
        "sweep": {"path": spec.path, "values": list(ordered), "repetitions": spec.repetitions},
        "rows": rows,
        "aggregates": aggregates,
    }
    written = _write_outputs(out_dir, "sweep", payload, args.format, "sweep")
    print(f"{len(rows)} runs over {len(ordered)} values; wrote {', '.join(written)} to {out_dir}")
    return 0


def cmd_presets(args: argparse.Namespace) -> int:
    presets = [dataclasses.asdict(p) for p in BUILTIN_PRESETS.values()]
    if args.json:
        print(_dump_json({"presets": presets}), end="")
        return 0
    header = f"{'name':<22} {'pairwise':>12} {'per-device':>12} {'jitter':>10}  notes"
    print(header)
    print("-" * len(header))
    for p in BUILTIN_PRESETS.values():
        pairwise = f"{ticks_to_ns(p.device_sync_bound) / 1000:.1f} us"
        per_device = (
            f"±{ticks_to_ns(p.per_device_bound) / 1000:.1f} us"
            if p.per_device_bound is not None else "-"
        )
        jitter = (
            f"{ticks_to_ns(p.jitter_bound) / 1000:.1f} us"
            if p.jitter_bound is not None else "-"
        )
        print(f"{p.name:<22} {pairwise:>12} {per_device:>12} {jitter:>10}  {p.notes}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airsync",
        description="Discrete-event simulator of over-the-air device-level time synchronization",
    )
    parser.add_argument("--version", action="version", version=f"airsync {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write a metrics report")
    run.add_argument("--config", required=True, help="scenario config file (YAML/JSON)")
    run.add_argument("--seed", type=int, default=None,
                     help=f"root seed (overrides {SEED_ENV_VAR} and the config)")
    run.add_argument("--out", required=True, help="results directory (one per invocation)")
    run.add_argument("--format", choices=["csv", "json", "both"], default="both")
    run.add_argument("--trace", action="store_true", help="also export per-sample trace")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a parameter sweep over a base config")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--sweep", required=True, help="sweep spec file (path/values/repetitions)")
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--format", choices=["csv", "json", "both"], default="both")
    sweep.set_defaults(func=cmd_sweep)

    presets = sub.add_parser("presets", help="list built-in requirement presets")
    presets.add_argument("action", nargs="?", default="list", choices=["list"])
    presets.add_argument("--json", action="store_true", help="machine-readable output")
    presets.set_defaults(func=cmd_presets)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"airsync: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"airsync: {exc}", file=sys.stderr)
        return 2
    except AirsyncError as exc:
        print(f"airsync: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
