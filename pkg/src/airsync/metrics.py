"""Post-run analysis: offset statistics, jitter, fault localization, verdicts.

Pure functions over immutable traces. Per-node statistics are percentiles of
absolute error; pairwise statistics take, at each sampling instant, the
worst spread between any two device nodes (common-mode error cancels by
construction). Jitter is the variation of delivery instants around the ideal
grid, never the constant offset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientNodesError, InsufficientSamplesError
from .scenario import DEVICE_ROLES, Delivery, OffsetSample, RawTrace, Workload
from .timebase import TICKS_PER_US, ticks_to_seconds

US = TICKS_PER_US


@dataclass(frozen=True)
class RequirementPreset:
    """Application sync/jitter bounds; reliability/latency kept as notes only."""

    name: str
    device_sync_bound: int                 # pairwise budget, ticks
    per_device_bound: Optional[int] = None  # +-X per-device form, ticks
    jitter_bound: Optional[int] = None      # peak-to-peak, ticks
    notes: str = ""


# A "+-X" per-device accuracy statement becomes a 2X pairwise budget
# (worst-case opposite signs); both numbers are carried.
BUILTIN_PRESETS: dict[str, RequirementPreset] = {
    p.name: p
    for p in (
        RequirementPreset(
            "tsn-factory",
            device_sync_bound=2 * 500 * US // 1000,
            per_device_bound=500 * US // 1000,
            jitter_bound=1 * US,
            notes="1 ms cycle time, 99.999% reliability (metadata only)",
        ),
        RequirementPreset(
            "grid-fault-protection",
            device_sync_bound=20 * US,
            jitter_bound=None,
            notes="line differential protection; <10 ms latency, >99.99% (metadata only)",
        ),
        RequirementPreset(
            "grid-monitoring",
            device_sync_bound=2 * US,
            per_device_bound=1 * US,
            notes="PMU fault localization; 500-1000 ms latency, ~99% (metadata only)",
        ),
        RequirementPreset(
            "lte-tdd-small",
            device_sync_bound=3 * US,
            per_device_bound=3 * US // 2,
            notes="cell radius <= 3 km",
        ),
        RequirementPreset(
            "lte-tdd-large",
            device_sync_bound=10 * US,
            per_device_bound=5 * US,
            notes="cell radius > 3 km",
        ),
        RequirementPreset(
            "mbms",
            device_sync_bound=10 * US,
            per_device_bound=5 * US,
            notes="intercell time difference",
        ),
    )
}


@dataclass(frozen=True)
class Verdict:
    preset: str
    passed: Optional[bool]          # None when a required measurement is missing
    measured_pairwise: Optional[int]
    pairwise_bound: int
    measured_jitter: Optional[int]
    jitter_bound: Optional[int]


@dataclass
class MetricsReport:
    per_node: dict[str, dict]
    device_error: Optional[dict]
    pairwise: Optional[dict]
    jitter: Optional[dict]
    fault: Optional[dict]
    verdicts: list[Verdict]


def _percentiles(values: Sequence[float] | np.ndarray) -> dict:
    arr = np.asarray(values, dtype=float)
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return {
        "p50": float(p50),
        "p95": float(p95),
        "p99": float(p99),
        "max": float(arr.max()),
        "n": int(arr.size),
    }


def pairwise_offset_stats(samples: Sequence[OffsetSample]) -> dict:
    """Worst pairwise device offset per instant, summarized over instants."""
    nodes = {s.node for s in samples}
    if len(nodes) < 2:
        raise InsufficientNodesError("pairwise statistics need >=2 sampled nodes")
    by_instant: dict[int, list[int]] = {}
    for s in samples:
        by_instant.setdefault(s.t_true, []).append(s.error)
    spreads = [max(errs) - min(errs) for errs in by_instant.values() if len(errs) >= 2]
    if not spreads:
        raise InsufficientNodesError("no instant carries two or more node samples")
    return _percentiles(spreads)


def jitter_stats(
    deliveries: Sequence[Delivery],
    workload: Workload,
) -> dict:
    """Deviation of delivery stamps from the nearest ideal grid position.

    Deviations are centered per target node on that node's median deviation
    (robust grid-phase estimate, absorbing constant path offsets) unless the
    workload pins the phase; percentiles are of absolute centered deviation,
    and peak-to-peak is their full spread. Constant offsets are not jitter.
    """
    if len(deliveries) < 2:
        raise InsufficientSamplesError("jitter statistics need >=2 deliveries")
    period = workload.command_period
    half = period // 2
    by_node: dict[str, list[int]] = {}
    for d in deliveries:
        r = (d.local_stamp - workload.grid_phase) % period
        by_node.setdefault(d.node, []).append(r - period if r > half else r)
    centered = []
    for node in sorted(by_node):
        arr = np.asarray(by_node[node], dtype=float)
        if workload.phase_mode == "median":
            arr = arr - np.median(arr)
        centered.append(arr)
    pooled = np.concatenate(centered)
    stats = _percentiles(np.abs(pooled))
    stats["peak_to_peak"] = float(pooled.max() - pooled.min())
    return stats


def fault_location_estimate(
    stamp_a: int, stamp_b: int, line_length_m: float, wave_speed_mps: float
) -> tuple[float, bool]:
    """Invert two wave-arrival stamps into a fault position estimate.

    x = (L - v * (tB - tA)) / 2, clamped to [0, L]; the flag reports when the
    raw estimate fell outside the line.
    """
    if line_length_m <= 0 or wave_speed_mps <= 0:
        raise ValueError("line length and wave speed must be positive")
    dt_seconds = ticks_to_seconds(stamp_b - stamp_a)
    raw = (line_length_m - wave_speed_mps * dt_seconds) / 2.0
    clamped = min(max(raw, 0.0), line_length_m)
    return clamped, raw != clamped


def localization_uncertainty(sync_error_bound: int, wave_speed_mps: float) -> float:
    """Full width (meters) of the location interval for offsets in [-b, +b]."""
    if sync_error_bound < 0 or wave_speed_mps <= 0:
        raise ValueError("bound must be >= 0 and wave speed positive")
    return wave_speed_mps * ticks_to_seconds(sync_error_bound)


def check_requirements(
    measured_pairwise: Optional[int],
    measured_jitter: Optional[int],
    presets: Sequence[RequirementPreset],
) -> list[Verdict]:
    """Pass/fail each preset; a verdict is None when its input is missing."""
    verdicts = []
    for preset in presets:
        checks: list[bool] = []
        incomplete = False
        if measured_pairwise is None:
            incomplete = True
        else:
            checks.append(measured_pairwise <= preset.device_sync_bound)
        if preset.jitter_bound is not None:
            if measured_jitter is None:
                incomplete = True
            else:
                checks.append(measured_jitter <= preset.jitter_bound)
        verdicts.append(
            Verdict(
                preset=preset.name,
                passed=None if incomplete else all(checks),
                measured_pairwise=measured_pairwise,
                pairwise_bound=preset.device_sync_bound,
                measured_jitter=measured_jitter,
                jitter_bound=preset.jitter_bound,
            )
        )
    return verdicts


def build_report(
    trace: RawTrace,
    workload: Optional[Workload] = None,
    presets: Sequence[RequirementPreset] = (),
    fault_probe=None,
) -> MetricsReport:
    """Assemble the full metrics report for one run."""
    per_node: dict[str, dict] = {}
    by_node: dict[str, list[int]] = {}
    for s in trace.samples:
        by_node.setdefault(s.node, []).append(s.error)
    for node in sorted(by_node):
        per_node[node] = _percentiles(np.abs(np.asarray(by_node[node], dtype=float)))

    device_samples = [
        s for s in trace.samples if trace.roles.get(s.node) in DEVICE_ROLES
    ]
    device_error = None
    if device_samples:
        device_error = _percentiles(
            np.abs(np.asarray([s.error for s in device_samples], dtype=float))
        )

    pairwise = None
    if len({s.node for s in device_samples}) >= 2:
        pairwise = pairwise_offset_stats(device_samples)

    jitter = None
    if workload is not None and len(trace.deliveries) >= 2:
        jitter = jitter_stats(trace.deliveries, workload)

    fault = None
    if trace.fault is not None and fault_probe is not None:
        estimate, out_of_range = fault_location_estimate(
            trace.fault.stamp_a,
            trace.fault.stamp_b,
            fault_probe.line_length_m,
            fault_probe.wave_speed_mps,
        )
        fault = {
            "pmu_a": trace.fault.pmu_a,
            "pmu_b": trace.fault.pmu_b,
            "stamp_a": trace.fault.stamp_a,
            "stamp_b": trace.fault.stamp_b,
            "estimate_m": estimate,
            "true_position_m": fault_probe.fault_position_m,
            "deviation_m": estimate - fault_probe.fault_position_m,
            "out_of_range": out_of_range,
        }
        if fault_probe.sync_error_bound is not None:
            fault["sync_error_bound_ticks"] = fault_probe.sync_error_bound
            fault["uncertainty_m"] = localization_uncertainty(
                fault_probe.sync_error_bound, fault_probe.wave_speed_mps
            )

    measured_pairwise = int(pairwise["max"]) if pairwise else None
    measured_jitter = int(jitter["peak_to_peak"]) if jitter else None
    verdicts = check_requirements(measured_pairwise, measured_jitter, presets)

    return MetricsReport(
        per_node=per_node,
        device_error=device_error,
        pairwise=pairwise,
        jitter=jitter,
        fault=fault,
        verdicts=verdicts,
    )
