"""Declarative scenario configuration.

YAML/JSON in, validated ScenarioConfig out. Time quantities carry unit
suffixes and must land exactly on the tick grid (rejected otherwise, never
rounded); unknown keys are rejected with full field paths. The resolved
dictionary (defaults filled in) is kept alongside the typed config so
reports can embed it and sweeps can rewrite any field by path.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .clocks import ClockParams, MAX_ABS_SKEW
from .engine import RngStream
from .errors import InvalidConfigError
from .metrics import BUILTIN_PRESETS, RequirementPreset
from .protocols import RibsMode, SibConfig, StampMode, TaTimerConfig
from .scenario import (
    BsAlignment,
    BsAlignmentMode,
    DelayDistribution,
    Enabler,
    FaultProbe,
    LinkModel,
    Role,
    SyncPlan,
    Workload,
)
from .timebase import parse_ticks

SCHEMA_VERSION = 1

_DIST_KEYS = {"dist", "low", "high", "mean", "sigma"}


def _mapping(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise InvalidConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, allowed: set[str], path: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        key = sorted(unknown)[0]
        raise InvalidConfigError(
            f"{path}.{key}" if path else key,
            f"unknown key (allowed: {sorted(allowed)})",
        )


def _time(value: Any, path: str, *, allow_negative: bool = False) -> int:
    try:
        return parse_ticks(value, allow_negative=allow_negative)
    except ValueError as exc:
        raise InvalidConfigError(path, str(exc)) from None


def _sigma(value: Any, path: str) -> float:
    """Noise std dev: bare numbers are ticks (fractional ok), strings exact."""
    if isinstance(value, bool):
        raise InvalidConfigError(path, "expected a number or time quantity")
    if isinstance(value, (int, float)):
        if value < 0:
            raise InvalidConfigError(path, "must be >= 0")
        return float(value)
    return float(_time(value, path))


def _probability(value: Any, path: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not 0 <= value <= 1:
        raise InvalidConfigError(path, f"expected a probability in [0, 1], got {value!r}")
    return float(value)


def _number(value: Any, path: str) -> float:
    if isinstance(value, str):
        # YAML 1.1 reads "3.0e8" as a string (it wants e+8); be forgiving
        try:
            return float(value)
        except ValueError:
            raise InvalidConfigError(path, f"expected a number, got {value!r}") from None
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise InvalidConfigError(path, f"expected a number, got {value!r}")
    return float(value)


# --- clock parameter specs ----------------------------------------------------


@dataclass(frozen=True)
class ScalarOrDist:
    """Fixed value or a uniform range, drawn once per node at build time."""

    value: float = 0.0
    low: float = 0.0
    high: float = 0.0
    uniform: bool = False
    integer: bool = False

    def draw(self, rng: RngStream) -> float:
        if not self.uniform:
            return self.value
        if self.integer:
            return float(rng.integers(int(self.low), int(self.high) + 1))
        return rng.uniform(self.low, self.high)


def _scalar_or_dist(raw: Any, path: str, parse, *, integer: bool = False) -> ScalarOrDist:
    if isinstance(raw, dict):
        _check_keys(raw, _DIST_KEYS, path)
        kind = raw.get("dist")
        if kind != "uniform":
            raise InvalidConfigError(f"{path}.dist", f"only 'uniform' supported, got {kind!r}")
        if "low" not in raw or "high" not in raw:
            raise InvalidConfigError(path, "uniform distribution needs 'low' and 'high'")
        low = parse(raw["low"], f"{path}.low")
        high = parse(raw["high"], f"{path}.high")
        if high < low:
            raise InvalidConfigError(path, "uniform range needs high >= low")
        return ScalarOrDist(low=low, high=high, uniform=True, integer=integer)
    return ScalarOrDist(value=parse(raw, path), integer=integer)


@dataclass(frozen=True)
class ClockSpec:
    theta0: ScalarOrDist = ScalarOrDist(integer=True)
    skew_y: ScalarOrDist = ScalarOrDist()
    drift_a: ScalarOrDist = ScalarOrDist()
    stamp_noise_sigma: float = 0.0

    def draw(self, rng: RngStream) -> ClockParams:
        return ClockParams(
            theta0=int(self.theta0.draw(rng)),
            skew_y=self.skew_y.draw(rng),
            drift_a=self.drift_a.draw(rng),
            stamp_noise_sigma=self.stamp_noise_sigma,
        )


_CLOCK_KEYS = {"theta0", "skew_ppm", "drift_per_s", "stamp_noise"}


def _parse_clock(raw: Any, path: str) -> ClockSpec:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _CLOCK_KEYS, path)

    def time_signed(v, p):
        return float(_time(v, p, allow_negative=True))

    def ppm(v, p):
        value = _number(v, p) * 1e-6
        if abs(value) >= MAX_ABS_SKEW:
            raise InvalidConfigError(p, f"|skew| must stay below {MAX_ABS_SKEW * 1e6:.0f} ppm")
        return value

    theta0 = _scalar_or_dist(mapping.get("theta0", 0), f"{path}.theta0", time_signed, integer=True)
    skew = _scalar_or_dist(mapping.get("skew_ppm", 0.0), f"{path}.skew_ppm", ppm)
    drift = _scalar_or_dist(mapping.get("drift_per_s", 0.0), f"{path}.drift_per_s", _number)
    sigma = _sigma(mapping.get("stamp_noise", 0), f"{path}.stamp_noise")
    return ClockSpec(theta0=theta0, skew_y=skew, drift_a=drift, stamp_noise_sigma=sigma)


# --- node / link / plan / workload ---------------------------------------------


@dataclass(frozen=True)
class NodeSpec:
    id: str
    role: Role
    position: Optional[tuple[float, float]] = None
    attach_to: Optional[str] = None
    clock: ClockSpec = ClockSpec()


_NODE_KEYS = {"id", "role", "position", "attach_to", "clock"}
_ROLES = {r.value: r for r in Role}


def _parse_node(raw: Any, path: str, defaults: dict[str, Any]) -> NodeSpec:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _NODE_KEYS, path)
    node_id = mapping.get("id")
    if not isinstance(node_id, str) or not node_id:
        raise InvalidConfigError(f"{path}.id", "node id must be a non-empty string")
    role_raw = mapping.get("role")
    if role_raw not in _ROLES:
        raise InvalidConfigError(
            f"{path}.role", f"unknown role {role_raw!r} (allowed: {sorted(_ROLES)})"
        )
    role = _ROLES[role_raw]
    position = None
    if mapping.get("position") is not None:
        pos = mapping["position"]
        if not isinstance(pos, (list, tuple)) or len(pos) != 2:
            raise InvalidConfigError(f"{path}.position", "expected [x, y] in meters")
        position = (_number(pos[0], f"{path}.position[0]"), _number(pos[1], f"{path}.position[1]"))
    attach_to = mapping.get("attach_to")
    if attach_to is not None and not isinstance(attach_to, str):
        raise InvalidConfigError(f"{path}.attach_to", "expected a node id string")
    if mapping.get("clock") is not None:
        clock_raw = mapping["clock"]
    else:
        clock_raw = defaults.get(role_raw, {})
    return NodeSpec(
        id=node_id,
        role=role,
        position=position,
        attach_to=attach_to,
        clock=_parse_clock(clock_raw, f"{path}.clock"),
    )


def _parse_delay_dist(raw: Any, path: str) -> DelayDistribution:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _DIST_KEYS, path)
    kind = mapping.get("dist", "none")
    if kind == "none":
        return DelayDistribution()
    if kind == "uniform":
        return DelayDistribution(
            kind="uniform",
            low=_time(mapping.get("low", 0), f"{path}.low"),
            high=_time(mapping.get("high", 0), f"{path}.high"),
        )
    if kind == "normal":
        return DelayDistribution(
            kind="normal",
            mean=_sigma(mapping.get("mean", 0), f"{path}.mean"),
            sigma=_sigma(mapping.get("sigma", 0), f"{path}.sigma"),
        )
    raise InvalidConfigError(f"{path}.dist", f"unknown distribution {kind!r}")


_LINK_KEYS = {"extra_delay", "loss_prob"}


def _parse_link(raw: Any, path: str) -> LinkModel:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _LINK_KEYS, path)
    extra = _parse_delay_dist(mapping.get("extra_delay", {"dist": "none"}), f"{path}.extra_delay")
    return LinkModel(extra_delay=extra, loss_prob=_probability(mapping.get("loss_prob", 0.0), f"{path}.loss_prob"))


_SIB_KEYS = {"granularity", "periodicity", "si_window", "stamp_mode"}
_STAMP_MODES = {m.value: m for m in StampMode}


def _parse_sib(raw: Any, path: str) -> SibConfig:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _SIB_KEYS, path)
    mode_raw = mapping.get("stamp_mode", StampMode.AT_TRANSMIT.value)
    if mode_raw not in _STAMP_MODES:
        raise InvalidConfigError(
            f"{path}.stamp_mode", f"unknown mode {mode_raw!r} (allowed: {sorted(_STAMP_MODES)})"
        )
    try:
        return SibConfig(
            granularity=_time(mapping.get("granularity", "10 ms"), f"{path}.granularity"),
            periodicity=_time(mapping.get("periodicity", "80 ms"), f"{path}.periodicity"),
            si_window=_time(mapping.get("si_window", "40 ms"), f"{path}.si_window"),
            stamp_mode=_STAMP_MODES[mode_raw],
        )
    except ValueError as exc:
        raise InvalidConfigError(path, str(exc)) from None


_ALIGN_KEYS = {"mode", "error", "ribs_mode", "realign_period"}
_ALIGN_MODES = {m.value: m for m in BsAlignmentMode}
_RIBS_MODES = {m.value: m for m in RibsMode}


def _parse_alignment(raw: Any, path: str) -> BsAlignment:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _ALIGN_KEYS, path)
    mode_raw = mapping.get("mode", "perfect")
    if mode_raw not in _ALIGN_MODES:
        raise InvalidConfigError(f"{path}.mode", f"unknown mode {mode_raw!r}")
    mode = _ALIGN_MODES[mode_raw]
    error = _time(mapping.get("error", 0), f"{path}.error", allow_negative=True)
    ribs_mode = None
    if mode is BsAlignmentMode.RIBS:
        ribs_raw = mapping.get("ribs_mode", "two_way")
        if ribs_raw not in _RIBS_MODES:
            raise InvalidConfigError(f"{path}.ribs_mode", f"unknown RIBS mode {ribs_raw!r}")
        ribs_mode = _RIBS_MODES[ribs_raw]
    realign = mapping.get("realign_period")
    realign_period = _time(realign, f"{path}.realign_period") if realign is not None else None
    return BsAlignment(mode=mode, error=error, ribs_mode=ribs_mode, realign_period=realign_period)


_PLAN_KEYS = {
    "enabler", "resync_period", "ta_timer_ms", "ta_noise_sigma",
    "ta_wrong_bin_prob", "sib", "bs_alignment", "gw_relay_sigma",
}
_ENABLERS = {e.value: e for e in Enabler}


def _parse_plan(raw: Any, path: str) -> SyncPlan:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _PLAN_KEYS, path)
    enabler_raw = mapping.get("enabler", Enabler.TA_SIB16.value)
    if enabler_raw not in _ENABLERS:
        raise InvalidConfigError(
            f"{path}.enabler", f"unknown enabler {enabler_raw!r} (allowed: {sorted(_ENABLERS)})"
        )
    timer_raw = mapping.get("ta_timer_ms", 10240)
    try:
        ta_timer = TaTimerConfig(period_ms=timer_raw)
    except (ValueError, TypeError) as exc:
        raise InvalidConfigError(f"{path}.ta_timer_ms", str(exc)) from None
    resync = _time(mapping.get("resync_period", "80 ms"), f"{path}.resync_period")
    if resync <= 0:
        raise InvalidConfigError(f"{path}.resync_period", "must be > 0")
    return SyncPlan(
        enabler=_ENABLERS[enabler_raw],
        resync_period=resync,
        ta_timer=ta_timer,
        ta_noise_sigma=_sigma(mapping.get("ta_noise_sigma", 0), f"{path}.ta_noise_sigma"),
        ta_wrong_bin_prob=_probability(mapping.get("ta_wrong_bin_prob", 0.0), f"{path}.ta_wrong_bin_prob"),
        sib=_parse_sib(mapping.get("sib", {}), f"{path}.sib"),
        bs_alignment=_parse_alignment(mapping.get("bs_alignment", {}), f"{path}.bs_alignment"),
        gw_relay_sigma=_sigma(mapping.get("gw_relay_sigma", 0), f"{path}.gw_relay_sigma"),
    )


_WORKLOAD_KEYS = {"command_period", "targets", "grid_phase", "phase_mode"}


def _parse_workload(raw: Any, path: str) -> Workload:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _WORKLOAD_KEYS, path)
    period = _time(mapping.get("command_period", "1 ms"), f"{path}.command_period")
    if period <= 0:
        raise InvalidConfigError(f"{path}.command_period", "must be > 0")
    targets = mapping.get("targets")
    if not isinstance(targets, list) or not targets or not all(isinstance(t, str) for t in targets):
        raise InvalidConfigError(f"{path}.targets", "expected a non-empty list of node ids")
    phase_mode = mapping.get("phase_mode", "median")
    if phase_mode not in ("median", "fixed"):
        raise InvalidConfigError(f"{path}.phase_mode", "must be 'median' or 'fixed'")
    return Workload(
        command_period=period,
        targets=tuple(targets),
        grid_phase=_time(mapping.get("grid_phase", 0), f"{path}.grid_phase"),
        phase_mode=phase_mode,
    )


_PROBE_KEYS = {
    "line_length_m", "fault_position_m", "wave_speed_mps",
    "sync_error_bound", "at", "pmu",
}


def _parse_probe(raw: Any, path: str) -> FaultProbe:
    mapping = _mapping(raw, path)
    _check_keys(mapping, _PROBE_KEYS, path)
    length = _number(mapping.get("line_length_m"), f"{path}.line_length_m")
    position = _number(mapping.get("fault_position_m"), f"{path}.fault_position_m")
    speed = _number(mapping.get("wave_speed_mps", 3.0e8), f"{path}.wave_speed_mps")
    if length <= 0 or speed <= 0 or not 0 <= position <= length:
        raise InvalidConfigError(path, "need 0 <= fault_position_m <= line_length_m and positive speed")
    bound_raw = mapping.get("sync_error_bound")
    bound = _time(bound_raw, f"{path}.sync_error_bound") if bound_raw is not None else None
    at_raw = mapping.get("at")
    at = _time(at_raw, f"{path}.at") if at_raw is not None else None
    pmu = mapping.get("pmu")
    pmu_ids = None
    if pmu is not None:
        if not isinstance(pmu, list) or len(pmu) != 2 or not all(isinstance(p, str) for p in pmu):
            raise InvalidConfigError(f"{path}.pmu", "expected exactly two PMU node ids")
        pmu_ids = (pmu[0], pmu[1])
    return FaultProbe(
        line_length_m=length,
        fault_position_m=position,
        wave_speed_mps=speed,
        sync_error_bound=bound,
        at=at,
        pmu_ids=pmu_ids,
    )


# --- top level ------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    nodes: list[NodeSpec]
    link: LinkModel
    sync_plan: SyncPlan
    workload: Optional[Workload]
    presets: list[RequirementPreset]
    duration: int
    sampling_grid: int
    seed: int
    fault_probe: Optional[FaultProbe] = None
    raw: dict = field(default_factory=dict, repr=False, compare=False)


_TOP_KEYS = {
    "schema_version", "seed", "duration", "sampling_grid", "nodes",
    "clock_defaults", "link", "sync_plan", "workload", "presets", "fault_probe",
}

_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "sampling_grid": "1 ms",
    "clock_defaults": {},
    "link": {},
    "sync_plan": {},
    "workload": None,
    "presets": [],
    "fault_probe": None,
}


def validate_config(raw: dict) -> ScenarioConfig:
    """Validate a raw mapping into a ScenarioConfig (strict, path-diagnosed)."""
    mapping = _mapping(raw, "")
    _check_keys(mapping, _TOP_KEYS, "")
    if mapping.get("schema_version") != SCHEMA_VERSION:
        raise InvalidConfigError(
            "schema_version", f"expected {SCHEMA_VERSION}, got {mapping.get('schema_version')!r}"
        )
    resolved = copy.deepcopy(mapping)
    for key, default in _DEFAULTS.items():
        resolved.setdefault(key, copy.deepcopy(default))

    if "duration" not in resolved:
        raise InvalidConfigError("duration", "required")
    duration = _time(resolved["duration"], "duration")
    if duration <= 0:
        raise InvalidConfigError("duration", "must be > 0")
    sampling = _time(resolved["sampling_grid"], "sampling_grid")
    if sampling <= 0:
        raise InvalidConfigError("sampling_grid", "must be > 0")
    seed = resolved["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise InvalidConfigError("seed", f"expected an integer, got {seed!r}")

    defaults_raw = _mapping(resolved["clock_defaults"], "clock_defaults")
    _check_keys(defaults_raw, set(_ROLES), "clock_defaults")
    for role_key, clock_raw in defaults_raw.items():
        _parse_clock(clock_raw, f"clock_defaults.{role_key}")  # validate eagerly

    nodes_raw = resolved.get("nodes")
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise InvalidConfigError("nodes", "expected a non-empty list of nodes")
    nodes = [
        _parse_node(node_raw, f"nodes[{i}]", defaults_raw)
        for i, node_raw in enumerate(nodes_raw)
    ]

    presets_raw = resolved["presets"]
    if not isinstance(presets_raw, list):
        raise InvalidConfigError("presets", "expected a list of preset names")
    presets = []
    for i, name in enumerate(presets_raw):
        if name not in BUILTIN_PRESETS:
            raise InvalidConfigError(
                f"presets[{i}]", f"unknown preset {name!r} (see 'airsync presets')"
            )
        presets.append(BUILTIN_PRESETS[name])

    workload = None
    if resolved["workload"] is not None:
        workload = _parse_workload(resolved["workload"], "workload")

    fault_probe = None
    if resolved["fault_probe"] is not None:
        fault_probe = _parse_probe(resolved["fault_probe"], "fault_probe")
        if fault_probe.at is not None and fault_probe.at > duration:
            raise InvalidConfigError("fault_probe.at", "must be within the run duration")

    return ScenarioConfig(
        nodes=nodes,
        link=_parse_link(resolved["link"], "link"),
        sync_plan=_parse_plan(resolved["sync_plan"], "sync_plan"),
        workload=workload,
        presets=presets,
        duration=duration,
        sampling_grid=sampling,
        seed=seed,
        fault_probe=fault_probe,
        raw=resolved,
    )


def load_config(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidConfigError("", f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InvalidConfigError("", f"{path}: top level must be a mapping")
    return validate_config(raw)


# --- parameter paths (sweeps) -----------------------------------------------------

_PATH_TOKEN = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)((?:\[\d+\])*)$")


def _split_path(path: str) -> list[str | int]:
    tokens: list[str | int] = []
    for part in path.split("."):
        match = _PATH_TOKEN.match(part)
        if not match:
            raise InvalidConfigError("sweep.path", f"malformed path segment {part!r}")
        tokens.append(match.group(1))
        for idx in re.findall(r"\[(\d+)\]", match.group(2)):
            tokens.append(int(idx))
    return tokens


def _walk(raw: dict, tokens: list[str | int], path: str):
    current: Any = raw
    for token in tokens[:-1]:
        try:
            current = current[token]
        except (KeyError, IndexError, TypeError):
            raise InvalidConfigError("sweep.path", f"{path!r} does not resolve in the config") from None
    return current


def get_config_value(raw: dict, path: str) -> Any:
    tokens = _split_path(path)
    container = _walk(raw, tokens, path)
    try:
        return container[tokens[-1]]
    except (KeyError, IndexError, TypeError):
        raise InvalidConfigError("sweep.path", f"{path!r} does not resolve in the config") from None


def set_config_value(raw: dict, path: str, value: Any) -> None:
    tokens = _split_path(path)
    container = _walk(raw, tokens, path)
    last = tokens[-1]
    if isinstance(container, dict):
        container[last] = value
    elif isinstance(container, list) and isinstance(last, int) and 0 <= last < len(container):
        container[last] = value
    else:
        raise InvalidConfigError("sweep.path", f"cannot set {path!r}")


@dataclass(frozen=True)
class SweepSpec:
    path: str
    values: tuple
    repetitions: int = 1


_SWEEP_KEYS = {"path", "values", "repetitions"}


def parse_sweep_spec(raw: Any) -> SweepSpec:
    mapping = _mapping(raw, "sweep")
    _check_keys(mapping, _SWEEP_KEYS, "sweep")
    path = mapping.get("path")
    if not isinstance(path, str) or not path:
        raise InvalidConfigError("sweep.path", "required parameter path string")
    _split_path(path)
    values = mapping.get("values")
    if not isinstance(values, list) or not values:
        raise InvalidConfigError("sweep.values", "expected a non-empty list of values")
    reps = mapping.get("repetitions", 1)
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise InvalidConfigError("sweep.repetitions", "expected an integer >= 1")
    return SweepSpec(path=path, values=tuple(values), repetitions=reps)


def load_sweep_spec(path: str | Path) -> SweepSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidConfigError("sweep", f"cannot parse {path}: {exc}") from None
    return parse_sweep_spec(raw)
