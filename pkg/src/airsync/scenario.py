"""Scenario assembly and execution.

Builds node graphs (reference source, base stations, UEs, gateways, legacy
devices, PMUs), wires link models and synchronization plans, and drives the
event loop: inter-BS alignment, periodic per-device OTA sync, gateway relay
into the wired domain, isochronous command deliveries, and offset sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

from .clocks import ClockState, apply_offset_correction, clock_error, stamp
from .engine import Event, RngStream, Simulator, derive_stream
from .errors import InvalidConfigError, InvalidGeometryError
from .protocols import (
    RibsMode,
    SibConfig,
    TaTimerConfig,
    apply_ta_command,
    compute_ta_initial,
    compute_ta_update,
    gw_relay_sync,
    measure_rtt,
    ribs_align,
    sib16_sync_cycle,
    twoway_exchange,
    twoway_offset,
)
from .timebase import TA_STEP_TICKS, TICKS_PER_MS, TICKS_PER_SECOND, propagation_ticks

if TYPE_CHECKING:
    from .config import ScenarioConfig


class Role(Enum):
    REFERENCE = "reference"
    BASE_STATION = "base_station"
    UE = "ue"
    GATEWAY = "gateway"
    LEGACY = "legacy_device"
    PMU = "pmu"


DEVICE_ROLES = (Role.UE, Role.GATEWAY, Role.LEGACY, Role.PMU)
ATTACHED_ROLES = (Role.UE, Role.GATEWAY, Role.PMU)


@dataclass
class Node:
    id: str
    role: Role
    position: Optional[tuple[float, float]] = None
    attach_to: Optional[str] = None
    clock: ClockState = field(default_factory=ClockState)


@dataclass(frozen=True)
class DelayDistribution:
    """Extra (scheduling/queueing) delay on top of propagation, in ticks."""

    kind: str = "none"      # none | uniform | normal
    low: int = 0
    high: int = 0
    mean: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "normal"):
            raise ValueError(f"unknown delay distribution {self.kind!r}")
        if self.kind == "uniform" and self.high < self.low:
            raise ValueError("uniform delay needs high >= low")

    def draw(self, rng: RngStream) -> int:
        if self.kind == "none":
            return 0
        if self.kind == "uniform":
            return rng.integers(self.low, self.high + 1)
        return max(0, round(rng.normal(self.mean, self.sigma)))


@dataclass(frozen=True)
class LinkModel:
    extra_delay: DelayDistribution = DelayDistribution()
    loss_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")


class Enabler(Enum):
    TA_SIB16 = "ta_sib16"
    RIBS_UE = "ribs_ue"
    DEDICATED_TWO_WAY = "dedicated_two_way"


class BsAlignmentMode(Enum):
    PERFECT = "perfect"
    FIXED_ERROR = "fixed_error"
    RIBS = "ribs"


@dataclass(frozen=True)
class BsAlignment:
    mode: BsAlignmentMode = BsAlignmentMode.PERFECT
    error: int = 0
    ribs_mode: Optional[RibsMode] = None
    realign_period: Optional[int] = None


@dataclass(frozen=True)
class SyncPlan:
    enabler: Enabler = Enabler.TA_SIB16
    resync_period: int = 80 * TICKS_PER_MS
    ta_timer: TaTimerConfig = TaTimerConfig()
    ta_noise_sigma: float = 0.0
    ta_wrong_bin_prob: float = 0.0
    sib: SibConfig = SibConfig()
    bs_alignment: BsAlignment = BsAlignment()
    gw_relay_sigma: float = 0.0
    turnaround: int = TICKS_PER_MS

    def __post_init__(self):
        if self.resync_period <= 0:
            raise ValueError("resync_period must be > 0")


@dataclass(frozen=True)
class Workload:
    """Isochronous command deliveries on an ideal grid."""

    command_period: int
    targets: tuple[str, ...]
    grid_phase: int = 0
    phase_mode: str = "median"   # median | fixed

    def __post_init__(self):
        if self.command_period <= 0:
            raise ValueError("command_period must be > 0")
        if self.phase_mode not in ("median", "fixed"):
            raise ValueError("phase_mode must be 'median' or 'fixed'")


@dataclass(frozen=True)
class FaultProbe:
    line_length_m: float
    fault_position_m: float
    wave_speed_mps: float = 3.0e8
    sync_error_bound: Optional[int] = None
    at: Optional[int] = None
    pmu_ids: Optional[tuple[str, str]] = None


@dataclass
class Scenario:
    nodes: dict[str, Node]
    link: LinkModel
    plan: SyncPlan
    workload: Optional[Workload]
    sampling_grid: int
    seed: int
    fault_probe: Optional[FaultProbe] = None


# --- trace records -----------------------------------------------------------


@dataclass(frozen=True)
class OffsetSample:
    t_true: int
    node: str
    error: int    # local reading minus reference, ticks


@dataclass(frozen=True)
class Delivery:
    node: str
    grid_index: int
    grid_point: int
    true_arrival: int
    local_stamp: int


@dataclass(frozen=True)
class CorrectionEvent:
    t_true: int
    node: str
    delta: int
    kind: str     # sib16 | two_way | gw_relay | bs_align
    error_after: int


@dataclass(frozen=True)
class FaultStamps:
    t_fault: int
    pmu_a: str
    pmu_b: str
    stamp_a: int
    stamp_b: int


@dataclass
class RawTrace:
    samples: list[OffsetSample] = field(default_factory=list)
    deliveries: list[Delivery] = field(default_factory=list)
    corrections: list[CorrectionEvent] = field(default_factory=list)
    ta_index: dict[str, int] = field(default_factory=dict)
    lost_sync: int = 0
    fault: Optional[FaultStamps] = None
    roles: dict[str, Role] = field(default_factory=dict)
    final_clocks: dict[str, ClockState] = field(default_factory=dict)
    dispatched: int = 0


# --- construction --------------------------------------------------------------


def node_distance(a: Node, b: Node) -> float:
    if a.position is None or b.position is None:
        return 0.0
    return math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])


def link_propagation(a: Node, b: Node) -> int:
    return propagation_ticks(node_distance(a, b))


def build_scenario(config: "ScenarioConfig", root_seed: Optional[int] = None) -> Scenario:
    """Instantiate the node graph; clock parameters are drawn once, here.

    Construction is pure: the same (config, seed) always produces an
    identical initial state.
    """
    seed = config.seed if root_seed is None else root_seed
    nodes: dict[str, Node] = {}
    for i, spec in enumerate(config.nodes):
        path = f"nodes[{i}]"
        if spec.id in nodes:
            raise InvalidConfigError(f"{path}.id", f"duplicate node id {spec.id!r}")
        params = spec.clock.draw(derive_stream(seed, f"init/{spec.id}"))
        nodes[spec.id] = Node(
            id=spec.id,
            role=spec.role,
            position=spec.position,
            attach_to=spec.attach_to,
            clock=ClockState(params=params),
        )

    references = [n for n in nodes.values() if n.role is Role.REFERENCE]
    if len(references) != 1:
        raise InvalidConfigError(
            "nodes", f"exactly one reference node required, found {len(references)}"
        )

    index = {node_id: i for i, node_id in enumerate(nodes)}
    for node in nodes.values():
        path = f"nodes[{index[node.id]}]"
        if node.role in (Role.UE, Role.GATEWAY):
            if node.attach_to is None:
                raise InvalidConfigError(
                    f"{path}.attach_to", f"{node.role.value} {node.id!r} must attach to a base station"
                )
        if node.role is Role.LEGACY and node.attach_to is None:
            raise InvalidConfigError(
                f"{path}.attach_to", f"legacy device {node.id!r} must attach to a gateway"
            )
        if node.role in (Role.REFERENCE, Role.BASE_STATION) and node.attach_to is not None:
            raise InvalidConfigError(
                f"{path}.attach_to", f"{node.role.value} nodes do not attach"
            )
        if node.attach_to is not None:
            parent = nodes.get(node.attach_to)
            if parent is None:
                raise InvalidConfigError(
                    f"{path}.attach_to", f"unknown node {node.attach_to!r}"
                )
            wanted = Role.GATEWAY if node.role is Role.LEGACY else Role.BASE_STATION
            if parent.role is not wanted:
                raise InvalidConfigError(
                    f"{path}.attach_to",
                    f"{node.role.value} must attach to a {wanted.value}, "
                    f"{node.attach_to!r} is a {parent.role.value}",
                )
        if node.role in (Role.BASE_STATION,) + ATTACHED_ROLES and node.position is None:
            if not (node.role is Role.PMU and node.attach_to is None):
                raise InvalidConfigError(
                    f"{path}.position", f"{node.role.value} {node.id!r} needs a position"
                )

    if config.workload is not None:
        for target in config.workload.targets:
            if target not in nodes or nodes[target].role not in DEVICE_ROLES:
                raise InvalidConfigError(
                    "workload.targets", f"{target!r} is not a device node"
                )

    if config.fault_probe is not None:
        probe = config.fault_probe
        pmu_ids = probe.pmu_ids or tuple(
            n.id for n in nodes.values() if n.role is Role.PMU
        )
        if len(pmu_ids) != 2:
            raise InvalidConfigError(
                "fault_probe", f"need exactly two PMU nodes, found {len(pmu_ids)}"
            )
        for pmu in pmu_ids:
            if pmu not in nodes or nodes[pmu].role is not Role.PMU:
                raise InvalidConfigError("fault_probe.pmu", f"{pmu!r} is not a PMU node")

    return Scenario(
        nodes=nodes,
        link=config.link,
        plan=config.sync_plan,
        workload=config.workload,
        sampling_grid=config.sampling_grid,
        seed=seed,
        fault_probe=config.fault_probe,
    )


# --- execution -------------------------------------------------------------------


class _Runner:
    """One scenario run; owns mutable clock/TA state and the trace."""

    def __init__(self, scenario: Scenario, duration: int, root_seed: int):
        self.scenario = scenario
        self.duration = duration
        self.seed = root_seed
        self.sim = Simulator()
        self.plan = scenario.plan
        self.nodes = scenario.nodes
        self.clocks: dict[str, ClockState] = {
            node_id: node.clock for node_id, node in scenario.nodes.items()
        }
        self.ta_index: dict[str, Optional[int]] = {}
        self.trace = RawTrace(roles={n.id: n.role for n in scenario.nodes.values()})
        self.base_stations = [n.id for n in scenario.nodes.values() if n.role is Role.BASE_STATION]
        self.attached: dict[str, list[str]] = {bs: [] for bs in self.base_stations}
        for node in scenario.nodes.values():
            if node.role in ATTACHED_ROLES and node.attach_to in self.attached:
                self.attached[node.attach_to].append(node.id)
        self.gw_children: dict[str, list[str]] = {}
        for node in scenario.nodes.values():
            if node.role is Role.LEGACY:
                self.gw_children.setdefault(node.attach_to, []).append(node.id)
        self.prop_cache: dict[tuple[str, str], int] = {}
        # persistent per-purpose streams so successive rounds see fresh draws
        self.ta_rng = {d: self.stream(f"ta/{d}") for bs in self.base_stations for d in self.attached[bs]}
        self.loss_rng = {d: self.stream(f"loss/{d}") for d in self.ta_rng}
        self.exchange_rng = {d: self.stream(f"exchange/{d}") for d in self.ta_rng}
        self.relay_rng: dict[str, RngStream] = {}
        for children in self.gw_children.values():
            for child in children:
                self.relay_rng[child] = self.stream(f"relay/{child}")
        self.delivery_stamp_rng: dict[str, RngStream] = {}

    def stream(self, label: str) -> RngStream:
        return derive_stream(self.seed, label)

    def prop(self, a: str, b: str) -> int:
        key = (a, b)
        if key not in self.prop_cache:
            self.prop_cache[key] = link_propagation(self.nodes[a], self.nodes[b])
        return self.prop_cache[key]

    # -- alignment --

    def align_base_stations(self, sim: Simulator, event: Event) -> None:
        align = self.plan.bs_alignment
        round_no = event.payload or 0
        for i, bs in enumerate(self.base_stations):
            clock = self.clocks[bs]
            if align.mode is BsAlignmentMode.RIBS and i > 0:
                anchor = self.base_stations[0]
                helper_index = None
                if align.ribs_mode is RibsMode.LISTEN_TA:
                    rtt = measure_rtt(
                        self.prop(anchor, bs),
                        self.plan.ta_noise_sigma,
                        self.plan.ta_wrong_bin_prob,
                        self.stream(f"ribs_helper/{bs}/{round_no}"),
                    )
                    helper_index = compute_ta_initial(rtt).value
                result = ribs_align(
                    align.ribs_mode,
                    self.clocks[anchor],
                    clock,
                    self.prop(anchor, bs),
                    self.stream(f"ribs/{bs}/{round_no}"),
                    helper_ta_index=helper_index,
                    at=sim.now,
                    turnaround=self.plan.turnaround,
                )
                self.clocks[bs] = result.bs_b_clock
                self.record_correction(result.applied_at, bs, result.correction, "bs_align", result.error)
                continue
            # anchor BS (and every BS under PERFECT/FIXED_ERROR) is steered directly
            target_error = 0
            if align.mode is BsAlignmentMode.FIXED_ERROR and i > 0:
                target_error = align.error
            delta = clock_error(clock, sim.now) - target_error
            self.clocks[bs] = apply_offset_correction(clock, delta, at=sim.now)
            self.record_correction(sim.now, bs, delta, "bs_align", target_error)
        if align.realign_period:
            next_at = sim.now + align.realign_period
            if next_at <= self.duration:
                sim.at(next_at, self.align_base_stations, kind="bs_align", payload=round_no + 1)

    # -- timing advance maintenance --

    def attach_device(self, sim: Simulator, event: Event) -> None:
        device = event.target
        bs = self.nodes[device].attach_to
        rtt = measure_rtt(
            self.prop(bs, device),
            self.plan.ta_noise_sigma,
            self.plan.ta_wrong_bin_prob,
            self.ta_rng[device],
        )
        self.ta_index[device] = apply_ta_command(None, compute_ta_initial(rtt))

    def refresh_ta(self, sim: Simulator, event: Event) -> None:
        device = event.target
        current = self.ta_index.get(device)
        if current is not None:
            bs = self.nodes[device].attach_to
            rtt = measure_rtt(
                self.prop(bs, device),
                self.plan.ta_noise_sigma,
                self.plan.ta_wrong_bin_prob,
                self.ta_rng[device],
            )
            misalignment = rtt - current * TA_STEP_TICKS
            self.ta_index[device] = apply_ta_command(current, compute_ta_update(misalignment))
        next_at = sim.now + self.plan.ta_timer.period_ticks
        if next_at <= self.duration:
            sim.at(next_at, self.refresh_ta, kind="ta_refresh", target=device)

    # -- per-round OTA sync --

    def sync_round(self, sim: Simulator, event: Event) -> None:
        bs = event.target
        round_no = event.payload
        for device in self.attached[bs]:
            if self.scenario.link.loss_prob > 0 and self.loss_rng[device].random() < self.scenario.link.loss_prob:
                self.trace.lost_sync += 1
                continue
            if self.plan.enabler is Enabler.TA_SIB16:
                self.sib_sync(sim, bs, device, round_no)
            else:
                self.twoway_sync(sim, bs, device)
        next_at = sim.now + self.plan.resync_period
        if next_at <= self.duration:
            sim.at(next_at, self.sync_round, kind="sync_round", target=bs, payload=round_no + 1)

    def sib_sync(self, sim: Simulator, bs: str, device: str, round_no: int) -> None:
        # one broadcast per (BS, round): re-deriving the same labeled stream
        # for every attached device reproduces the same scheduling draw and
        # BS stamp, i.e. true broadcast semantics
        result = sib16_sync_cycle(
            self.clocks[bs],
            self.clocks[device],
            self.plan.sib,
            self.ta_index.get(device),
            self.prop(bs, device),
            self.stream(f"sib/{bs}/{round_no}"),
            at=sim.now,
        )

        def apply(sim: Simulator, _event: Event, device=device, result=result) -> None:
            self.clocks[device] = result.ue_clock
            self.record_correction(sim.now, device, result.correction, "sib16", result.error)
            self.relay_to_domain(sim, device)

        sim.at(result.applied_at, apply, kind="apply_sync", target=device)

    def twoway_sync(self, sim: Simulator, bs: str, device: str) -> None:
        rng = self.exchange_rng[device]
        prop = self.prop(bs, device)
        if self.plan.enabler is Enabler.DEDICATED_TWO_WAY:
            # dynamically scheduled signaling: an independent queueing draw in
            # each direction, which is exactly what makes the path asymmetric
            delay_forward = prop + self.scenario.link.extra_delay.draw(rng)
            delay_back = prop + self.scenario.link.extra_delay.draw(rng)
        else:
            delay_forward = delay_back = prop
        record = twoway_exchange(
            self.clocks[bs], self.clocks[device], sim.now,
            delay_forward, delay_back, self.plan.turnaround, rng, rng,
        )
        delta = twoway_offset(record).offset
        applied_at = sim.now + delay_forward + self.plan.turnaround + delay_back + prop

        def apply(sim: Simulator, _event: Event, device=device, delta=delta) -> None:
            corrected = apply_offset_correction(self.clocks[device], delta, at=sim.now)
            self.clocks[device] = corrected
            self.record_correction(sim.now, device, delta, "two_way", clock_error(corrected, sim.now))
            self.relay_to_domain(sim, device)

        sim.at(applied_at, apply, kind="apply_sync", target=device)

    def relay_to_domain(self, sim: Simulator, device: str) -> None:
        for child in self.gw_children.get(device, ()):  # only gateways have children
            result = gw_relay_sync(
                self.clocks[device],
                self.clocks[child],
                self.plan.gw_relay_sigma,
                self.relay_rng[child],
                at=sim.now,
            )
            self.clocks[child] = result.device_clock
            self.record_correction(sim.now, child, result.correction, "gw_relay", result.error)

    # -- observation --

    def record_correction(self, t: int, node: str, delta: int, kind: str, error_after: int) -> None:
        self.trace.corrections.append(CorrectionEvent(t, node, delta, kind, error_after))

    def sample_offsets(self, sim: Simulator, _event: Event) -> None:
        for node_id, node in self.nodes.items():
            if node.role is Role.REFERENCE:
                continue
            self.trace.samples.append(
                OffsetSample(sim.now, node_id, clock_error(self.clocks[node_id], sim.now))
            )
        next_at = sim.now + self.scenario.sampling_grid
        if next_at <= self.duration:
            sim.at(next_at, self.sample_offsets, kind="sample")

    def deliver_command(self, sim: Simulator, event: Event) -> None:
        target = event.target
        grid_index, grid_point = event.payload
        local = stamp(self.clocks[target], sim.now, self.delivery_stamp_rng[target])
        self.trace.deliveries.append(
            Delivery(target, grid_index, grid_point, sim.now, local)
        )

    def run_fault_probe(self, sim: Simulator, _event: Event) -> None:
        probe = self.scenario.fault_probe
        pmu_a, pmu_b = probe.pmu_ids or tuple(
            n.id for n in self.nodes.values() if n.role is Role.PMU
        )[:2]
        stamp_a, stamp_b = fault_wave_stamps(
            self.clocks[pmu_a], self.clocks[pmu_b],
            probe.fault_position_m, probe.line_length_m, probe.wave_speed_mps,
            at=sim.now,
            rng_a=self.stream(f"fault/{pmu_a}"),
            rng_b=self.stream(f"fault/{pmu_b}"),
        )
        self.trace.fault = FaultStamps(sim.now, pmu_a, pmu_b, stamp_a, stamp_b)

    # -- assembly --

    def run(self) -> RawTrace:
        sim = self.sim
        sim.at(0, self.align_base_stations, kind="bs_align", payload=0)
        for bs in self.base_stations:
            for device in self.attached[bs]:
                sim.at(0, self.attach_device, kind="attach", target=device)
        for bs in self.base_stations:
            if self.attached[bs]:
                sim.at(0, self.sync_round, kind="sync_round", target=bs, payload=0)
        for device in self.ta_rng:
            period = self.plan.ta_timer.period_ticks
            if period <= self.duration:
                sim.at(period, self.refresh_ta, kind="ta_refresh", target=device)
        sim.at(0, self.sample_offsets, kind="sample")

        workload = self.scenario.workload
        if workload is not None:
            for target in workload.targets:
                self.delivery_stamp_rng[target] = self.stream(f"delivery_stamp/{target}")
                extra_rng = self.stream(f"delivery/{target}")
                parent = self.nodes[target].attach_to
                prop = self.prop(parent, target) if parent else 0
                k = 0
                while True:
                    grid_point = workload.grid_phase + k * workload.command_period
                    if grid_point > self.duration:
                        break
                    arrival = grid_point + prop + self.scenario.link.extra_delay.draw(extra_rng)
                    if arrival <= self.duration:
                        sim.at(arrival, self.deliver_command, kind="delivery",
                               target=target, payload=(k, grid_point))
                    k += 1

        if self.scenario.fault_probe is not None:
            probe_at = self.scenario.fault_probe.at
            sim.at(self.duration if probe_at is None else probe_at,
                   self.run_fault_probe, kind="fault_probe")

        self.trace.dispatched = sim.run_until(self.duration)
        self.trace.ta_index = {d: i for d, i in self.ta_index.items() if i is not None}
        self.trace.final_clocks = dict(self.clocks)
        return self.trace


def run_scenario(scenario: Scenario, duration: int, root_seed: Optional[int] = None) -> RawTrace:
    """Execute one scenario for ``duration`` ticks and return the raw trace."""
    if duration <= 0:
        raise ValueError("duration must be > 0")
    seed = scenario.seed if root_seed is None else root_seed
    return _Runner(scenario, duration, seed).run()


# --- fault probe -------------------------------------------------------------------


def fault_wave_stamps(
    clock_a: ClockState,
    clock_b: ClockState,
    fault_position: float,
    line_length: float,
    wave_speed: float,
    at: int = 0,
    rng_a: Optional[RngStream] = None,
    rng_b: Optional[RngStream] = None,
) -> tuple[int, int]:
    """True wave arrivals at the two line ends, stamped by each PMU's clock."""
    if line_length <= 0 or not 0 <= fault_position <= line_length or wave_speed <= 0:
        raise InvalidGeometryError(
            f"fault at {fault_position} m on a {line_length} m line "
            f"(wave speed {wave_speed} m/s)"
        )
    arrival_a = at + round(fault_position / wave_speed * TICKS_PER_SECOND)
    arrival_b = at + round((line_length - fault_position) / wave_speed * TICKS_PER_SECOND)
    rng_a = rng_a or derive_stream(0, "fault/a")
    rng_b = rng_b or derive_stream(0, "fault/b")
    return stamp(clock_a, arrival_a, rng_a), stamp(clock_b, arrival_b, rng_b)


def pmu_fault_event(
    scenario: Scenario,
    fault_position: float,
    line_length: float,
    wave_speed: float,
    at: int = 0,
) -> tuple[int, int]:
    """Stamp a line fault with the scenario's two PMUs (current clock states)."""
    pmus = [n.id for n in scenario.nodes.values() if n.role is Role.PMU]
    if scenario.fault_probe is not None and scenario.fault_probe.pmu_ids:
        pmus = list(scenario.fault_probe.pmu_ids)
    if len(pmus) < 2:
        raise InvalidGeometryError("scenario needs two PMU nodes for a fault event")
    pmu_a, pmu_b = pmus[0], pmus[1]
    return fault_wave_stamps(
        scenario.nodes[pmu_a].clock,
        scenario.nodes[pmu_b].clock,
        fault_position,
        line_length,
        wave_speed,
        at=at,
        rng_a=derive_stream(scenario.seed, f"fault/{pmu_a}"),
        rng_b=derive_stream(scenario.seed, f"fault/{pmu_b}"),
    )
