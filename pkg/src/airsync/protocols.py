"""Over-the-air synchronization enablers.

Covers the cellular timing-advance loop (initial 11-bit and 6-bit update
commands on a 16*Ts grid), broadcast absolute-time distribution with limited
granularity and a scheduling window (SIB16-style), the two-way timestamped
exchange used by PTP-like signaling, inter-BS alignment by listening to or
exchanging reference signals, and the gateway relay into a wired local
domain.

Sign convention throughout: a clock's error is local reading minus the
reference at the same true instant, and a correction delta reduces the local
reading by exactly delta.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .clocks import ClockState, apply_offset_correction, clock_error, local_time, stamp
from .engine import RngStream
from .errors import (
    CausalityViolationError,
    GwNotSyncedError,
    MissingHelperError,
    NegativeTaStateError,
    NoTaStateError,
)
from .timebase import TA_STEP_TICKS, TICKS_PER_MS

TA_INITIAL_MAX = 1282
TA_UPDATE_MAX = 63
TA_UPDATE_NOOP = 31
TA_TIMER_PERIODS_MS = (500, 750, 1280, 1920, 2560, 5120, 10240)


class TaKind(Enum):
    INITIAL = "initial"
    UPDATE = "update"


@dataclass(frozen=True)
class TaCommand:
    """Quantized timing-advance command.

    Initial commands carry an absolute index in [0, 1282] (advance =
    value * 16*Ts); update commands carry a value in [0, 63] adjusting the
    current timing by (value - 31) * 16*Ts.
    """

    kind: TaKind
    value: int

    def __post_init__(self):
        limit = TA_INITIAL_MAX if self.kind is TaKind.INITIAL else TA_UPDATE_MAX
        if not 0 <= self.value <= limit:
            raise ValueError(f"{self.kind.value} TA value {self.value} outside [0, {limit}]")


@dataclass(frozen=True)
class TaTimerConfig:
    """Periodic TA maintenance timer; values are the standard set, in ms."""

    period_ms: int = 10240

    def __post_init__(self):
        if self.period_ms not in TA_TIMER_PERIODS_MS:
            raise ValueError(
                f"TA timer {self.period_ms} ms not in {TA_TIMER_PERIODS_MS}"
            )

    @property
    def period_ticks(self) -> int:
        return self.period_ms * TICKS_PER_MS


class StampMode(Enum):
    AT_SCHEDULE = "at_schedule"
    AT_TRANSMIT = "at_transmit"


@dataclass(frozen=True)
class SibConfig:
    """Broadcast-time configuration: quantization step, cadence, window."""

    granularity: int = 10 * TICKS_PER_MS
    periodicity: int = 80 * TICKS_PER_MS
    si_window: int = 40 * TICKS_PER_MS
    stamp_mode: StampMode = StampMode.AT_TRANSMIT

    def __post_init__(self):
        if self.granularity < 0:
            raise ValueError("granularity must be >= 0")
        if self.si_window > self.periodicity:
            raise ValueError("si_window must not exceed periodicity")


@dataclass(frozen=True)
class ExchangeRecord:
    """Four timestamps of a two-way transfer; t1/t4 on the initiator clock."""

    t1: int
    t2: int
    t3: int
    t4: int


# --- timing advance ---------------------------------------------------------


def compute_ta_initial(rtt_measured: int) -> TaCommand:
    """Initial TA from a measured round trip: floor to the 16*Ts grid, clamp."""
    if rtt_measured < 0:
        raise ValueError("measured RTT must be >= 0")
    return TaCommand(TaKind.INITIAL, min(rtt_measured // TA_STEP_TICKS, TA_INITIAL_MAX))


def compute_ta_update(misalignment: int) -> TaCommand:
    """Update command correcting a signed uplink misalignment (nearest step)."""
    steps = round(misalignment / TA_STEP_TICKS)
    return TaCommand(TaKind.UPDATE, max(0, min(TA_UPDATE_NOOP + steps, TA_UPDATE_MAX)))


def apply_ta_command(current_index: Optional[int], command: TaCommand) -> int:
    """Fold a command into the cumulative TA index (clamped at zero).

    Initial commands set the index; updates shift it by (value - 31).
    """
    if command.kind is TaKind.INITIAL:
        return command.value
    if current_index is None:
        raise NoTaStateError("update command received with no TA state")
    return max(0, current_index + command.value - TA_UPDATE_NOOP)


def delay_estimate_from_index(ta_index: int) -> int:
    """One-way propagation estimate from a cumulative TA index: N * 8*Ts."""
    if ta_index < 0:
        raise NegativeTaStateError(f"cumulative TA index {ta_index} < 0")
    return ta_index * TA_STEP_TICKS // 2


def one_way_delay_estimate(ta: TaCommand, current_ta_state: Optional[int] = None) -> int:
    """One-way delay implied by applying ``ta`` on top of the current index.

    Half the quantized round trip; the quantization residual relative to the
    true one-way delay lies in [0, 8*Ts) for floor-quantized initial
    commands.
    """
    if ta.kind is TaKind.INITIAL:
        index = ta.value
    else:
        if current_ta_state is None:
            raise NoTaStateError("update command requires a current TA index")
        index = current_ta_state + ta.value - TA_UPDATE_NOOP
    if index < 0:
        raise NegativeTaStateError(f"cumulative TA index {index} < 0")
    return delay_estimate_from_index(index)


def measure_rtt(
    true_one_way: int,
    noise_sigma: float,
    wrong_bin_prob: float,
    rng: RngStream,
) -> int:
    """Round-trip measurement with Gaussian error and occasional bin slips.

    With probability ``wrong_bin_prob`` the result lands one full TA step
    (16*Ts) off, sign equiprobable; the result never goes below zero.
    """
    if true_one_way < 0:
        raise ValueError("true one-way delay must be >= 0")
    if not 0.0 <= wrong_bin_prob <= 1.0:
        raise ValueError("wrong_bin_prob must be in [0, 1]")
    rtt = 2 * true_one_way + rng.gauss_ticks(noise_sigma)
    if wrong_bin_prob > 0 and rng.random() < wrong_bin_prob:
        rtt += TA_STEP_TICKS if rng.random() < 0.5 else -TA_STEP_TICKS
    return max(0, rtt)


# --- broadcast time (SIB16-style) -------------------------------------------


def quantize_broadcast_time(t: int, granularity: int) -> int:
    """Truncate a time value to the broadcast granularity grid (0 = exact)."""
    if granularity < 0:
        raise ValueError("granularity must be >= 0")
    if granularity == 0:
        return t
    return (t // granularity) * granularity


@dataclass(frozen=True)
class SibSyncResult:
    ue_clock: ClockState
    correction: int   # delta removed from the UE reading
    error: int        # post-correction UE error vs reference at applied_at
    applied_at: int   # true arrival time of the broadcast


def sib16_sync_cycle(
    bs_clock: ClockState,
    ue_clock: ClockState,
    sib: SibConfig,
    ta_index: Optional[int],
    link_delay: int,
    rng: RngStream,
    at: int = 0,
) -> SibSyncResult:
    """One broadcast-time sync: UE adopts quantized BS time plus TA estimate.

    The broadcast scheduled at ``at`` transmits after a uniform draw in
    [0, si_window]. AT_SCHEDULE stamps the BS clock at creation time (the
    scheduling delay becomes error), AT_TRANSMIT stamps at the actual
    transmission instant. The UE sets its clock so that its reading at the
    arrival instant equals quantize(stamp) + TA one-way estimate; the UE's
    own adjustment is noiseless (noise models message timestamping only).
    """
    if ta_index is None:
        raise NoTaStateError("SIB16 sync requires a current TA state")
    sched_delay = rng.integers(0, sib.si_window + 1) if sib.si_window > 0 else 0
    t_tx = at + sched_delay
    if sib.stamp_mode is StampMode.AT_SCHEDULE:
        broadcast_value = stamp(bs_clock, at, rng)
    else:
        broadcast_value = stamp(bs_clock, t_tx, rng)
    arrival = t_tx + link_delay
    target = quantize_broadcast_time(broadcast_value, sib.granularity) + delay_estimate_from_index(ta_index)
    delta = local_time(ue_clock, arrival) - target
    corrected = apply_offset_correction(ue_clock, delta, at=arrival)
    return SibSyncResult(
        ue_clock=corrected,
        correction=delta,
        error=clock_error(corrected, arrival),
        applied_at=arrival,
    )


# --- two-way exchange --------------------------------------------------------


def _div2_trunc(value: int) -> tuple[int, bool]:
    """Halve toward zero; flag a half-tick remainder instead of rounding it away."""
    quotient = abs(value) // 2
    if value < 0:
        quotient = -quotient
    return quotient, (value % 2 != 0)


@dataclass(frozen=True)
class TwowayResult:
    offset: int                 # responder minus initiator clock offset
    mean_path_delay: int
    offset_half_tick: bool
    delay_half_tick: bool


def twoway_offset(rec: ExchangeRecord) -> TwowayResult:
    """Offset and mean path delay of a two-way exchange.

    offset = ((t2-t1) - (t4-t3)) / 2, delay = ((t2-t1) + (t4-t3)) / 2.
    Integer halving truncates toward zero; dropped half ticks are flagged so
    exactness audits can reconstruct the numerator.
    """
    if rec.t4 < rec.t1 or rec.t3 < rec.t2:
        raise CausalityViolationError(
            f"timestamps not causally ordered: {rec}"
        )
    forward = rec.t2 - rec.t1
    backward = rec.t4 - rec.t3
    offset, offset_half = _div2_trunc(forward - backward)
    delay, delay_half = _div2_trunc(forward + backward)
    return TwowayResult(offset, delay, offset_half, delay_half)


def twoway_exchange(
    initiator_clock: ClockState,
    responder_clock: ClockState,
    at: int,
    delay_forward: int,
    delay_back: int,
    turnaround: int,
    rng_initiator: RngStream,
    rng_responder: RngStream,
) -> ExchangeRecord:
    """Forward-simulate a two-way transfer; each side stamps with its own clock."""
    t_send = at
    t_recv = at + delay_forward
    t_reply = t_recv + turnaround
    t_back = t_reply + delay_back
    return ExchangeRecord(
        t1=stamp(initiator_clock, t_send, rng_initiator),
        t2=stamp(responder_clock, t_recv, rng_responder),
        t3=stamp(responder_clock, t_reply, rng_responder),
        t4=stamp(initiator_clock, t_back, rng_initiator),
    )


# --- inter-BS alignment -------------------------------------------------------


class RibsMode(Enum):
    LISTEN_ONLY = "listen_only"
    LISTEN_TA = "listen_ta"
    TWO_WAY = "two_way"


@dataclass(frozen=True)
class RibsResult:
    bs_b_clock: ClockState
    correction: int
    error: int       # post-alignment BS-B error vs reference
    applied_at: int


def ribs_align(
    mode: RibsMode,
    bs_a_clock: ClockState,
    bs_b_clock: ClockState,
    inter_bs_delay: Union[int, tuple[int, int]],
    rng: RngStream,
    helper_ta_index: Optional[int] = None,
    at: int = 0,
    turnaround: int = TICKS_PER_MS,
) -> RibsResult:
    """Align BS-B to BS-A over the radio interface.

    LISTEN_ONLY adopts BS-A's stamped signal as-is, leaving the inter-BS
    propagation delay as residual error. LISTEN_TA additionally compensates
    with a helper UE's TA-derived delay estimate (helper assumed co-located
    with BS-B). TWO_WAY runs a timestamped exchange, leaving only half of
    any delay asymmetry. ``inter_bs_delay`` is a single delay or a
    (forward, back) pair.
    """
    if isinstance(inter_bs_delay, tuple):
        delay_forward, delay_back = inter_bs_delay
    else:
        delay_forward = delay_back = inter_bs_delay

    if mode is RibsMode.TWO_WAY:
        rec = twoway_exchange(
            bs_a_clock, bs_b_clock, at, delay_forward, delay_back, turnaround, rng, rng
        )
        delta = twoway_offset(rec).offset
        applied_at = at + delay_forward + turnaround + delay_back
    else:
        reference_stamp = stamp(bs_a_clock, at, rng)
        applied_at = at + delay_forward
        if mode is RibsMode.LISTEN_ONLY:
            target = reference_stamp
        else:
            if helper_ta_index is None:
                raise MissingHelperError(
                    "listen-with-TA alignment requires a helper-UE TA state"
                )
            target = reference_stamp + delay_estimate_from_index(helper_ta_index)
        delta = local_time(bs_b_clock, applied_at) - target

    corrected = apply_offset_correction(bs_b_clock, delta, at=applied_at)
    return RibsResult(
        bs_b_clock=corrected,
        correction=delta,
        error=clock_error(corrected, applied_at),
        applied_at=applied_at,
    )


# --- gateway relay -------------------------------------------------------------


@dataclass(frozen=True)
class RelayResult:
    device_clock: ClockState
    correction: int
    error: int


def gw_relay_sync(
    gw_clock: ClockState,
    device_clock: ClockState,
    local_domain_error_sigma: float,
    rng: RngStream,
    at: int = 0,
) -> RelayResult:
    """Gateway redistributes its (OTA-synced) time into the wired domain.

    The legacy device ends up at the gateway's own error plus a Gaussian
    local-domain term; the gateway must have completed at least one OTA sync.
    """
    if gw_clock.last_sync_at is None:
        raise GwNotSyncedError("gateway has not completed an OTA sync")
    target = local_time(gw_clock, at) + rng.gauss_ticks(local_domain_error_sigma)
    delta = local_time(device_clock, at) - target
    corrected = apply_offset_correction(device_clock, delta, at=at)
    return RelayResult(
        device_clock=corrected,
        correction=delta,
        error=clock_error(corrected, at),
    )
