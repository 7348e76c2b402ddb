"""Timing advance, broadcast-time sync, two-way exchange, RIBS, GW relay."""

import numpy as np
import pytest

from airsync.clocks import ClockParams, ClockState, clock_error, ideal_clock
from airsync.engine import derive_stream
from airsync.errors import (
    CausalityViolationError,
    GwNotSyncedError,
    MissingHelperError,
    NegativeTaStateError,
    NoTaStateError,
)
from airsync.protocols import (
    ExchangeRecord,
    RibsMode,
    SibConfig,
    StampMode,
    TaCommand,
    TaKind,
    TaTimerConfig,
    apply_ta_command,
    compute_ta_initial,
    compute_ta_update,
    delay_estimate_from_index,
    gw_relay_sync,
    measure_rtt,
    one_way_delay_estimate,
    quantize_broadcast_time,
    ribs_align,
    sib16_sync_cycle,
    twoway_exchange,
    twoway_offset,
)
from airsync.timebase import (
    HALF_TA_STEP_TICKS,
    TA_STEP_TICKS,
    TICKS_PER_MS,
    TICKS_PER_US,
    propagation_ticks,
    ticks_to_ns,
)

US = TICKS_PER_US
MS = TICKS_PER_MS


# --- timing advance -----------------------------------------------------------


def test_ta_initial_zero_rtt():
    assert compute_ta_initial(0) == TaCommand(TaKind.INITIAL, 0)


def test_ta_initial_step_boundary():
    assert compute_ta_initial(TA_STEP_TICKS).value == 1
    assert compute_ta_initial(TA_STEP_TICKS - 1).value == 0


def test_ta_initial_three_km_cell_edge():
    # 3 km edge: rtt = 2 * 3000 m / 3e8 = 20 us = 614400 ticks
    rtt = 2 * propagation_ticks(3000.0)
    assert rtt == 614_400
    expected = rtt // TA_STEP_TICKS  # arithmetic oracle: 38
    assert expected == 38
    assert compute_ta_initial(rtt).value == expected


def test_ta_initial_clamps_at_max():
    assert compute_ta_initial(10**9).value == 1282


def test_ta_update_zero_is_noop_value():
    assert compute_ta_update(0) == TaCommand(TaKind.UPDATE, 31)


def test_ta_update_one_step_positive():
    assert compute_ta_update(TA_STEP_TICKS).value == 32


def test_ta_update_eight_steps_negative():
    assert compute_ta_update(-8 * TA_STEP_TICKS).value == 31 - 8  # oracle: 23


def test_ta_update_clamps_both_ends():
    assert compute_ta_update(-100 * TA_STEP_TICKS).value == 0
    assert compute_ta_update(100 * TA_STEP_TICKS).value == 63


def test_ta_command_value_ranges():
    with pytest.raises(ValueError):
        TaCommand(TaKind.INITIAL, 1283)
    with pytest.raises(ValueError):
        TaCommand(TaKind.UPDATE, 64)


def test_apply_ta_command_accumulates_and_clamps():
    index = apply_ta_command(None, TaCommand(TaKind.INITIAL, 5))
    assert index == 5
    index = apply_ta_command(index, TaCommand(TaKind.UPDATE, 33))
    assert index == 7
    index = apply_ta_command(index, TaCommand(TaKind.UPDATE, 0))
    assert index == 0  # 7 - 31 clamps at zero
    with pytest.raises(NoTaStateError):
        apply_ta_command(None, TaCommand(TaKind.UPDATE, 31))


def test_one_way_estimate_zero_index():
    assert one_way_delay_estimate(TaCommand(TaKind.INITIAL, 0)) == 0


def test_one_way_estimate_single_step_is_half_ta_step():
    estimate = one_way_delay_estimate(TaCommand(TaKind.INITIAL, 1))
    assert estimate == 8 * 1000 == HALF_TA_STEP_TICKS
    # half of the 16*Ts step, ~260.4 ns
    assert ticks_to_ns(estimate) == pytest.approx(260.4166, abs=1e-3)


def test_one_way_estimate_three_km_residual():
    tau = propagation_ticks(3000.0)  # 10 us
    command = compute_ta_initial(2 * tau)
    estimate = one_way_delay_estimate(command)
    assert estimate == 38 * HALF_TA_STEP_TICKS == 304_000
    residual = tau - estimate  # ~104 ns
    assert residual == 3200
    assert ticks_to_ns(residual) == pytest.approx(104.16, abs=0.01)


def test_one_way_estimate_negative_state_rejected():
    with pytest.raises(NegativeTaStateError):
        one_way_delay_estimate(TaCommand(TaKind.UPDATE, 0), current_ta_state=10)
    with pytest.raises(NoTaStateError):
        one_way_delay_estimate(TaCommand(TaKind.UPDATE, 31), current_ta_state=None)
    with pytest.raises(NegativeTaStateError):
        delay_estimate_from_index(-1)


def test_ta_quantization_bound_exhaustive():
    # for every one-way delay in one full 16*Ts period, the floor-quantized
    # estimate undershoots by [0, 8*Ts)
    for tau in range(0, TA_STEP_TICKS, 7):
        estimate = one_way_delay_estimate(compute_ta_initial(2 * tau))
        assert 0 <= tau - estimate < HALF_TA_STEP_TICKS


def test_measure_rtt_noiseless():
    rng = derive_stream(0, "rtt")
    assert measure_rtt(1234, 0.0, 0.0, rng) == 2468


def test_measure_rtt_forced_wrong_bin():
    rng = derive_stream(1, "rtt-bin")
    for _ in range(50):
        result = measure_rtt(100_000, 0.0, 1.0, rng)
        assert abs(result - 200_000) == TA_STEP_TICKS


def test_measure_rtt_noise_statistics():
    sigma = 3072.0  # 100 ns
    rng = derive_stream(2, "rtt-noise")
    tau = 500_000
    draws = np.array([measure_rtt(tau, sigma, 0.0, rng) - 2 * tau for _ in range(100_000)])
    assert abs(draws.std() - sigma) / sigma < 0.05


def test_measure_rtt_floors_at_zero():
    rng = derive_stream(3, "rtt-floor")
    for _ in range(50):
        assert measure_rtt(0, 0.0, 1.0, rng) >= 0


def test_ta_timer_values():
    assert TaTimerConfig(2560).period_ticks == 2560 * MS
    with pytest.raises(ValueError):
        TaTimerConfig(1000)


# --- broadcast time -------------------------------------------------------------


def test_quantize_zero_granularity_is_identity():
    assert quantize_broadcast_time(123_456_789, 0) == 123_456_789


def test_quantize_floor_arithmetic():
    t = int(123.4567 * MS)  # exactly 3_792_589_824 ticks
    assert quantize_broadcast_time(t, 10 * MS) == 120 * MS


def test_quantize_idempotent_on_grid():
    assert quantize_broadcast_time(120 * MS, 10 * MS) == 120 * MS


def _sib(granularity=0, si_window=0, mode=StampMode.AT_TRANSMIT, periodicity=80 * MS):
    return SibConfig(granularity=granularity, periodicity=periodicity,
                     si_window=si_window, stamp_mode=mode)


def test_sib_cycle_ideal_is_exact():
    # no quantization, stamp at transmit, delay exactly on the 8*Ts grid
    tau = 3 * HALF_TA_STEP_TICKS * 2  # 3 full TA steps
    index = compute_ta_initial(2 * tau).value
    result = sib16_sync_cycle(
        ideal_clock(), ClockState(params=ClockParams(theta0=5000)),
        _sib(), index, tau, derive_stream(0, "sib-ideal"), at=10 * MS,
    )
    assert result.error == 0
    assert clock_error(result.ue_clock, result.applied_at) == 0


def test_sib_cycle_requires_ta_state():
    with pytest.raises(NoTaStateError):
        sib16_sync_cycle(ideal_clock(), ideal_clock(), _sib(), None, 0,
                         derive_stream(0, "sib-nota"))


def test_sib_cycle_quantization_mean_half_granularity():
    # sweep the broadcast phase across one 10 ms grid interval: the error is
    # uniform in [0, g) with mean ~g/2
    g = 10 * MS
    errors = []
    for k in range(200):
        at = 100 * MS + k * (g // 200)
        result = sib16_sync_cycle(
            ideal_clock(), ideal_clock(), _sib(granularity=g), 0, 0,
            derive_stream(0, "sib-quant"), at=at,
        )
        errors.append(-result.error)
    assert all(0 <= e < g for e in errors)
    assert abs(np.mean(errors) - g / 2) / (g / 2) < 0.02


def test_sib_cycle_granularity_plus_ta_bound_exhaustive():
    # |error| <= g + 8*Ts for every delay phase in one 16*Ts period
    g = US
    bound = g + HALF_TA_STEP_TICKS
    at = 987_654_321
    for tau in range(0, TA_STEP_TICKS, 97):
        index = compute_ta_initial(2 * tau).value
        result = sib16_sync_cycle(
            ideal_clock(), ideal_clock(), _sib(granularity=g), index, tau,
            derive_stream(0, "sib-bound"), at=at,
        )
        assert abs(result.error) < bound


def test_sib_cycle_error_decomposition():
    # each error source isolated matches its analytic value exactly, and the
    # combined case matches the sum of the terms
    at = 400 * MS + 1234
    bs_sigma = 500.0

    # quantization only
    g = US
    result = sib16_sync_cycle(ideal_clock(), ideal_clock(), _sib(granularity=g),
                              0, 0, derive_stream(0, "d1"), at=at)
    assert result.error == -(at % g)

    # scheduling only (stamp at schedule time, window > 0)
    window = 7 * MS
    seed_label = (9, "d2")
    result = sib16_sync_cycle(
        ideal_clock(), ideal_clock(),
        _sib(si_window=window, mode=StampMode.AT_SCHEDULE),
        0, 0, derive_stream(*seed_label), at=at,
    )
    sched = derive_stream(*seed_label).integers(0, window + 1)  # replay the draw
    assert result.error == -sched

    # TA residual only
    tau = 5 * TA_STEP_TICKS + 3000
    index = compute_ta_initial(2 * tau).value
    result = sib16_sync_cycle(ideal_clock(), ideal_clock(), _sib(), index, tau,
                              derive_stream(0, "d3"), at=at)
    assert result.error == -(tau - delay_estimate_from_index(index))

    # stamp noise only
    seed_label = (11, "d4")
    bs = ClockState(params=ClockParams(stamp_noise_sigma=bs_sigma))
    result = sib16_sync_cycle(bs, ideal_clock(), _sib(), 0, 0,
                              derive_stream(*seed_label), at=at)
    noise = derive_stream(*seed_label).gauss_ticks(bs_sigma)
    assert result.error == noise

    # all sources together (AT_SCHEDULE): error = noise - sched - quant - residual
    seed_label = (13, "d5")
    result = sib16_sync_cycle(
        bs, ideal_clock(),
        _sib(granularity=g, si_window=window, mode=StampMode.AT_SCHEDULE),
        index, tau, derive_stream(*seed_label), at=at,
    )
    replay = derive_stream(*seed_label)
    sched = replay.integers(0, window + 1)
    noise = replay.gauss_ticks(bs_sigma)
    stamped = at + noise
    expected = noise - (stamped % g) - sched - (tau - delay_estimate_from_index(index))
    assert result.error == expected


def test_sib_config_validation():
    with pytest.raises(ValueError):
        SibConfig(granularity=-1)
    with pytest.raises(ValueError):
        SibConfig(si_window=81 * MS, periodicity=80 * MS)


# --- two-way exchange --------------------------------------------------------------


def test_twoway_symmetric_zero_offset():
    result = twoway_offset(ExchangeRecord(0, 30, 40, 70))
    assert (result.offset, result.mean_path_delay) == (0, 30)
    assert not result.offset_half_tick and not result.delay_half_tick


def test_twoway_known_offset_and_delay():
    # forward-simulated: responder +10 ahead, one-way delay 40 each way
    result = twoway_offset(ExchangeRecord(100, 150, 160, 190))
    assert (result.offset, result.mean_path_delay) == (10, 40)


def test_twoway_asymmetry_error_is_half_difference():
    # dl=40, ul=20, true offset 0: recovered offset = asymmetry / 2 = 10
    result = twoway_offset(ExchangeRecord(0, 40, 50, 70))
    assert result.offset == 10


def test_twoway_causality_violation():
    with pytest.raises(CausalityViolationError):
        twoway_offset(ExchangeRecord(100, 150, 160, 90))


def test_twoway_half_tick_flag():
    # odd numerator: offset truncates toward zero and the flag is set
    result = twoway_offset(ExchangeRecord(0, 31, 40, 70))
    assert result.offset == 0 and result.offset_half_tick


def test_twoway_symmetric_randomized_exactness():
    rng = derive_stream(17, "ptp-sym")
    for _ in range(2000):
        offset = rng.integers(-10**9, 10**9)
        delay = rng.integers(0, 10**6)
        t1 = rng.integers(0, 10**12)
        turnaround = rng.integers(0, 10**6)
        record = ExchangeRecord(
            t1=t1,
            t2=t1 + delay + offset,
            t3=t1 + delay + turnaround + offset,
            t4=t1 + delay + turnaround + delay,
        )
        result = twoway_offset(record)
        assert result.offset == offset
        assert not result.offset_half_tick
        assert result.mean_path_delay == delay


def test_twoway_asymmetric_randomized_exactness():
    rng = derive_stream(19, "ptp-asym")
    for _ in range(2000):
        offset = rng.integers(-10**6, 10**6)
        dl = rng.integers(0, 10**6)
        ul = rng.integers(0, 10**6)
        t1 = rng.integers(0, 10**9)
        turnaround = rng.integers(0, 10**4)
        record = ExchangeRecord(
            t1=t1,
            t2=t1 + dl + offset,
            t3=t1 + dl + turnaround + offset,
            t4=t1 + dl + turnaround + ul,
        )
        result = twoway_offset(record)
        numerator = 2 * offset + (dl - ul)
        if numerator % 2 == 0:
            assert result.offset - offset == (dl - ul) // 2
            assert not result.offset_half_tick
        else:
            assert result.offset_half_tick
            reconstructed = 2 * result.offset + (1 if numerator > 0 else -1)
            assert reconstructed == numerator


def test_twoway_exchange_forward_sim_recovers_offset():
    responder = ClockState(params=ClockParams(theta0=987_654))
    record = twoway_exchange(
        ideal_clock(), responder, at=10_000, delay_forward=5000, delay_back=5000,
        turnaround=777, rng_initiator=derive_stream(0, "xa"),
        rng_responder=derive_stream(0, "xb"),
    )
    result = twoway_offset(record)
    assert result.offset == 987_654
    assert result.mean_path_delay == 5000


# --- RIBS alignment -------------------------------------------------------------------


def test_ribs_listen_only_residual_is_propagation_delay():
    # 300 m between BSs -> 1 us residual
    delay = propagation_ticks(300.0)
    assert delay == US
    result = ribs_align(RibsMode.LISTEN_ONLY, ideal_clock(),
                        ClockState(params=ClockParams(theta0=5555)),
                        delay, derive_stream(0, "ribs1"))
    assert abs(result.error) == delay


def test_ribs_two_way_symmetric_exact():
    result = ribs_align(RibsMode.TWO_WAY, ideal_clock(),
                        ClockState(params=ClockParams(theta0=-431)),
                        propagation_ticks(500.0), derive_stream(0, "ribs2"))
    assert result.error == 0


def test_ribs_two_way_asymmetric_residual():
    # measured offset overshoots by (dl-ul)/2, so BS-B lands at minus that
    result = ribs_align(RibsMode.TWO_WAY, ideal_clock(), ideal_clock(),
                        (4000, 2000), derive_stream(0, "ribs3"))
    assert result.error == -(4000 - 2000) // 2


def test_ribs_listen_with_ta_bound():
    # helper co-located with BS-B, exact TA: residual within one half TA step
    delay = propagation_ticks(731.0)
    helper_index = compute_ta_initial(2 * delay).value
    result = ribs_align(RibsMode.LISTEN_TA, ideal_clock(), ideal_clock(),
                        delay, derive_stream(0, "ribs4"),
                        helper_ta_index=helper_index)
    assert 0 <= -result.error < HALF_TA_STEP_TICKS


def test_ribs_listen_with_ta_requires_helper():
    with pytest.raises(MissingHelperError):
        ribs_align(RibsMode.LISTEN_TA, ideal_clock(), ideal_clock(), 100,
                   derive_stream(0, "ribs5"))


# --- gateway relay ----------------------------------------------------------------------


def _synced_gw(error_ticks: int) -> ClockState:
    return ClockState(params=ClockParams(theta0=error_ticks), last_sync_at=0)


def test_gw_relay_passes_error_through():
    result = gw_relay_sync(_synced_gw(4321), ideal_clock(), 0.0,
                           derive_stream(0, "gw1"), at=1000)
    assert result.error == 4321


def test_gw_relay_zero_error_zero_sigma():
    result = gw_relay_sync(_synced_gw(0), ClockState(params=ClockParams(theta0=9)),
                           0.0, derive_stream(0, "gw2"), at=0)
    assert result.error == 0


def test_gw_relay_requires_synced_gateway():
    with pytest.raises(GwNotSyncedError):
        gw_relay_sync(ideal_clock(), ideal_clock(), 0.0, derive_stream(0, "gw3"))


def test_gw_relay_error_statistics():
    # GW error 200 ns (6144 ticks), wired-domain sigma ~30 ns (922 ticks)
    gw_error = 6144
    sigma = 922.0
    rng = derive_stream(21, "gw4")
    gw = _synced_gw(gw_error)
    errors = np.array([
        gw_relay_sync(gw, ideal_clock(), sigma, rng, at=0).error
        for _ in range(10_000)
    ])
    assert abs(errors.mean() - gw_error) < 3 * sigma / 100
    assert abs(errors.std() - sigma) / sigma < 0.05
