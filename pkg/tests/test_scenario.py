"""Scenario construction, end-to-end runs, and the PMU fault probe."""

from pathlib import Path

import pytest

from airsync.config import load_config, validate_config
from airsync.errors import InvalidConfigError, InvalidGeometryError
from airsync.scenario import (
    Role,
    build_scenario,
    pmu_fault_event,
    run_scenario,
)
from airsync.timebase import (
    HALF_TA_STEP_TICKS,
    TA_STEP_TICKS,
    TICKS_PER_MS,
    TICKS_PER_SECOND,
    TICKS_PER_US,
    propagation_ticks,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
MS = TICKS_PER_MS

# distance whose propagation delay sits exactly on the 8*Ts grid
ON_GRID_M = 156.25
assert propagation_ticks(ON_GRID_M) == TA_STEP_TICKS


def base_config(**overrides):
    raw = {
        "schema_version": 1,
        "seed": 5,
        "duration": "500 ms",
        "sampling_grid": "10 ms",
        "nodes": [
            {"id": "ref", "role": "reference"},
            {"id": "bs1", "role": "base_station", "position": [0, 0]},
            {"id": "ue1", "role": "ue", "attach_to": "bs1", "position": [ON_GRID_M, 0]},
            {"id": "ue2", "role": "ue", "attach_to": "bs1", "position": [2 * ON_GRID_M, 0]},
        ],
        "sync_plan": {
            "resync_period": "100 ms",
            "sib": {"granularity": 0, "si_window": 0, "stamp_mode": "at_transmit"},
        },
    }
    raw.update(overrides)
    return raw


def test_build_simple_scenario():
    scenario = build_scenario(validate_config(base_config()))
    assert len(scenario.nodes) == 4  # reference + BS + 2 UEs
    assert scenario.nodes["ue1"].role is Role.UE


def test_build_is_pure():
    cfg = validate_config(base_config())
    assert build_scenario(cfg) == build_scenario(cfg)


def test_unattached_ue_rejected():
    raw = base_config()
    del raw["nodes"][2]["attach_to"]
    with pytest.raises(InvalidConfigError) as info:
        build_scenario(validate_config(raw))
    assert "nodes[2].attach_to" in str(info.value)


def test_attach_to_unknown_node_rejected():
    raw = base_config()
    raw["nodes"][2]["attach_to"] = "bs9"
    with pytest.raises(InvalidConfigError) as info:
        build_scenario(validate_config(raw))
    assert "bs9" in str(info.value)


def test_exactly_one_reference_required():
    raw = base_config()
    raw["nodes"].append({"id": "ref2", "role": "reference"})
    with pytest.raises(InvalidConfigError):
        build_scenario(validate_config(raw))


def test_heterogeneous_preset_is_eight_nodes():
    scenario = build_scenario(load_config(CONFIG_DIR / "heterogeneous.yaml"))
    assert len(scenario.nodes) == 8
    roles = [n.role for n in scenario.nodes.values()]
    assert roles.count(Role.BASE_STATION) == 2
    assert roles.count(Role.LEGACY) == 2
    assert roles.count(Role.GATEWAY) == 1


def test_ideal_run_has_zero_errors_everywhere():
    # no noise, no quantization, delays on the TA grid: every sampled device
    # error is exactly zero after the first sync round
    cfg = validate_config(base_config())
    trace = run_scenario(build_scenario(cfg), cfg.duration)
    assert trace.samples
    for sample in trace.samples:
        assert sample.error == 0


def test_skew_resync_tradeoff_100ms():
    # 1 ppm skew, 100 ms resync: each correction removes ~1e-6 * 100 ms = 100 ns
    raw = base_config(duration="2 s")
    raw["nodes"][2]["clock"] = {"skew_ppm": 1.0}
    cfg = validate_config(raw)
    trace = run_scenario(build_scenario(cfg), cfg.duration)
    expected = 1e-6 * 100 * MS  # 3072 ticks = 100 ns
    corrections = [
        c.delta for c in trace.corrections if c.node == "ue1" and c.kind == "sib16"
    ]
    assert len(corrections) >= 10
    for delta in corrections[1:]:
        assert abs(abs(delta) - expected) <= 2


def test_full_loss_means_no_corrections_and_growing_error():
    raw = base_config(duration="500 ms", link={"loss_prob": 1.0})
    raw["nodes"][2]["clock"] = {"skew_ppm": 5.0}
    cfg = validate_config(raw)
    trace = run_scenario(build_scenario(cfg), cfg.duration)
    device_corrections = [c for c in trace.corrections if c.node.startswith("ue")]
    assert device_corrections == []
    assert trace.lost_sync > 0
    last = [s for s in trace.samples if s.node == "ue1"][-1]
    assert last.error == pytest.approx(5e-6 * last.t_true, abs=2)


def test_deliveries_follow_grid_plus_propagation():
    cfg = validate_config(base_config(
        workload={"command_period": "10 ms", "targets": ["ue1"]},
    ))
    trace = run_scenario(build_scenario(cfg), cfg.duration)
    prop = propagation_ticks(ON_GRID_M)
    assert trace.deliveries
    for d in trace.deliveries:
        assert d.true_arrival == d.grid_point + prop
    # zero extra delay and ideal clocks: the jitter is exactly zero
    from airsync.metrics import jitter_stats
    assert jitter_stats(trace.deliveries, cfg.workload)["peak_to_peak"] == 0


def test_run_is_deterministic():
    cfg = validate_config(base_config(
        workload={"command_period": "10 ms", "targets": ["ue1", "ue2"]},
    ))
    first = run_scenario(build_scenario(cfg), cfg.duration)
    second = run_scenario(build_scenario(cfg), cfg.duration)
    assert first.samples == second.samples
    assert first.deliveries == second.deliveries
    assert first.corrections == second.corrections


def test_seed_changes_noisy_run():
    raw = base_config()
    raw["nodes"][1]["clock"] = {"stamp_noise": 300}
    cfg = validate_config(raw)
    t1 = run_scenario(build_scenario(cfg, root_seed=1), cfg.duration, root_seed=1)
    t2 = run_scenario(build_scenario(cfg, root_seed=2), cfg.duration, root_seed=2)
    assert t1.samples != t2.samples


def test_two_bs_fixed_error_budget_additivity():
    # device-to-device offset across two cells = alignment error plus the
    # difference of the two TA residuals, exactly
    e = TICKS_PER_US
    raw = {
        "schema_version": 1,
        "seed": 11,
        "duration": "200 ms",
        "sampling_grid": "50 ms",
        "nodes": [
            {"id": "ref", "role": "reference"},
            {"id": "bs1", "role": "base_station", "position": [0, 0]},
            {"id": "bs2", "role": "base_station", "position": [3000, 0]},
            {"id": "ue1", "role": "ue", "attach_to": "bs1", "position": [700, 0]},
            {"id": "ue2", "role": "ue", "attach_to": "bs2", "position": [3420, 0]},
        ],
        "sync_plan": {
            "resync_period": "100 ms",
            "sib": {"granularity": 0, "si_window": 0, "stamp_mode": "at_transmit"},
            "bs_alignment": {"mode": "fixed_error", "error": e},
        },
    }
    cfg = validate_config(raw)
    trace = run_scenario(build_scenario(cfg), cfg.duration)
    tau1 = propagation_ticks(700.0)
    tau2 = propagation_ticks(420.0)
    r1 = tau1 - (2 * tau1 // TA_STEP_TICKS) * HALF_TA_STEP_TICKS
    r2 = tau2 - (2 * tau2 // TA_STEP_TICKS) * HALF_TA_STEP_TICKS
    by_node = {}
    for s in trace.samples:
        if s.t_true == 150 * MS:
            by_node[s.node] = s.error
    assert abs((by_node["ue2"] - by_node["ue1"]) - (e + r1 - r2)) <= 1


def test_ta_refresh_keeps_index_consistent():
    raw = base_config(duration="1200 ms")
    raw["sync_plan"]["ta_timer_ms"] = 500
    cfg = validate_config(raw)
    trace = run_scenario(build_scenario(cfg), cfg.duration)
    # noiseless static geometry: refreshed index still matches the distance
    assert trace.ta_index["ue1"] == 2
    assert trace.ta_index["ue2"] == 4


def test_ribs_alignment_modes_align_second_bs():
    # 300 m between BSs: listening alone leaves the 1 us propagation delay,
    # TA compensation shrinks it below half a TA step, two-way removes it
    for mode in ["listen_only", "listen_ta", "two_way"]:
        raw = base_config()
        raw["nodes"].insert(2, {"id": "bs2", "role": "base_station", "position": [300, 0]})
        raw["sync_plan"]["bs_alignment"] = {"mode": "ribs", "ribs_mode": mode}
        cfg = validate_config(raw)
        trace = run_scenario(build_scenario(cfg), cfg.duration)
        aligns = [c for c in trace.corrections if c.node == "bs2" and c.kind == "bs_align"]
        assert len(aligns) == 1
        if mode == "listen_only":
            assert abs(aligns[0].error_after) == TICKS_PER_US
        elif mode == "listen_ta":
            assert abs(aligns[0].error_after) < HALF_TA_STEP_TICKS
        else:
            assert aligns[0].error_after == 0


def test_gateway_relay_and_legacy_corrections():
    cfg = load_config(CONFIG_DIR / "heterogeneous.yaml")
    trace = run_scenario(build_scenario(cfg), cfg.duration)
    relay = [c for c in trace.corrections if c.kind == "gw_relay"]
    assert {c.node for c in relay} == {"ld1", "ld2"}


# --- PMU fault probe -------------------------------------------------------------


def pmu_scenario(theta_b: int = 0):
    raw = {
        "schema_version": 1,
        "seed": 3,
        "duration": "1 s",
        "nodes": [
            {"id": "ref", "role": "reference"},
            {"id": "pmu_a", "role": "pmu"},
            {"id": "pmu_b", "role": "pmu", "clock": {"theta0": theta_b}},
        ],
    }
    return build_scenario(validate_config(raw))


def test_fault_at_middle_with_perfect_clocks():
    t_a, t_b = pmu_fault_event(pmu_scenario(), 300.0, 600.0, 3.0e8)
    assert t_a == t_b


def test_fault_at_line_end():
    t_a, t_b = pmu_fault_event(pmu_scenario(), 0.0, 600.0, 3.0e8)
    assert t_a == 0
    assert t_b == round(600.0 / 3.0e8 * TICKS_PER_SECOND)  # 2 us


def test_pmu_offset_passes_through():
    offset = TICKS_PER_US
    t_a, t_b = pmu_fault_event(pmu_scenario(theta_b=offset), 300.0, 600.0, 3.0e8)
    assert t_b - t_a == offset


def test_fault_geometry_validation():
    with pytest.raises(InvalidGeometryError):
        pmu_fault_event(pmu_scenario(), 700.0, 600.0, 3.0e8)
    with pytest.raises(InvalidGeometryError):
        pmu_fault_event(pmu_scenario(), 100.0, 600.0, -1.0)


def test_in_run_fault_probe_recorded():
    cfg = load_config(CONFIG_DIR / "pmu-fault.yaml")
    trace = run_scenario(build_scenario(cfg), cfg.duration)
    assert trace.fault is not None
    assert trace.fault.t_fault == TICKS_PER_SECOND
    assert {trace.fault.pmu_a, trace.fault.pmu_b} == {"pmu_a", "pmu_b"}
