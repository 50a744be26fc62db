"""Discrete-time simulator checks against the closed-form predictions."""

import math
import random
from dataclasses import replace

import pytest

from edgeflow.model import stage_times
from edgeflow.sim import SimConfig, simulate, metrics
from edgeflow.tato import baseline_plan, tato_multi


def run(preset, scheme, packet_bits, config=None, **wl_overrides):
    topo, wl = preset
    wl = replace(wl, packet_bits=packet_bits, **wl_overrides)
    if scheme == "tato":
        plan, _ = tato_multi(topo, wl)
    else:
        plan = baseline_plan(scheme, topo, wl)
    trace = simulate(topo, wl, plan, config or SimConfig(100, 30, 5))
    return trace, metrics(trace), wl, plan


class TestSimConfig:
    def test_rejects_coarse_ticks(self):
        with pytest.raises(ValueError):
            SimConfig(ticks_per_period=9, periods=10, warmup_periods=0)

    def test_rejects_no_periods(self):
        with pytest.raises(ValueError):
            SimConfig(ticks_per_period=100, periods=0, warmup_periods=0)

    def test_rejects_warmup_covering_run(self):
        with pytest.raises(ValueError):
            SimConfig(ticks_per_period=100, periods=10, warmup_periods=10)


class TestConservation:
    MATRIX = [
        ("tato", 8e5), ("tato", 6.4e6),
        ("pure_edge", 4e5), ("pure_edge", 1.6e6),
        ("pure_cloud", 4.8e6), ("cloudlet", 2.4e6),
    ]

    @pytest.mark.parametrize("scheme,bits", MATRIX)
    def test_injected_equals_delivered_plus_backlog(self, preset, scheme, bits):
        trace, _, _, _ = run(preset, scheme, bits)
        assert trace.conservation_max_rel_err < 1e-6

    def test_conservation_with_burst(self, preset):
        trace, _, _, _ = run(preset, "pure_edge", 8e5,
                             config=SimConfig(100, 45, 5), bursts=((10, 3.0),))
        assert trace.conservation_max_rel_err < 1e-6


class TestDeterminism:
    def test_identical_reruns(self, preset):
        a, ma, _, _ = run(preset, "tato", 8e5)
        b, mb, _, _ = run(preset, "tato", 8e5)
        assert a.finish_s == b.finish_s
        assert a.total_backlog == b.total_backlog
        assert a.occupancy == b.occupancy
        assert ma == mb


class TestFinishTimes:
    def test_zero_volume_finishes_instantly(self, preset):
        topo, wl = preset
        zero = {e.id: 0.0 for e in topo.eds}
        _, m, _, _ = run(preset, "pure_edge", 8e5, volume_overrides=zero)
        assert m.finish_s == (0.0,) * 30
        assert m.peak_backlog_bits == 0.0
        assert m.stable

    # avg finish snaps to the tick boundary right above the analytic time
    SNAP = [
        ("tato", 4e5, 0.07), ("tato", 8e5, 0.14), ("tato", 4.8e6, 0.82),
        ("pure_cloud", 4e5, 0.10), ("cloudlet", 8e5, 0.45),
    ]

    @pytest.mark.parametrize("scheme,bits,expected", SNAP)
    def test_average_finish_snaps_to_next_tick(self, preset, scheme, bits, expected):
        _, m, _, _ = run(preset, scheme, bits)
        assert m.avg_finish_s == pytest.approx(expected, rel=1e-12)

    def test_finish_within_five_ticks_of_analytic(self, preset):
        topo, wl = preset
        for tpp in (100, 200, 400, 800):
            trace, m, wl_s, plan = run(preset, "tato", 8e5, config=SimConfig(tpp, 20, 3))
            t_max = stage_times(topo, wl_s, plan).t_max
            dt = wl_s.period_s / tpp
            assert t_max <= m.avg_finish_s <= t_max + 5 * dt

    def test_finish_window_over_random_stable_plans(self, preset):
        topo, wl = preset
        rng = random.Random(11)
        checked = 0
        while checked < 25:
            scheme = rng.choice(["tato", "pure_cloud", "cloudlet", "pure_edge"])
            bits = rng.uniform(1e5, 9e5)
            wl_s = replace(wl, packet_bits=bits)
            plan = (tato_multi(topo, wl_s)[0] if scheme == "tato"
                    else baseline_plan(scheme, topo, wl_s))
            t_max = stage_times(topo, wl_s, plan).t_max
            if t_max >= 0.95 * wl_s.period_s:
                continue
            m = metrics(simulate(topo, wl_s, plan, SimConfig(100, 20, 3)))
            dt = wl_s.period_s / 100
            assert t_max <= m.avg_finish_s <= t_max + 5 * dt, (scheme, bits)
            checked += 1

    def test_overloaded_periods_never_finish(self, preset):
        _, m, _, _ = run(preset, "tato", 6.4e6)
        assert math.isinf(m.avg_finish_s)
        assert not m.stable


class TestDiscretization:
    def test_doubling_ticks_barely_moves_finish(self, preset):
        # measured at two thirds utilization, where the tick grid is
        # fine relative to the quantity it is resolving
        topo, wl = preset
        wl_s = replace(wl, packet_bits=4e6)
        plan, _ = tato_multi(topo, wl_s)
        prev = None
        for tpp in (100, 200, 400):
            m = metrics(simulate(topo, wl_s, plan, SimConfig(tpp, 20, 3)))
            if prev is not None:
                rel = abs(m.avg_finish_s - prev) / prev
                assert rel < 2 / (tpp // 2)
            prev = m.avg_finish_s


class TestHalfLoadExample:
    """Pure edge sized to exactly half the period."""

    def test_every_period_finishes_at_half(self, preset):
        topo, wl = preset
        wl_s = replace(wl, packet_bits=5e5)
        plan = baseline_plan("pure_edge", topo, wl_s)
        assert stage_times(topo, wl_s, plan).t_max / wl_s.period_s == pytest.approx(0.5)
        trace = simulate(topo, wl_s, plan, SimConfig(100, 12, 0))
        m = metrics(trace)
        # converged from the very first period, well under three
        assert all(f == pytest.approx(0.5, rel=1e-12) for f in m.finish_s)
        # buffers stay bounded by one period's injection and only the
        # device compute queues ever hold anything
        per_ed = wl_s.packet_bits * wl_s.rate_pps
        for key, series in trace.occupancy.items():
            if key.startswith("ed_compute/"):
                assert 0.0 < max(series) <= per_ed
            else:
                assert max(series) == 0.0


class TestStabilityTheorem:
    # pure edge on the preset: per-device rate 1e6 bits/s, period 1 s
    CASES = [
        (9.0e5, True), (9.9e5, True),
        (1.01e6, False), (1.05e6, False), (1.2e6, False),
    ]

    @pytest.mark.parametrize("bits,expect_stable", CASES)
    def test_strict_threshold(self, preset, bits, expect_stable):
        topo, wl = preset
        _, m, wl_s, plan = run(preset, "pure_edge", bits, config=SimConfig(100, 40, 5))
        ratio = stage_times(topo, wl_s, plan).t_max / wl_s.period_s
        assert (ratio < 1.0) == expect_stable
        assert m.stable == expect_stable

    def test_excess_shows_up_as_growth(self, preset):
        _, m, _, _ = run(preset, "pure_edge", 1.05e6, config=SimConfig(100, 40, 5))
        # four devices each inject 5e4 bits/period beyond their rate
        assert m.backlog_slope_bits_per_period == pytest.approx(2e5, rel=1e-9)


class TestOverloadGrowth:
    """Backlog slope equals inflow minus capacity at the congested stage."""

    # (scheme, packet bits, expected slope in raw-equivalent bits/period)
    # pure_edge 1.2e6: devices bind, 4 * (1.2e6 - 1e6)
    # pure_cloud 4.8e6: backhaul binds, 2 * (9.6e6 - 8e6)
    # cloudlet 2.4e6: AP compute binds, 2 * (4.8e6 - 3.6e6) = 2.4e6
    CASES = [
        ("pure_edge", 1.2e6, 8e5),
        ("pure_cloud", 4.8e6, 3.2e6),
        ("cloudlet", 2.4e6, 2.4e6),
    ]

    @pytest.mark.parametrize("scheme,bits,slope", CASES)
    def test_growth_rate(self, preset, scheme, bits, slope):
        _, m, _, _ = run(preset, scheme, bits, config=SimConfig(100, 40, 5))
        assert not m.stable
        assert m.backlog_slope_bits_per_period == pytest.approx(slope, rel=1e-6)


class TestBurstRecovery:
    def test_triple_burst_drains_in_about_seven_periods(self, preset):
        _, m, _, _ = run(preset, "pure_edge", 8e5,
                         config=SimConfig(100, 45, 5), bursts=((10, 3.0),))
        assert m.stable
        assert len(m.recovery_s) == 1
        assert 6.0 <= m.recovery_s[0] <= 8.0

    def test_no_bursts_no_recovery_entries(self, preset):
        _, m, _, _ = run(preset, "pure_edge", 8e5)
        assert m.recovery_s == ()

    def test_burst_period_injects_multiplied_volume(self, preset):
        trace, _, _, _ = run(preset, "pure_edge", 8e5,
                             config=SimConfig(100, 6, 0), bursts=((1, 3.0),))
        assert trace.injected[1] == pytest.approx(3 * trace.injected[0])
        assert trace.burst_periods == (1,)

    def test_metrics_can_take_burst_schedule_from_workload(self, preset):
        trace, m_trace, wl_s, _ = run(preset, "pure_edge", 8e5,
                                      config=SimConfig(100, 45, 5), bursts=((10, 3.0),))
        m_wl = metrics(trace, wl_s)
        assert m_wl.recovery_s == m_trace.recovery_s
        quiet = metrics(trace, replace(wl_s, bursts=()))
        assert quiet.recovery_s == ()


def test_stage_keys_cover_the_whole_tree(preset):
    trace, _, _, _ = run(preset, "tato", 8e5, config=SimConfig(10, 1, 0))
    keys = set(trace.stage_keys)
    topo, _ = preset
    for e in topo.eds:
        assert f"ed_compute/{e.id}" in keys
        assert f"ed_link/{e.id}" in keys
    for a in topo.aps:
        assert f"ap_compute/{a.id}" in keys
        assert f"ap_link/{a.id}" in keys
    assert "cc_compute/cc" in keys
