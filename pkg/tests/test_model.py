"""Topology, workload, and stage-time calculator."""

import math
import random

import pytest

from conftest import HAND_RAW, hand_topology, hand_workload
from edgeflow.model import (
    DEFAULT_CYCLES_PER_BIT,
    OffloadPlan,
    Workload,
    build_topology,
    div_time,
    effective_rates,
    stage_times,
)


def test_div_conventions():
    assert div_time(0.0, 0.0) == 0.0
    assert div_time(5.0, 0.0) == math.inf
    assert div_time(10.0, 4.0) == 2.5


def test_build_topology_reference_rates(preset):
    topology, workload = preset
    rates = effective_rates(topology, workload)
    # 1 GHz at 1000 cycles/bit processes 1e6 bits/s.
    assert rates.theta["ed0"] == 1e9 / DEFAULT_CYCLES_PER_BIT == 1e6
    assert rates.theta["ap0"] == 3.6e6
    assert rates.theta["cc"] == 3.6e7
    # 5 MHz at 2 bits/s/Hz carries 1e7 bits/s, shared per AP.
    assert rates.wireless_bps["ap0"] == 1e7
    assert rates.wired_bps["ap0"] == 8e6


def test_build_topology_lists_every_problem():
    raw = {
        "cc": {"id": "cc", "cpu_hz": 1e9},
        "aps": [{"id": "ap0", "cpu_hz": 1e9}],
        "eds": [{"id": "ed0", "cpu_hz": 1e9, "ap": "nope"},
                {"id": "ed0", "cpu_hz": 1e9, "ap": "ap0"}],
    }
    with pytest.raises(ValueError) as err:
        build_topology(raw)
    text = str(err.value)
    assert "missing wireless link spec" in text
    assert "missing wired link spec" in text
    assert "unknown AP 'nope'" in text
    assert "duplicate device ids: ed0" in text


def test_build_topology_needs_both_lower_layers():
    with pytest.raises(ValueError, match="at least one ED"):
        build_topology({"cc": {"id": "cc", "cpu_hz": 1.0}, "aps": HAND_RAW["aps"], "eds": []})
    with pytest.raises(ValueError, match="at least one AP"):
        build_topology({"cc": {"id": "cc", "cpu_hz": 1.0}, "aps": [], "eds": []})


def test_default_spectral_efficiency_applies():
    raw = {
        "cc": {"id": "cc", "cpu_hz": 1e9},
        "aps": [{"id": "ap0", "cpu_hz": 1e9,
                 "wireless": {"bandwidth_hz": 5e6},
                 "wired": {"capacity_bps": 8e6}}],
        "eds": [{"id": "ed0", "cpu_hz": 1e9, "ap": "ap0"}],
    }
    topology = build_topology(raw)
    assert topology.wireless["ap0"].rate_bps() == 1e7


def test_workload_rejects_expansion():
    with pytest.raises(ValueError, match="processing is required to compress"):
        hand_workload(compression_ratio=1.5)
    with pytest.raises(ValueError):
        hand_workload(compression_ratio=0.0)
    with pytest.raises(ValueError):
        hand_workload(packet_bits=-1.0)
    with pytest.raises(ValueError, match="multiplier"):
        hand_workload(bursts=((3, 0.5),))


def test_workload_volume_accounting():
    wl = hand_workload(rate_pps=2.0, volume_overrides={"ed1": 30.0})
    assert wl.volume_bits("ed0") == 200.0
    assert wl.volume_bits("ed1") == 30.0
    assert wl.burst_multiplier(3) == 1.0
    wl = hand_workload(bursts=((3, 2.0), (7, 3.0)))
    assert wl.burst_multiplier(3) == 2.0
    assert wl.burst_multiplier(4) == 1.0


def test_stage_times_fixed_split(hand):
    topology, workload = hand
    plan = OffloadPlan(shares={"ed0": (0.2, 0.3, 0.5)}, wireless_fractions={"ed0": 1.0})
    st = stage_times(topology, workload, plan)
    assert st.ed_compute["ed0"] == pytest.approx(2.0)
    # uplink carries 0.1*20 compressed plus 80 raw bits at 20 bits/s
    assert st.ed_link["ed0"] == pytest.approx(4.1)
    assert st.ap_compute["ap0"] == pytest.approx(30.0 / 36.0)
    # backhaul: 0.1*(20 + 30) + 50 = 55 bits at 8 bits/s
    assert st.ap_link["ap0"] == pytest.approx(6.875)
    assert st.cc_compute == pytest.approx(50.0 / 360.0)
    assert st.t_max == pytest.approx(6.875)
    assert st.bottleneck == ("ap_link", "ap0")


def test_stage_times_corner_plans(hand):
    topology, workload = hand
    edge = OffloadPlan(shares={"ed0": (1.0, 0.0, 0.0)}, wireless_fractions={"ed0": 1.0})
    st = stage_times(topology, workload, edge)
    assert st.ed_compute["ed0"] == pytest.approx(10.0)
    assert st.ed_link["ed0"] == pytest.approx(0.5)
    assert st.ap_compute["ap0"] == 0.0
    assert st.cc_compute == 0.0

    cloud = OffloadPlan(shares={"ed0": (0.0, 0.0, 1.0)}, wireless_fractions={"ed0": 1.0})
    st = stage_times(topology, workload, cloud)
    assert st.ed_compute["ed0"] == 0.0
    assert st.ed_link["ed0"] == pytest.approx(5.0)
    assert st.ap_link["ap0"] == pytest.approx(12.5)
    assert st.cc_compute == pytest.approx(100.0 / 360.0)
    assert st.bottleneck == ("ap_link", "ap0")


def test_stage_times_zero_rate_conventions():
    raw = {
        "cc": {"id": "cc", "cpu_hz": 360.0},
        "aps": [{"id": "ap0", "cpu_hz": 0.0,
                 "wireless": {"bandwidth_hz": 20.0, "spectral_efficiency": 1.0},
                 "wired": {"capacity_bps": 8.0}}],
        "eds": [{"id": "ed0", "cpu_hz": 10.0, "ap": "ap0"}],
    }
    topology = build_topology(raw)
    workload = hand_workload()
    idle_ap = OffloadPlan(shares={"ed0": (0.5, 0.0, 0.5)}, wireless_fractions={"ed0": 1.0})
    assert stage_times(topology, workload, idle_ap).ap_compute["ap0"] == 0.0
    busy_ap = OffloadPlan(shares={"ed0": (0.5, 0.5, 0.0)}, wireless_fractions={"ed0": 1.0})
    st = stage_times(topology, workload, busy_ap)
    assert st.ap_compute["ap0"] == math.inf
    assert st.t_max == math.inf
    assert st.bottleneck == ("ap_compute", "ap0")


TWO_ED_RAW = {
    "cc": {"id": "cc", "cpu_hz": 360.0},
    "aps": [{"id": "ap0", "cpu_hz": 36.0,
             "wireless": {"bandwidth_hz": 20.0, "spectral_efficiency": 1.0},
             "wired": {"capacity_bps": 8.0}}],
    "eds": [{"id": "ed0", "cpu_hz": 10.0, "ap": "ap0"},
            {"id": "ed1", "cpu_hz": 10.0, "ap": "ap0"}],
}


def test_bottleneck_tie_breaks():
    topology = build_topology(TWO_ED_RAW)
    workload = hand_workload()
    # Identical EDs, identical shares: ed0 and ed1 tie, lowest id wins.
    plan = OffloadPlan(shares={"ed0": (1.0, 0.0, 0.0), "ed1": (1.0, 0.0, 0.0)},
                       wireless_fractions={"ed0": 0.5, "ed1": 0.5})
    st = stage_times(topology, workload, plan)
    assert st.ed_compute["ed0"] == st.ed_compute["ed1"]
    assert st.bottleneck == ("ed_compute", "ed0")

    # ed_compute("ed0") and ed_link("ed0") both hit 10s: stage order wins.
    single = build_topology(HAND_RAW)
    tied = OffloadPlan(shares={"ed0": (1.0, 0.0, 0.0)}, wireless_fractions={"ed0": 0.05})
    st = stage_times(single, workload, tied)
    assert st.ed_compute["ed0"] == pytest.approx(st.ed_link["ed0"])
    assert st.bottleneck == ("ed_compute", "ed0")


def test_plan_validation(hand):
    topology, _ = hand
    with pytest.raises(ValueError, match="sum to 1"):
        OffloadPlan(shares={"ed0": (0.5, 0.4, 0.2)},
                    wireless_fractions={"ed0": 1.0}).validate(topology)
    with pytest.raises(ValueError, match="negative"):
        OffloadPlan(shares={"ed0": (1.2, -0.2, 0.0)},
                    wireless_fractions={"ed0": 1.0}).validate(topology)
    with pytest.raises(ValueError, match="ed0"):
        OffloadPlan(shares={}, wireless_fractions={}).validate(topology)
    two = build_topology(TWO_ED_RAW)
    with pytest.raises(ValueError, match="wireless"):
        OffloadPlan(shares={"ed0": (1.0, 0.0, 0.0), "ed1": (1.0, 0.0, 0.0)},
                    wireless_fractions={"ed0": 0.8, "ed1": 0.4}).validate(two)


def _random_plan(rng, topology):
    shares = {}
    fractions = {}
    for ed in topology.eds:
        a, b = sorted((rng.random(), rng.random()))
        shares[ed.id] = (a, b - a, 1.0 - b)
    for ap in topology.aps:
        members = [e.id for e in topology.eds_under(ap.id)]
        weights = [rng.random() + 1e-3 for _ in members]
        total = sum(weights) / min(1.0, 0.2 + rng.random())
        for ed_id, w in zip(members, weights):
            fractions[ed_id] = w / total
    return OffloadPlan(shares=shares, wireless_fractions=fractions)


def test_stage_times_properties_random_plans(preset):
    topology, workload = preset
    rng = random.Random(7)
    rates = effective_rates(topology, workload)
    for _ in range(1000):
        plan = _random_plan(rng, topology)
        plan.validate(topology)
        st = stage_times(topology, workload, plan)
        parts = (list(st.ed_compute.values()) + list(st.ed_link.values())
                 + list(st.ap_compute.values()) + list(st.ap_link.values())
                 + [st.cc_compute])
        assert st.t_max == max(parts)
        assert all(p >= 0.0 for p in parts)
        # No plan beats the compressed volume over either up-layer link.
        for ap in topology.aps:
            total = sum(workload.volume_bits(e.id) for e in topology.eds_under(ap.id))
            rho = workload.compression_ratio
            assert st.t_max >= rho * total / rates.wired_bps[ap.id] - 1e-9
            assert st.t_max >= rho * total / rates.wireless_bps[ap.id] - 1e-9


def test_stage_times_scale_with_volume_and_rates(hand):
    topology, workload = hand
    rng = random.Random(11)
    for _ in range(50):
        plan = _random_plan(rng, topology)
        st = stage_times(topology, workload, plan)
        doubled = stage_times(topology, hand_workload(packet_bits=200.0), plan)
        assert doubled.t_max == pytest.approx(2.0 * st.t_max)
        # Halving every rate through cycles_per_bit doubles compute times only.
        slow = stage_times(topology, hand_workload(cycles_per_bit=2.0), plan)
        assert slow.ed_compute["ed0"] == pytest.approx(2.0 * st.ed_compute["ed0"])
        assert slow.ed_link["ed0"] == pytest.approx(st.ed_link["ed0"])
