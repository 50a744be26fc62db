"""Shared instances for the test suite.

Two fixtures cover most tests: a small integer-rate tree whose optimum
is checkable by hand, and the bundled reference tree the experiments
run on. Everything else builds its own inputs locally.
"""

import pytest

from edgeflow.cli import load_config, preset_paper
from edgeflow.model import Workload, build_topology

HAND_RAW = {
    "cc": {"id": "cc", "cpu_hz": 360.0},
    "aps": [{"id": "ap0", "cpu_hz": 36.0,
             "wireless": {"bandwidth_hz": 20.0, "spectral_efficiency": 1.0},
             "wired": {"capacity_bps": 8.0}}],
    "eds": [{"id": "ed0", "cpu_hz": 10.0, "ap": "ap0"}],
}


def hand_topology():
    return build_topology(HAND_RAW)


def hand_workload(**overrides):
    kw = dict(packet_bits=100.0, period_s=10.0, compression_ratio=0.1,
              cycles_per_bit=1.0)
    kw.update(overrides)
    return Workload(**kw)


@pytest.fixture
def hand():
    """(topology, workload) with processing rates 10/36/360, links 20/8,
    100 bits per period, tenfold compression. Optimal period is 100/29."""
    return hand_topology(), hand_workload()


@pytest.fixture
def preset():
    """(topology, workload) from the bundled sweep config: four 1 GHz
    EDs under two APs, 10 Mb/s shared wireless, 8 Mb/s backhauls."""
    spec = load_config(preset_paper()["paper_sweep.json"])
    return spec.topology, spec.workload
