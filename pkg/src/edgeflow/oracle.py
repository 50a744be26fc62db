"""Reference solvers for the min-max period problem.

Everything here is deliberately slow and simple. The fast planner
locates optima in closed form; these routines find the same answers by
feasibility bisection and by brute-force lattice enumeration, so the
two implementations can be checked against each other without sharing
any solver code.
"""

from __future__ import annotations

import math
import random

import numpy as np

from .model import (
    Infeasible,
    OffloadPlan,
    Topology,
    Workload,
    build_topology,
    effective_rates,
    stage_times,
)

_CORNERS = ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0))

GRID_MAX_EVALS = 420_000_000


def _proportional_fractions(topology, workload, shares):
    """Wireless slices proportional to each ED's uplink load."""
    rho = workload.compression_ratio
    fractions: dict[str, float] = {}
    for ap in topology.aps:
        members = topology.eds_under(ap.id)
        loads = [(rho * shares[e.id][0] + shares[e.id][1] + shares[e.id][2])
                 * workload.volume_bits(e.id) for e in members]
        total = sum(loads)
        for e, load in zip(members, loads):
            fractions[e.id] = load / total if total > 0.0 else 1.0 / len(members)
    return fractions


def _greedy_plan(t_seconds: float, topology: Topology, workload: Workload) -> OffloadPlan:
    """Fill layers bottom-up as full as a period of ``t_seconds`` allows.

    Each ED keeps as much of its own flow as it can process in ``t``,
    each AP spends its ``t * theta_ap`` budget on its EDs' leftovers in
    id order, and the CC gets the rest. With compression, moving work
    downward never increases any upstream load, so if any plan meets
    the period, this one does.
    """
    rates = effective_rates(topology, workload)
    shares: dict[str, tuple[float, float, float]] = {}
    for ap in topology.aps:
        members = sorted(topology.eds_under(ap.id), key=lambda d: d.id)
        leftover: dict[str, float] = {}
        for e in members:
            v = workload.volume_bits(e.id)
            if v <= 0.0:
                shares[e.id] = (1.0, 0.0, 0.0)
                leftover[e.id] = 0.0
                continue
            s_ed = min(1.0, t_seconds * rates.theta[e.id] / v)
            shares[e.id] = (s_ed, 0.0, 0.0)
            leftover[e.id] = (1.0 - s_ed) * v
        budget = min(sum(leftover.values()), t_seconds * rates.theta[ap.id])
        for e in members:
            v = workload.volume_bits(e.id)
            if v <= 0.0:
                continue
            take = min(leftover[e.id], budget)
            budget -= take
            s_ed = shares[e.id][0]
            s_ap = take / v
            shares[e.id] = (s_ed, s_ap, max(0.0, 1.0 - s_ed - s_ap))
    return OffloadPlan(shares=shares,
                       wireless_fractions=_proportional_fractions(topology, workload, shares))


def feasible_at(t_seconds: float, topology: Topology, workload: Workload) -> bool:
    """Whether some plan finishes every stage within ``t_seconds``.

    Exact (not approximate) thanks to the greedy argument documented on
    :func:`_greedy_plan`; the greedy plan is evaluated through the
    ordinary stage calculator and compared against ``t``. Only valid
    under compression (``rho <= 1``), which :class:`Workload` enforces.
    """
    assert workload.compression_ratio <= 1.0
    if t_seconds < 0.0:
        return False
    plan = _greedy_plan(t_seconds, topology, workload)
    # The greedy pins its binding stage exactly at t, so the recomputed
    # stage time can land an ulp above it; allow that much slack.
    return stage_times(topology, workload, plan).t_max <= t_seconds * (1.0 + 1e-12)


def _fixed_split_plan(split, topology, workload):
    shares = {e.id: split for e in topology.eds}
    return OffloadPlan(shares=shares,
                       wireless_fractions=_proportional_fractions(topology, workload, shares))


def optimal_tmax_bisect(topology: Topology, workload: Workload,
                        rel_tol: float = 1e-9, max_iter: int = 10_000) -> tuple[float, OffloadPlan]:
    """Minimal achievable period, by bisection on :func:`feasible_at`.

    The upper seed is the best of the three single-layer corner plans
    (all-cloud, all-edge, all-AP); the lower seed is zero. Returns the
    bracketed period together with a witness plan feasible at it.

    Raises:
        Infeasible: all three corner plans have an infinite stage, so
            no finite-period plan exists at all.
    """
    corner_times = []
    for split in _CORNERS:
        t = stage_times(topology, workload, _fixed_split_plan(split, topology, workload)).t_max
        if math.isfinite(t):
            corner_times.append(t)
    if not corner_times:
        raise Infeasible("every corner plan has an infinite stage; instance is unsolvable")

    hi = min(corner_times)
    lo = 0.0
    if hi > 0.0:
        for _ in range(max_iter):
            if hi - lo <= rel_tol * hi:
                break
            mid = 0.5 * (lo + hi)
            if feasible_at(mid, topology, workload):
                hi = mid
            else:
                lo = mid
    return hi, _greedy_plan(hi, topology, workload)


def _vdiv(load, rate):
    """Vectorized stage time with the 0/0 = 0, x/0 = inf conventions."""
    if rate <= 0.0:
        return np.where(np.asarray(load) > 0.0, np.inf, 0.0)
    return np.asarray(load) / rate


def grid_search(topology: Topology, workload: Workload,
                resolution: float = 0.005) -> tuple[float, OffloadPlan]:
    """Exhaustive search over the share simplex lattice.

    Every ED's share triple ranges over multiples of ``resolution``
    summing to 1 (wireless fractions stay proportional-to-load, which
    is optimal for any fixed shares). The best lattice plan upper
    bounds the true optimum, so this cross-checks the other solvers
    without any analytic reasoning. Supports one or two EDs; the
    candidate count explodes beyond that, and an instance over budget
    is refused outright rather than silently subsampled.

    Ties resolve to the lexicographically first share assignment, with
    EDs ordered by id.
    """
    n = round(1.0 / resolution)
    if n < 1 or abs(resolution * n - 1.0) > 1e-9:
        raise ValueError(f"resolution must be 1/N for a positive integer N, got {resolution!r}")
    eds = sorted(topology.eds, key=lambda d: d.id)
    points = (n + 1) * (n + 2) // 2
    evals = points ** len(eds)
    if len(eds) > 2 or evals > GRID_MAX_EVALS:
        raise ValueError(
            f"grid too large: {len(eds)} EDs at resolution 1/{n} is {evals:.2e} "
            f"candidate plans (budget {GRID_MAX_EVALS:.0e}); coarsen the resolution "
            "or use the bisection oracle")

    lattice = np.array([(i / n, j / n, (n - i - j) / n)
                        for i in range(n + 1) for j in range(n + 1 - i)])
    rates = effective_rates(topology, workload)
    rho = workload.compression_ratio
    th_cc = rates.theta[topology.cc.id]

    if len(eds) == 1:
        best_t, best_idx = _grid_single(eds[0], topology, rates, workload, rho, th_cc, lattice)
        assignment = {eds[0].id: tuple(lattice[best_idx])}
    else:
        best_t, best_pair = _grid_pair(eds, topology, rates, workload, rho, th_cc, lattice)
        assignment = {eds[0].id: tuple(lattice[best_pair[0]]),
                      eds[1].id: tuple(lattice[best_pair[1]])}

    shares = {ed_id: (float(s[0]), float(s[1]), float(s[2]))
              for ed_id, s in assignment.items()}
    plan = OffloadPlan(shares=shares,
                       wireless_fractions=_proportional_fractions(topology, workload, shares))
    return float(best_t), plan


def _grid_single(ed, topology, rates, workload, rho, th_cc, lattice):
    v = workload.volume_bits(ed.id)
    ap_id = topology.ap_of(ed.id)
    se, sa, sc = lattice[:, 0], lattice[:, 1], lattice[:, 2]
    t = _vdiv(se * v, rates.theta[ed.id])
    t = np.maximum(t, _vdiv((rho * se + sa + sc) * v, rates.wireless_bps[ap_id]))
    t = np.maximum(t, _vdiv(sa * v, rates.theta[ap_id]))
    t = np.maximum(t, _vdiv((rho * se + rho * sa + sc) * v, rates.wired_bps[ap_id]))
    t = np.maximum(t, _vdiv(sc * v, th_cc))
    idx = int(np.argmin(t))
    return float(t[idx]), idx


def _grid_pair(eds, topology, rates, workload, rho, th_cc, lattice):
    e0, e1 = eds
    v0, v1 = workload.volume_bits(e0.id), workload.volume_bits(e1.id)
    a0, a1 = topology.ap_of(e0.id), topology.ap_of(e1.id)
    th0, th1 = rates.theta[e0.id], rates.theta[e1.id]

    se1, sa1, sc1 = lattice[:, 0], lattice[:, 1], lattice[:, 2]
    cb1 = _vdiv(se1 * v1, th1)
    up1 = (rho * se1 + sa1 + sc1) * v1
    back1 = (rho * se1 + rho * sa1 + sc1) * v1

    best_t = math.inf
    best_pair = (0, 0)
    for i0, (se0, sa0, sc0) in enumerate(lattice):
        cb0 = se0 * v0 / th0 if th0 > 0.0 else (math.inf if se0 * v0 > 0.0 else 0.0)
        up0 = (rho * se0 + sa0 + sc0) * v0
        back0 = (rho * se0 + rho * sa0 + sc0) * v0
        t = np.maximum(cb0, cb1)
        if a0 == a1:
            t = np.maximum(t, _vdiv(up0 + up1, rates.wireless_bps[a0]))
            t = np.maximum(t, _vdiv(sa0 * v0 + sa1 * v1, rates.theta[a0]))
            t = np.maximum(t, _vdiv(back0 + back1, rates.wired_bps[a0]))
        else:
            t = np.maximum(t, _vdiv(up0, rates.wireless_bps[a0]))
            t = np.maximum(t, _vdiv(up1, rates.wireless_bps[a1]))
            t = np.maximum(t, _vdiv(sa0 * v0, rates.theta[a0]))
            t = np.maximum(t, _vdiv(sa1 * v1, rates.theta[a1]))
            t = np.maximum(t, _vdiv(back0, rates.wired_bps[a0]))
            t = np.maximum(t, _vdiv(back1, rates.wired_bps[a1]))
        t = np.maximum(t, _vdiv(sc0 * v0 + sc1 * v1, th_cc))
        i1 = int(np.argmin(t))
        if t[i1] < best_t:
            best_t = float(t[i1])
            best_pair = (i0, i1)
    return best_t, best_pair


def random_instance(rng: random.Random, *, n_eds: int | None = None, n_aps: int | None = None,
                    rho: float | None = None,
                    volume_bits: float | None = None) -> tuple[Topology, Workload]:
    """Draw a random solvable instance for cross-checking solvers.

    All rates are log-uniform across four decades (1e3..1e7 bits/s),
    volumes across two, and the compression ratio uniform in
    [0.05, 1.0] unless pinned. EDs attach to APs uniformly at random;
    an AP may end up with no EDs.
    """
    if n_aps is None:
        n_aps = rng.randint(1, 4)
    if n_eds is None:
        n_eds = rng.randint(1, 8)
    if rho is None:
        rho = rng.uniform(0.05, 1.0)
    if volume_bits is None:
        volume_bits = 10.0 ** rng.uniform(4.5, 6.5)

    def rate():
        return 10.0 ** rng.uniform(3.0, 7.0)

    raw = {
        "cc": {"id": "cc", "cpu_hz": rate()},
        "aps": [{"id": f"ap{i}", "cpu_hz": rate(),
                 "wireless": {"bandwidth_hz": rate(), "spectral_efficiency": 1.0},
                 "wired": {"capacity_bps": rate()}} for i in range(n_aps)],
        "eds": [{"id": f"ed{i}", "cpu_hz": rate(), "ap": f"ap{rng.randrange(n_aps)}"}
                for i in range(n_eds)],
    }
    topology = build_topology(raw)
    workload = Workload(packet_bits=volume_bits, period_s=1.0, compression_ratio=rho,
                        cycles_per_bit=1.0)
    return topology, workload
