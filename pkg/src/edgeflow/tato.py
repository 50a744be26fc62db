"""Share planners: the time-aligned offloader and reference baselines.

The planning problem: pick per-ED shares (and wireless slices) so the
longest of the five concurrent stage times is as small as possible.
Total work is fixed, but where bits get processed decides how much
each uplink carries, because processing shrinks a flow to ``rho`` of
its raw size. For ``rho <= 1`` pushing work toward the leaves never
hurts an upstream stage, so the planner may fill the lowest layers
greedily and let each shared resource dictate how small the common
period can get.

Concretely, for a candidate period ``t`` the layers can absorb only so
much: an ED processes at most ``min(V, t * theta_ed)`` bits of its own
flow, its AP contributes ``t * theta_ap`` more across its EDs, and the
rest rides through to the CC. Each capacity (wireless uplink, wired
backhaul, CC compute) then imposes "load remaining at t" <= "t * rate",
where the left side is a non-increasing piecewise-linear function of
``t``. The smallest workable period is the largest of the three
per-constraint crossing points, and both the single-ED and the
multi-ED planners below just locate those crossings in closed form.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

from .model import (
    Infeasible,
    OffloadPlan,
    StageTimes,
    Topology,
    Workload,
    build_topology,
    div_time,
    effective_rates,
    stage_times,
)

BASELINES = ("pure_cloud", "pure_edge", "cloudlet")

_CONVERGENCE_TOL = 1e-9


def balance_ed(volume_bits: float, rho: float, theta_ed: float, phi_ed: float) -> tuple[float, float]:
    """Local share that equalizes one ED's compute and uplink times.

    The ED processes ``s * V`` bits (taking ``s*V/theta``) and sends
    the compressed result plus the raw remainder (taking
    ``(rho*s + 1 - s) * V / phi``). Compute time rises with ``s``,
    uplink time falls, so the minimax point is the crossing when one
    exists in (0, 1):

        s* = (V/phi) / (V/theta + (1-rho) * V/phi)

    Returns:
        (s*, balanced time). Corner cases: theta_ed = 0 forces
        s = 0 with time V/phi; an uplink so slow (or a CPU so fast)
        that the curves cannot cross inside (0, 1) yields s = 1 with
        time max(V/theta, rho*V/phi); an infinite uplink rate also
        yields s = 1, time V/theta (sending costs nothing, so finish
        the whole flow locally no slower than shipping it).
    """
    if not volume_bits > 0.0:
        raise ValueError(f"volume_bits must be positive, got {volume_bits!r}")
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must be in (0, 1], got {rho!r}")
    if theta_ed < 0.0 or phi_ed < 0.0:
        raise ValueError("rates must be >= 0")

    if theta_ed == 0.0:
        return 0.0, div_time(volume_bits, phi_ed)
    if math.isinf(phi_ed):
        return 1.0, volume_bits / theta_ed
    if rho * theta_ed >= phi_ed:
        # Even at s = 1 the uplink is the slower side; no interior crossing.
        return 1.0, max(volume_bits / theta_ed, div_time(rho * volume_bits, phi_ed))
    s = theta_ed / (phi_ed + (1.0 - rho) * theta_ed)
    return s, s * volume_bits / theta_ed


def _least_period(volume_bits: float, shrink: float, absorb_bps: float, line_bps: float) -> float:
    """Smallest t with ``volume - shrink * min(volume, t * absorb) <= t * line``.

    This is the generic crossing of one capacity constraint: out of
    ``volume`` bits, whatever the lower layers absorb by time ``t``
    (at combined rate ``absorb_bps``, capped at the whole volume)
    leaves the line only ``1 - shrink`` of itself to carry, and the
    line drains at ``line_bps``. The left side is piecewise linear
    with a single knee at ``volume / absorb``, so the root is one of
    two closed forms.
    """
    if volume_bits <= 0.0:
        return 0.0
    if absorb_bps <= 0.0:
        return div_time(volume_bits, line_bps)
    if not math.isfinite(absorb_bps):
        return div_time((1.0 - shrink) * volume_bits, line_bps)
    if absorb_bps * (1.0 - shrink) <= line_bps:
        # Crossing happens before the knee (or exactly at it).
        return volume_bits / (line_bps + shrink * absorb_bps)
    return div_time((1.0 - shrink) * volume_bits, line_bps)


def tato_single(volume_bits: float, rho: float, theta_ed: float, phi_ed: float,
                theta_ap: float, phi_ap: float, theta_cc: float) -> tuple[OffloadPlan, StageTimes]:
    """Optimal three-way split for a single ED under a single AP.

    Three constraints each fix a lower bound on the period and the
    answer is their maximum:

    1. the ED's own uplink must carry ``rho*s_ed + (1 - s_ed)`` of the
       volume (results shrink, the remainder rides raw);
    2. the backhaul must carry what the ED and AP together cannot
       finish, plus their compressed results;
    3. the CC must process what neither lower layer absorbed.

    Shares are then read off at the binding period: the ED takes all
    it can process in ``t``, the AP takes the next slice, the CC the
    rest. The wireless fraction is 1 (nobody shares the uplink).

    Raises:
        Infeasible: no finite period exists, e.g. every theta is zero
            or a required link has zero rate.
    """
    if not volume_bits > 0.0:
        raise ValueError(f"volume_bits must be positive, got {volume_bits!r}")
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must be in (0, 1], got {rho!r}")
    for name, r in (("theta_ed", theta_ed), ("phi_ed", phi_ed), ("theta_ap", theta_ap),
                    ("phi_ap", phi_ap), ("theta_cc", theta_cc)):
        if r < 0.0:
            raise ValueError(f"{name} must be >= 0, got {r!r}")

    t_wireless = _least_period(volume_bits, 1.0 - rho, theta_ed, phi_ed)
    t_wired = _least_period(volume_bits, 1.0 - rho, theta_ed + theta_ap, phi_ap)
    t_cloud = _least_period(volume_bits, 1.0, theta_ed + theta_ap, theta_cc)
    t = max(t_wireless, t_wired, t_cloud)
    if math.isinf(t):
        raise Infeasible(
            "no finite period: residual work meets a zero-rate stage "
            f"(wireless {t_wireless}, wired {t_wired}, cloud {t_cloud})")

    s_ed = min(1.0, t * theta_ed / volume_bits)
    s_ap = min(1.0 - s_ed, t * theta_ap / volume_bits)
    s_cc = max(0.0, 1.0 - s_ed - s_ap)

    topo, wl = _single_instance(volume_bits, rho, theta_ed, phi_ed, theta_ap, phi_ap, theta_cc)
    plan = OffloadPlan(shares={"ed0": (s_ed, s_ap, s_cc)}, wireless_fractions={"ed0": 1.0})
    return plan, stage_times(topo, wl, plan)


def _single_instance(volume_bits, rho, theta_ed, phi_ed, theta_ap, phi_ap, theta_cc):
    """Wrap scalar rates into a one-ED topology for stage evaluation.

    ``build_topology`` is for configs and rejects degenerate links, but
    the scalar planner entry point accepts zero (dead) and infinite
    (free) link rates, so the tree is assembled directly here. Free
    links become a rate large enough that any transfer is negligible.
    """
    from .model import AP as _AP, CC as _CC, ED as _ED, DeviceSpec, LinkSpec, Topology

    big = 1e30
    phi_ed = min(phi_ed, big)
    phi_ap = min(phi_ap, big)
    cc = DeviceSpec(id="cc", layer=_CC, cpu_hz=theta_cc)
    ap = DeviceSpec(id="ap0", layer=_AP, cpu_hz=theta_ap, parent="cc")
    ed = DeviceSpec(id="ed0", layer=_ED, cpu_hz=theta_ed, parent="ap0")
    topo = Topology(cc=cc, aps=(ap,), eds=(ed,),
                    wireless={"ap0": LinkSpec.wireless(phi_ed, 1.0)},
                    wired={"ap0": LinkSpec.wired(phi_ap)},
                    mapping={"ed0": "ap0"})
    wl = Workload(packet_bits=volume_bits, period_s=1.0, compression_ratio=rho,
                  cycles_per_bit=1.0)
    return topo, wl


def allocate_wireless(loads_bits: Sequence[float], shared_rate_bps: float) -> list[float]:
    """Split a shared uplink proportionally to the loads on it.

    Proportional slices equalize the per-ED transfer times (every ED
    finishes in ``total / rate``), which is exactly the minimax split
    for a shared link. All-zero loads get a uniform split so no slice
    is wasted on air.
    """
    if shared_rate_bps <= 0.0:
        raise ValueError(f"shared_rate_bps must be positive, got {shared_rate_bps!r}")
    loads = [float(x) for x in loads_bits]
    if any(x < 0.0 for x in loads):
        raise ValueError("loads must be >= 0")
    total = sum(loads)
    if total <= 0.0:
        n = len(loads)
        return [1.0 / n] * n if n else []
    return [x / total for x in loads]


def _pl_root(knees: Iterable[float], lhs, rate_bps: float) -> float:
    """Root of ``lhs(t) <= t * rate`` for non-increasing piecewise-linear lhs.

    ``knees`` are the abscissas where the slope of ``lhs`` may change;
    between consecutive knees the gap ``lhs(t) - t * rate`` is linear,
    so scanning the segments and interpolating inside the first one
    that crosses zero gives the exact root. Past the last knee ``lhs``
    is constant and the tail root is ``lhs / rate``.
    """
    pts = sorted({float(k) for k in knees if math.isfinite(k) and k > 0.0})
    prev_t = 0.0
    prev_gap = lhs(0.0)
    if prev_gap <= 0.0:
        return 0.0
    for k in pts:
        gap = lhs(k) - k * rate_bps
        if gap <= 0.0:
            # Crosses inside (prev_t, k]; the gap is linear here.
            return prev_t + (k - prev_t) * prev_gap / (prev_gap - gap)
        prev_t, prev_gap = k, gap
    residual = lhs(prev_t)
    tail = div_time(residual, rate_bps)
    return max(tail, prev_t)


def tato_multi(topology: Topology, workload: Workload) -> tuple[OffloadPlan, StageTimes]:
    """Jointly optimal shares and wireless fractions for a full tree.

    The single-ED logic generalizes: each shared resource contributes
    one piecewise-linear constraint on the common period ``t``, whose
    knees come from the times ``V_e / theta_e`` at which individual
    EDs finish their whole flow locally (plus, for the CC constraint,
    the times at which each AP catches up with its leftover).

    - per-AP wireless: the shared uplink must carry
      ``sum_e max(rho * V_e, V_e - (1-rho) * t * theta_e)``;
    - per-AP backhaul: compressed results of everything the AP's
      subtree processes plus raw cloud overflow,
      ``rho * V_m + (1-rho) * max(0, W_m(t) - t * theta_m)`` where
      ``W_m(t) = sum_e max(0, V_e - t * theta_e)`` is the leftover
      after local processing;
    - CC compute: ``sum_m max(0, W_m(t) - t * theta_m)``.

    The optimal period is the largest crossing; shares fill bottom-up
    at that period, the AP slice going to its EDs in id order, and the
    wireless fractions are proportional to the resulting uplink loads.

    Raises:
        Infeasible: when some residual work faces a zero total rate.
    """
    rates = effective_rates(topology, workload)
    rho = workload.compression_ratio
    vols = {e.id: workload.volume_bits(e.id) for e in topology.eds}

    worst = 0.0
    worst_label = ""
    ap_knees: dict[str, list[float]] = {}
    ap_catchup: dict[str, float] = {}

    def leftover(members, t):
        return sum(max(0.0, vols[e.id] - t * rates.theta[e.id]) for e in members)

    for ap in topology.aps:
        members = topology.eds_under(ap.id)
        if not members:
            ap_knees[ap.id] = []
            ap_catchup[ap.id] = 0.0
            continue
        knees = [div_time(vols[e.id], rates.theta[e.id]) for e in members]
        ap_knees[ap.id] = knees
        theta_m = rates.theta[ap.id]

        def wireless_load(t, members=members):
            return sum(max(rho * vols[e.id],
                           vols[e.id] - (1.0 - rho) * t * rates.theta[e.id])
                       for e in members)

        t_w = _pl_root(knees, wireless_load, rates.wireless_bps[ap.id])
        if t_w > worst:
            worst, worst_label = t_w, f"wireless uplink of {ap.id}"

        t_catch = _pl_root(knees, lambda t, m=members: leftover(m, t), theta_m)
        ap_catchup[ap.id] = t_catch

        total_m = sum(vols[e.id] for e in members)

        def wired_load(t, members=members, theta_m=theta_m, total=total_m):
            return rho * total + (1.0 - rho) * max(0.0, leftover(members, t) - t * theta_m)

        t_b = _pl_root(knees + [t_catch], wired_load, rates.wired_bps[ap.id])
        if t_b > worst:
            worst, worst_label = t_b, f"backhaul of {ap.id}"

    def cloud_load(t):
        return sum(max(0.0, leftover(topology.eds_under(a.id), t) - t * rates.theta[a.id])
                   for a in topology.aps)

    all_knees = [k for ks in ap_knees.values() for k in ks]
    all_knees += [v for v in ap_catchup.values()]
    t_c = _pl_root(all_knees, cloud_load, rates.theta[topology.cc.id])
    if t_c > worst:
        worst, worst_label = t_c, "cc compute"

    if math.isinf(worst):
        raise Infeasible(f"no finite period: {worst_label} has zero rate for residual work")

    plan = _plan_at(topology, workload, rates, worst)
    return plan, stage_times(topology, workload, plan)


def _plan_at(topology: Topology, workload: Workload, rates, t: float) -> OffloadPlan:
    """Construct the bottom-up share split realizing period ``t``."""
    rho = workload.compression_ratio
    shares: dict[str, tuple[float, float, float]] = {}
    fractions: dict[str, float] = {}
    for ap in topology.aps:
        members = sorted(topology.eds_under(ap.id), key=lambda d: d.id)
        leftovers: dict[str, float] = {}
        for e in members:
            v = workload.volume_bits(e.id)
            if v <= 0.0:
                shares[e.id] = (1.0, 0.0, 0.0)
                leftovers[e.id] = 0.0
                continue
            s_ed = min(1.0, t * rates.theta[e.id] / v)
            leftovers[e.id] = (1.0 - s_ed) * v
            shares[e.id] = (s_ed, 0.0, 0.0)
        spill = sum(leftovers.values())
        budget = min(spill, t * rates.theta[ap.id])
        for e in members:
            v = workload.volume_bits(e.id)
            if v <= 0.0:
                continue
            # Attribute the AP's capacity proportionally to what each ED
            # spills; only the total affects any stage time, and the
            # proportional split keeps identical EDs interchangeable.
            take = budget * leftovers[e.id] / spill if spill > 0.0 else 0.0
            s_ed = shares[e.id][0]
            s_ap = min(take / v, 1.0 - s_ed)
            s_cc = max(0.0, 1.0 - s_ed - s_ap)
            shares[e.id] = (s_ed, s_ap, s_cc)
        loads = [(rho * shares[e.id][0] + shares[e.id][1] + shares[e.id][2])
                 * workload.volume_bits(e.id) for e in members]
        fracs = allocate_wireless(loads, rates.wireless_bps[ap.id])
        for e, f in zip(members, fracs):
            fractions[e.id] = f
    return OffloadPlan(shares=shares, wireless_fractions=fractions)


def _finish(topology, workload, rates, t):
    return stage_times(topology, workload, _plan_at(topology, workload, rates, t))


def overload_equalize(topology: Topology, workload: Workload, v_burst_bits: float) -> OffloadPlan:
    """Plan for a burst period whose volume exceeds the nominal one.

    When the burst still fits in one period the nominal plan stands.
    Otherwise the shares are re-balanced for the burst volume itself,
    stretching every stage by the same factor instead of letting the
    nominal bottleneck absorb the whole overshoot. Every ED's volume
    scales by ``v_burst / nominal`` so heterogeneous overrides keep
    their proportions.
    """
    if not v_burst_bits > 0.0:
        raise ValueError(f"v_burst_bits must be positive, got {v_burst_bits!r}")
    nominal = workload.packet_bits * workload.rate_pps
    if nominal <= 0.0:
        raise ValueError("nominal volume must be positive to scale a burst")
    factor = v_burst_bits / nominal

    burst_wl = Workload(
        packet_bits=v_burst_bits, period_s=workload.period_s,
        compression_ratio=workload.compression_ratio, rate_pps=1.0,
        cycles_per_bit=workload.cycles_per_bit,
        volume_overrides={k: v * factor for k, v in workload.volume_overrides.items()})
    plan, times = tato_multi(topology, burst_wl)
    if times.t_max <= workload.period_s:
        return tato_multi(topology, workload)[0]
    return plan


def baseline_plan(kind: str, topology: Topology, workload: Workload | None = None) -> OffloadPlan:
    """Fixed-strategy reference plans.

    - ``pure_cloud``: everything rides raw to the CC, (0, 0, 1);
    - ``pure_edge``: everything is processed locally, (1, 0, 0);
    - ``cloudlet``: everything is processed at the AP, (0, 1, 0).

    Wireless fractions are proportional to the resulting uplink loads
    (uniform per AP when volumes are equal). ``workload`` supplies
    per-ED volumes; omitted, all EDs count equally.
    """
    table = {"pure_cloud": (0.0, 0.0, 1.0), "pure_edge": (1.0, 0.0, 0.0),
             "cloudlet": (0.0, 1.0, 0.0)}
    if kind not in table:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {', '.join(BASELINES)}")
    split = table[kind]
    rho = workload.compression_ratio if workload is not None else 1.0

    shares = {e.id: split for e in topology.eds}
    fractions: dict[str, float] = {}
    for ap in topology.aps:
        members = topology.eds_under(ap.id)
        loads = []
        for e in members:
            v = workload.volume_bits(e.id) if workload is not None else 1.0
            loads.append((rho * split[0] + split[1] + split[2]) * v)
        total = sum(loads)
        for e, load in zip(members, loads):
            fractions[e.id] = (load / total) if total > 0.0 else (1.0 / len(members))
    return OffloadPlan(shares=shares, wireless_fractions=fractions)
