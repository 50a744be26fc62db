"""Discrete-time fluid simulator of the five-stage pipeline.

The analytic model treats each stage as a fluid server and reports
steady-state stage times; this simulator actually moves the bits, tick
by tick, so the analytic claims (finish times, stability boundaries,
overload growth, burst recovery) can be checked against an
implementation that knows nothing about the closed forms.

Mechanics: each period every ED injects its volume, pre-split by the
plan into parcels bound for the three layers. Stages are
processor-sharing fluid queues served in topological order within a
tick (ED compute, ED uplink, AP compute, AP backhaul, CC compute),
each with a per-tick budget of ``rate * dt`` bits, so a bit may
traverse several stages in one tick. Compute stages emit their input
compressed; links carry everything that passes them.

Accounting is raw-equivalent throughout: a compressed parcel counts at
the pre-compression size of the data it came from. That makes
conservation exact (injected = delivered + in flight, every tick) and
makes backlog comparable across plans that compress at different
layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import OffloadPlan, Topology, Workload, effective_rates

_DUST_BITS = 1e-9


@dataclass(frozen=True)
class SimConfig:
    """Knobs of one simulation run.

    ``ticks_per_period`` sets the time resolution; below 10 the
    discretization error swamps everything the simulator is meant to
    measure, so that is the floor.
    """

    ticks_per_period: int = 100
    periods: int = 30
    warmup_periods: int = 0

    def __post_init__(self):
        if self.ticks_per_period < 10:
            raise ValueError(f"ticks_per_period must be >= 10, got {self.ticks_per_period}")
        if self.periods < 1:
            raise ValueError(f"periods must be >= 1, got {self.periods}")
        if not (0 <= self.warmup_periods < self.periods):
            raise ValueError("warmup_periods must be in [0, periods)")


@dataclass
class SimTrace:
    """Everything a run recorded, in raw-equivalent bits."""

    dt: float
    period_s: float
    ticks_per_period: int
    periods: int
    warmup_periods: int
    burst_periods: tuple[int, ...]
    stage_keys: tuple[str, ...]
    occupancy: dict[str, list[float]] = field(default_factory=dict)
    total_backlog: list[float] = field(default_factory=list)
    injected: list[float] = field(default_factory=list)      # per period
    finish_s: list[float] = field(default_factory=list)      # per period, inf if never
    delivered_total: float = 0.0
    injected_total: float = 0.0
    conservation_max_rel_err: float = 0.0


@dataclass(frozen=True)
class SimMetrics:
    """Summary numbers distilled from a trace."""

    avg_finish_s: float
    finish_s: tuple[float, ...]
    idle_slack_s: tuple[float, ...]
    peak_backlog_bits: float
    backlog_slope_bits_per_period: float
    stable: bool
    recovery_s: tuple[float, ...]       # one entry per burst, inf if never recovered


class _Stage:
    """One fluid queue with a per-tick bit budget and a routing hook.

    Service is processor-sharing: the tick's budget is split across the
    queued flows in proportion to their remaining sizes, so co-queued
    sub-flows finish together instead of blocking one another. That is
    what makes a stage's completion time equal ``load / rate`` per
    sub-flow, which the analytic stage formulas assume.

    Bits are pooled per (period, tag, rawe factor), so the queue holds
    one entry per distinct flow no matter how it dribbles in.
    """

    __slots__ = ("key", "rate_bps", "queue", "backlog_rawe", "route")

    def __init__(self, key, rate_bps, route):
        self.key = key
        self.rate_bps = rate_bps
        self.queue: dict = {}   # (period, tag, factor) -> bits
        self.backlog_rawe = 0.0
        self.route = route      # route(period, tag, bits, rawe_factor)

    def push(self, period, tag, bits, factor):
        if bits <= 0.0:
            return
        key = (period, tag, factor)
        self.queue[key] = self.queue.get(key, 0.0) + bits
        self.backlog_rawe += bits * factor

    def serve(self, dt):
        q = self.queue
        if not q:
            return
        budget = self.rate_bps * dt
        total = sum(q.values())
        if total <= budget + _DUST_BITS:
            flows = list(q.items())
            q.clear()
            self.backlog_rawe = 0.0
            for (period, tag, factor), bits in flows:
                self.route(period, tag, bits, factor)
            return
        scale = budget / total
        for key, bits in list(q.items()):
            period, tag, factor = key
            take = bits * scale
            left = bits - take
            if left <= _DUST_BITS:
                take = bits
                del q[key]
            else:
                q[key] = left
            self.backlog_rawe -= take * factor
            self.route(period, tag, take, factor)


def simulate(topology: Topology, workload: Workload, plan: OffloadPlan,
             config: SimConfig = SimConfig()) -> SimTrace:
    """Run the pipeline for ``config.periods`` periods and record it.

    Parcels are tagged with the layer that must process them; compute
    stages serve only their own tag (everything else is routed around
    them at no cost), links carry whatever enters. A period counts as
    finished when its entire raw-equivalent volume has been delivered:
    ED- and AP-processed results on crossing the backhaul, CC shares
    once the CC has processed them.
    """
    plan.validate(topology)
    rates = effective_rates(topology, workload)
    rho = workload.compression_ratio
    dt = workload.period_s / config.ticks_per_period
    tpp = config.ticks_per_period
    n_ticks = config.periods * tpp

    outstanding: list[float] = [0.0] * config.periods
    finish: list[float] = [math.inf] * config.periods
    trace = SimTrace(
        dt=dt, period_s=workload.period_s, ticks_per_period=tpp,
        periods=config.periods, warmup_periods=config.warmup_periods,
        burst_periods=tuple(sorted(idx for idx, _ in workload.bursts)),
        stage_keys=(), finish_s=finish)

    tick_delivered = [0.0]

    def deliver(period, _tag, bits, factor):
        amount = bits * factor
        trace.delivered_total += amount
        outstanding[period] -= amount
        tick_delivered[0] += amount

    cc_stage = _Stage(f"cc_compute/{topology.cc.id}", rates.theta[topology.cc.id],
                      lambda p, tag, b, f: deliver(p, tag, b, f))

    ap_link: dict[str, _Stage] = {}
    ap_comp: dict[str, _Stage] = {}
    for ap in topology.aps:
        def ap_link_route(p, tag, b, f, _cc=cc_stage):
            if tag == "cc":
                _cc.push(p, tag, b, f)
            else:
                deliver(p, tag, b, f)
        link = _Stage(f"ap_link/{ap.id}", rates.wired_bps[ap.id], ap_link_route)
        ap_link[ap.id] = link
        ap_comp[ap.id] = _Stage(
            f"ap_compute/{ap.id}", rates.theta[ap.id],
            lambda p, tag, b, f, _link=link: _link.push(p, tag, b * rho, f / rho))

    ed_link: dict[str, _Stage] = {}
    ed_comp: dict[str, _Stage] = {}
    for e in topology.eds:
        ap_id = topology.ap_of(e.id)
        def ed_link_route(p, tag, b, f, _ap=ap_id):
            if tag == "ap":
                ap_comp[_ap].push(p, tag, b, f)
            else:
                ap_link[_ap].push(p, tag, b, f)
        uplink_rate = plan.wireless_fractions[e.id] * rates.wireless_bps[ap_id]
        link = _Stage(f"ed_link/{e.id}", uplink_rate, ed_link_route)
        ed_link[e.id] = link
        ed_comp[e.id] = _Stage(
            f"ed_compute/{e.id}", rates.theta[e.id],
            lambda p, tag, b, f, _link=link: _link.push(p, tag, b * rho, f / rho))

    stages: list[_Stage] = (
        [ed_comp[e.id] for e in topology.eds]
        + [ed_link[e.id] for e in topology.eds]
        + [ap_comp[a.id] for a in topology.aps]
        + [ap_link[a.id] for a in topology.aps]
        + [cc_stage])
    trace.stage_keys = tuple(s.key for s in stages)
    trace.occupancy = {s.key: [] for s in stages}
    trace.injected = [0.0] * config.periods

    for tick in range(n_ticks):
        tick_delivered[0] = 0.0
        if tick % tpp == 0:
            period = tick // tpp
            mult = workload.burst_multiplier(period)
            for e in topology.eds:
                v = workload.volume_bits(e.id) * mult
                if v <= 0.0:
                    continue
                s_ed, s_ap, s_cc = plan.shares[e.id]
                ed_comp[e.id].push(period, "ed", s_ed * v, 1.0)
                ed_link[e.id].push(period, "ap", s_ap * v, 1.0)
                ed_link[e.id].push(period, "cc", s_cc * v, 1.0)
                outstanding[period] += v
                trace.injected[period] += v
                trace.injected_total += v
            if trace.injected[period] <= 0.0:
                finish[period] = 0.0

        for stage in stages:
            stage.serve(dt)

        if tick_delivered[0] > 0.0:
            last_injected = tick // tpp
            for k in range(min(last_injected, config.periods - 1) + 1):
                if math.isinf(finish[k]) and trace.injected[k] > 0.0:
                    if outstanding[k] <= 1e-9 * trace.injected[k] + 1e-12:
                        finish[k] = (tick + 1 - k * tpp) * dt

        backlog = 0.0
        for stage in stages:
            occ = stage.backlog_rawe
            trace.occupancy[stage.key].append(occ)
            backlog += occ
        trace.total_backlog.append(backlog)

        err = abs(trace.injected_total - trace.delivered_total - backlog)
        rel = err / max(trace.injected_total, 1.0)
        if rel > trace.conservation_max_rel_err:
            trace.conservation_max_rel_err = rel

    return trace


def metrics(trace: SimTrace, workload: Workload | None = None) -> SimMetrics:
    """Distill a trace into the numbers experiments report.

    The trace carries everything needed; passing the workload it was
    produced from lets the burst schedule be taken from the source of
    truth instead of the trace's own copy.

    - Average finish time covers post-warmup periods that completed.
    - The backlog growth slope is measured between period-end samples
      over the last two thirds of the run, where an overloaded system
      has settled into its steady growth.
    - Stability compares the final period-end backlog against the
      mid-run period-end level: a draining system ends no higher than
      it stood halfway. Sampling at period boundaries keeps the
      in-flight portion of the current period out of the comparison.
    - Recovery, per burst: time from the burst's injection until total
      backlog first returns to within 1% of its pre-burst level
      (mean over the three periods before the burst).
    """
    tpp = trace.ticks_per_period
    dt = trace.dt
    n = trace.periods
    burst_periods = trace.burst_periods
    if workload is not None:
        burst_periods = tuple(sorted(int(p) for p, _ in workload.bursts))

    done = [t for k, t in enumerate(trace.finish_s)
            if k >= trace.warmup_periods and math.isfinite(t)]
    avg_finish = sum(done) / len(done) if done else math.inf

    idle = tuple(max(0.0, trace.period_s - t) if math.isfinite(t) else 0.0
                 for t in trace.finish_s)

    peak = max(trace.total_backlog, default=0.0)
    eps = 1e-9 * max(1.0, peak)

    period_end = [trace.total_backlog[(k + 1) * tpp - 1] for k in range(n)]
    k0 = max(trace.warmup_periods, n // 3)
    k1 = n - 1
    slope = (period_end[k1] - period_end[k0]) / (k1 - k0) if k1 > k0 else 0.0

    stable = period_end[-1] <= period_end[n // 2] + eps

    recovery = []
    for p in burst_periods:
        start = p * tpp
        pre_lo = max(0, (p - 3) * tpp)
        pre = trace.total_backlog[pre_lo:start]
        level = sum(pre) / len(pre) if pre else 0.0
        threshold = 1.01 * level + eps
        rec = math.inf
        for t in range(start, len(trace.total_backlog)):
            if trace.total_backlog[t] <= threshold:
                rec = (t - start + 1) * dt
                break
        recovery.append(rec)

    return SimMetrics(
        avg_finish_s=avg_finish, finish_s=tuple(trace.finish_s), idle_slack_s=idle,
        peak_backlog_bits=peak, backlog_slope_bits_per_period=slope,
        stable=stable, recovery_s=tuple(recovery))
