"""Domain model for a three-layer offloading pipeline.

The system is a tree. Edge devices (EDs) sit at the bottom and generate
data in fixed periods, access points (APs) bridge them to the cloud
center (CC) at the root. An offload plan splits each ED's per-period
flow three ways: a share processed locally, a share processed at its
AP, and a share processed at the CC. Processing compresses data to
``rho`` times its raw size, so the split decides how many bits every
uplink has to move.

Five stages govern throughput: ED compute, the shared wireless uplink,
AP compute, the dedicated wired backhaul, and CC compute. The stages
run concurrently on successive periods, so the pipeline needs its
single longest stage time per period; that maximum is ``t_max`` and
planners try to shrink it.

Unit conventions, used everywhere in the package:

- data volumes in bits
- rates in bits per second (CPU frequency maps to a bit rate through a
  cycles-per-bit density)
- times in seconds
- degenerate stages follow 0/0 = 0 (no work, no time) and x/0 = +inf
  for x > 0 (work that can never finish)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

ED = "ed"
AP = "ap"
CC = "cc"

WIRELESS_SHARED = "wireless_shared"
WIRED_DEDICATED = "wired_dedicated"

# Stage kinds, in bottleneck tie-break order.
ED_COMPUTE = "ed_compute"
ED_LINK = "ed_link"
AP_COMPUTE = "ap_compute"
AP_LINK = "ap_link"
CC_COMPUTE = "cc_compute"
STAGE_ORDER = (ED_COMPUTE, ED_LINK, AP_COMPUTE, AP_LINK, CC_COMPUTE)

DEFAULT_CYCLES_PER_BIT = 1000.0
DEFAULT_SPECTRAL_EFFICIENCY = 2.0


class Infeasible(RuntimeError):
    """No plan with a finite longest stage exists for the instance."""


def div_time(volume_bits: float, rate_bps: float) -> float:
    """Seconds to move/process ``volume_bits`` at ``rate_bps``.

    Applies the package-wide degenerate conventions: zero work takes
    zero time regardless of rate, positive work at zero rate never
    finishes.
    """
    if volume_bits <= 0.0:
        return 0.0
    if rate_bps <= 0.0:
        return math.inf
    return volume_bits / rate_bps


@dataclass(frozen=True)
class DeviceSpec:
    """One node of the tree.

    Attributes:
        id: unique identifier.
        layer: one of ``ed``, ``ap``, ``cc``.
        cpu_hz: CPU frequency in cycles per second, >= 0. Zero means
            the device cannot process (it may still relay).
        parent: id of the AP (for EDs) or the CC (for APs); None for
            the CC itself.
    """

    id: str
    layer: str
    cpu_hz: float
    parent: str | None = None


@dataclass(frozen=True)
class LinkSpec:
    """A wireless shared uplink or a wired dedicated backhaul.

    Exactly the fields for the kind are meaningful: wireless links
    carry ``bandwidth_hz`` and ``spectral_efficiency``, wired links
    carry ``capacity_bps``.
    """

    kind: str
    bandwidth_hz: float = 0.0
    spectral_efficiency: float = 0.0
    capacity_bps: float = 0.0

    @staticmethod
    def wireless(bandwidth_hz: float,
                 spectral_efficiency: float = DEFAULT_SPECTRAL_EFFICIENCY) -> "LinkSpec":
        return LinkSpec(kind=WIRELESS_SHARED, bandwidth_hz=bandwidth_hz,
                        spectral_efficiency=spectral_efficiency)

    @staticmethod
    def wired(capacity_bps: float) -> "LinkSpec":
        return LinkSpec(kind=WIRED_DEDICATED, capacity_bps=capacity_bps)

    def rate_bps(self) -> float:
        """Aggregate data rate of the link in bits per second."""
        if self.kind == WIRELESS_SHARED:
            return self.bandwidth_hz * self.spectral_efficiency
        return self.capacity_bps


@dataclass(frozen=True)
class Topology:
    """Validated device tree. Build through :func:`build_topology`."""

    cc: DeviceSpec
    aps: tuple[DeviceSpec, ...]
    eds: tuple[DeviceSpec, ...]
    wireless: Mapping[str, LinkSpec]    # AP id -> shared uplink below it
    wired: Mapping[str, LinkSpec]       # AP id -> backhaul above it
    mapping: Mapping[str, str]          # ED id -> AP id

    def eds_under(self, ap_id: str) -> tuple[DeviceSpec, ...]:
        return tuple(e for e in self.eds if self.mapping[e.id] == ap_id)

    def ap_of(self, ed_id: str) -> str:
        return self.mapping[ed_id]

    def device(self, device_id: str) -> DeviceSpec:
        for d in self.devices():
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def devices(self) -> tuple[DeviceSpec, ...]:
        return self.eds + self.aps + (self.cc,)


def build_topology(raw: Mapping, *,
                   default_spectral_efficiency: float = DEFAULT_SPECTRAL_EFFICIENCY) -> Topology:
    """Assemble and validate a :class:`Topology` from a plain mapping.

    Expected shape::

        {"cc":  {"id": "cc", "cpu_hz": 3.6e10},
         "aps": [{"id": "ap0", "cpu_hz": 3.6e9,
                  "wireless": {"bandwidth_hz": 5e6, "spectral_efficiency": 2.0},
                  "wired": {"capacity_bps": 8e6}}, ...],
         "eds": [{"id": "ed0", "cpu_hz": 1e9, "ap": "ap0"}, ...]}

    ``spectral_efficiency`` may be omitted per link, in which case
    ``default_spectral_efficiency`` applies.

    Raises:
        ValueError: listing every violated structural invariant.
    """
    problems: list[str] = []

    def _cpu(entry: Mapping, label: str) -> float:
        cpu = float(entry.get("cpu_hz", -1.0))
        if not math.isfinite(cpu) or cpu < 0.0:
            problems.append(f"{label}: cpu_hz must be finite and >= 0, got {entry.get('cpu_hz')!r}")
            return 0.0
        return cpu

    cc_raw = raw.get("cc")
    if not isinstance(cc_raw, Mapping):
        raise ValueError("topology: missing 'cc' section")
    cc = DeviceSpec(id=str(cc_raw.get("id", "cc")), layer=CC, cpu_hz=_cpu(cc_raw, "cc"))

    aps: list[DeviceSpec] = []
    wireless: dict[str, LinkSpec] = {}
    wired: dict[str, LinkSpec] = {}
    for i, ap_raw in enumerate(raw.get("aps", ())):
        ap_id = str(ap_raw.get("id", f"ap{i}"))
        aps.append(DeviceSpec(id=ap_id, layer=AP, cpu_hz=_cpu(ap_raw, ap_id), parent=cc.id))
        wl_raw = ap_raw.get("wireless")
        if not isinstance(wl_raw, Mapping):
            problems.append(f"{ap_id}: missing wireless link spec")
        else:
            bw = float(wl_raw.get("bandwidth_hz", 0.0))
            eff = float(wl_raw.get("spectral_efficiency", default_spectral_efficiency))
            if not (math.isfinite(bw) and bw > 0.0):
                problems.append(f"{ap_id}: wireless bandwidth_hz must be positive, got {bw!r}")
            if not (math.isfinite(eff) and eff > 0.0):
                problems.append(f"{ap_id}: spectral_efficiency must be positive, got {eff!r}")
            wireless[ap_id] = LinkSpec.wireless(bw, eff)
        wd_raw = ap_raw.get("wired")
        if not isinstance(wd_raw, Mapping):
            problems.append(f"{ap_id}: missing wired link spec")
        else:
            cap = float(wd_raw.get("capacity_bps", 0.0))
            if not (math.isfinite(cap) and cap > 0.0):
                problems.append(f"{ap_id}: wired capacity_bps must be positive, got {cap!r}")
            wired[ap_id] = LinkSpec.wired(cap)

    ap_ids = [a.id for a in aps]
    eds: list[DeviceSpec] = []
    mapping: dict[str, str] = {}
    for i, ed_raw in enumerate(raw.get("eds", ())):
        ed_id = str(ed_raw.get("id", f"ed{i}"))
        ap_ref = ed_raw.get("ap")
        if ap_ref not in ap_ids:
            problems.append(f"{ed_id}: references unknown AP {ap_ref!r}")
            ap_ref = ap_ids[0] if ap_ids else None
        eds.append(DeviceSpec(id=ed_id, layer=ED, cpu_hz=_cpu(ed_raw, ed_id), parent=ap_ref))
        if ap_ref is not None:
            mapping[ed_id] = str(ap_ref)

    all_ids = [d.id for d in eds] + ap_ids + [cc.id]
    dupes = sorted({x for x in all_ids if all_ids.count(x) > 1})
    if dupes:
        problems.append(f"duplicate device ids: {', '.join(dupes)}")
    if not eds:
        problems.append("topology needs at least one ED")
    if not aps:
        problems.append("topology needs at least one AP")

    if problems:
        raise ValueError("invalid topology:\n  " + "\n  ".join(problems))
    return Topology(cc=cc, aps=tuple(aps), eds=tuple(eds),
                    wireless=wireless, wired=wired, mapping=mapping)


@dataclass(frozen=True)
class Workload:
    """Periodic data generation at the EDs.

    ``packet_bits * rate_pps`` bits arrive at every ED per period of
    ``period_s`` seconds; ``volume_overrides`` lets individual EDs
    deviate. ``bursts`` lists (period index, multiplier) pairs whose
    period receives multiplier-times the nominal volume. Processing
    anywhere compresses a flow to ``compression_ratio`` of its size,
    and ``cycles_per_bit`` maps CPU frequency to processing rate.
    """

    packet_bits: float
    period_s: float
    compression_ratio: float
    rate_pps: float = 1.0
    bursts: tuple[tuple[int, float], ...] = ()
    cycles_per_bit: float = DEFAULT_CYCLES_PER_BIT
    volume_overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.packet_bits) and self.packet_bits > 0.0):
            raise ValueError(f"packet_bits must be positive, got {self.packet_bits!r}")
        if not (math.isfinite(self.period_s) and self.period_s > 0.0):
            raise ValueError(f"period_s must be positive, got {self.period_s!r}")
        if not (0.0 < self.compression_ratio <= 1.0):
            raise ValueError(
                "compression_ratio must be in (0, 1]: processing is required to "
                f"compress data, got {self.compression_ratio!r}")
        if self.rate_pps < 0.0:
            raise ValueError(f"rate_pps must be >= 0, got {self.rate_pps!r}")
        if not (math.isfinite(self.cycles_per_bit) and self.cycles_per_bit > 0.0):
            raise ValueError(f"cycles_per_bit must be positive, got {self.cycles_per_bit!r}")
        seen = set()
        for entry in self.bursts:
            idx, mult = entry
            if int(idx) != idx or idx < 0:
                raise ValueError(f"burst period index must be a non-negative integer, got {idx!r}")
            if mult < 1.0:
                raise ValueError(f"burst multiplier must be >= 1, got {mult!r}")
            if idx in seen:
                raise ValueError(f"duplicate burst at period {idx}")
            seen.add(idx)
        for ed_id, vol in self.volume_overrides.items():
            if vol < 0.0:
                raise ValueError(f"volume override for {ed_id} must be >= 0, got {vol!r}")

    def volume_bits(self, ed_id: str) -> float:
        """Nominal per-period volume of one ED."""
        if ed_id in self.volume_overrides:
            return float(self.volume_overrides[ed_id])
        return self.packet_bits * self.rate_pps

    def burst_multiplier(self, period_index: int) -> float:
        for idx, mult in self.bursts:
            if idx == period_index:
                return float(mult)
        return 1.0


@dataclass(frozen=True)
class RateTable:
    """Effective service rates, all in bits per second."""

    theta: Mapping[str, float]          # device id -> processing rate
    wireless_bps: Mapping[str, float]   # AP id -> aggregate shared uplink rate
    wired_bps: Mapping[str, float]      # AP id -> backhaul rate


def effective_rates(topology: Topology, workload: Workload) -> RateTable:
    """Map hardware specs to bit rates.

    A device processes ``cpu_hz / cycles_per_bit`` bits per second; a
    shared wireless uplink moves ``bandwidth_hz * spectral_efficiency``
    bits per second in aggregate; a wired backhaul moves its capacity.
    """
    kappa = workload.cycles_per_bit
    theta = {d.id: d.cpu_hz / kappa for d in topology.devices()}
    wireless = {ap_id: link.rate_bps() for ap_id, link in topology.wireless.items()}
    wired = {ap_id: link.rate_bps() for ap_id, link in topology.wired.items()}
    return RateTable(theta=theta, wireless_bps=wireless, wired_bps=wired)


@dataclass(frozen=True)
class OffloadPlan:
    """Per-ED share split plus per-ED wireless fractions.

    ``shares[ed] = (s_ed, s_ap, s_cc)``: fractions of that ED's flow
    processed at each layer, each >= 0 and summing to 1.
    ``wireless_fractions[ed]``: that ED's slice of its AP's shared
    uplink; slices under one AP sum to at most 1.
    """

    shares: Mapping[str, tuple[float, float, float]]
    wireless_fractions: Mapping[str, float]

    def validate(self, topology: Topology, tol: float = 1e-9) -> None:
        for ed in topology.eds:
            if ed.id not in self.shares:
                raise ValueError(f"plan is missing shares for {ed.id}")
            s = self.shares[ed.id]
            if len(s) != 3 or any(x < -tol for x in s):
                raise ValueError(f"{ed.id}: shares must be non-negative, got {s!r}")
            if abs(sum(s) - 1.0) > tol:
                raise ValueError(f"{ed.id}: shares must sum to 1, got {s!r}")
            if ed.id not in self.wireless_fractions:
                raise ValueError(f"plan is missing a wireless fraction for {ed.id}")
            if self.wireless_fractions[ed.id] < -tol:
                raise ValueError(f"{ed.id}: wireless fraction must be >= 0")
        for ap in topology.aps:
            total = sum(self.wireless_fractions[e.id] for e in topology.eds_under(ap.id))
            if total > 1.0 + tol:
                raise ValueError(f"{ap.id}: wireless fractions sum to {total}, over 1")


@dataclass(frozen=True)
class StageTimes:
    """All five stage durations for one plan, plus the bottleneck."""

    ed_compute: Mapping[str, float]
    ed_link: Mapping[str, float]
    ap_compute: Mapping[str, float]
    ap_link: Mapping[str, float]
    cc_compute: float
    cc_id: str
    t_max: float
    bottleneck: tuple[str, str]     # (stage kind, device id)


def _pick_bottleneck(ed_c, ed_l, ap_c, ap_l, cc_c, cc_id, t_max):
    groups = ((ED_COMPUTE, ed_c), (ED_LINK, ed_l), (AP_COMPUTE, ap_c), (AP_LINK, ap_l))
    for kind, table in groups:
        for dev in sorted(table):
            if table[dev] == t_max:
                return (kind, dev)
    return (CC_COMPUTE, cc_id)


def bottleneck(st: StageTimes) -> tuple[str, str]:
    """Identify a stage attaining ``t_max``.

    Ties break by stage kind in :data:`STAGE_ORDER`, then by device id.
    """
    return _pick_bottleneck(st.ed_compute, st.ed_link, st.ap_compute, st.ap_link,
                            st.cc_compute, st.cc_id, st.t_max)


def stage_times(topology: Topology, workload: Workload, plan: OffloadPlan) -> StageTimes:
    """Evaluate the five pipeline stage durations under a plan.

    Per ED with volume V and shares (s_ed, s_ap, s_cc):

    - ED compute:  s_ed * V / theta_ed
    - ED uplink:   (rho*s_ed + s_ap + s_cc) * V / (alpha * R_w), the
      local results plus everything passed through raw, over this ED's
      slice of the shared wireless rate

    Per AP, summing over its EDs:

    - AP compute:  sum(s_ap * V) / theta_ap
    - AP backhaul: sum((rho*s_ed + rho*s_ap + s_cc) * V) / phi_ap,
      upstream results compressed, cloud shares still raw

    And CC compute: sum(s_cc * V) / theta_cc.
    """
    plan.validate(topology)
    rates = effective_rates(topology, workload)
    rho = workload.compression_ratio

    ed_c: dict[str, float] = {}
    ed_l: dict[str, float] = {}
    for e in topology.eds:
        v = workload.volume_bits(e.id)
        s_ed, s_ap, s_cc = plan.shares[e.id]
        ed_c[e.id] = div_time(s_ed * v, rates.theta[e.id])
        uplink_rate = plan.wireless_fractions[e.id] * rates.wireless_bps[topology.ap_of(e.id)]
        ed_l[e.id] = div_time((rho * s_ed + s_ap + s_cc) * v, uplink_rate)

    ap_c: dict[str, float] = {}
    ap_l: dict[str, float] = {}
    for a in topology.aps:
        members = topology.eds_under(a.id)
        ap_load = sum(plan.shares[e.id][1] * workload.volume_bits(e.id) for e in members)
        back_load = sum(
            (rho * plan.shares[e.id][0] + rho * plan.shares[e.id][1] + plan.shares[e.id][2])
            * workload.volume_bits(e.id)
            for e in members)
        ap_c[a.id] = div_time(ap_load, rates.theta[a.id])
        ap_l[a.id] = div_time(back_load, rates.wired_bps[a.id])

    cc_load = sum(plan.shares[e.id][2] * workload.volume_bits(e.id) for e in topology.eds)
    cc_c = div_time(cc_load, rates.theta[topology.cc.id])

    t_max = max(
        max(ed_c.values(), default=0.0), max(ed_l.values(), default=0.0),
        max(ap_c.values(), default=0.0), max(ap_l.values(), default=0.0),
        cc_c,
    )
    bott = _pick_bottleneck(ed_c, ed_l, ap_c, ap_l, cc_c, topology.cc.id, t_max)
    return StageTimes(ed_compute=ed_c, ed_link=ed_l, ap_compute=ap_c, ap_link=ap_l,
                      cc_compute=cc_c, cc_id=topology.cc.id, t_max=t_max, bottleneck=bott)
