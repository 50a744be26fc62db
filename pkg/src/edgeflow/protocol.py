"""Planning handshake between the layers, as a message protocol.

The planner itself is a pure function, but the devices that must obey
it are distributed. This module models the coordination round that
turns a task announcement into a running plan:

1. the CC accepts a task and notifies every AP; APs fan the
   notification out to their EDs;
2. willing devices register their capacity upward, APs aggregating
   their subtree into a single registration (a quiescence timeout
   stands in for devices that stay silent);
3. the CC plans over the participants and pushes per-subtree plan
   assignments back down, followed by the processing start signal;
4. devices acknowledge with result reports as processing begins, and
   the CC may replan mid-flight when a resource update drifts far
   enough from what it planned with.

Every node walks the phase chain Idle, Notified, Registered, Planned,
Processing in order (the CC skips Registered: it collects
registrations, it does not send one). ``step_node`` is pure: state in,
message in, new state and outbound messages out; the scheduler in
``run_schedule`` owns delivery order, logging, and the two bookkeeping
transitions that happen on sending rather than receiving.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Mapping

from .model import (
    AP,
    CC,
    ED,
    Infeasible,
    LinkSpec,
    OffloadPlan,
    RateTable,
    Topology,
    Workload,
    effective_rates,
)
from .tato import tato_multi

TASK_NOTIFICATION = "TaskNotification"
REGISTRATION = "Registration"
PLAN_ASSIGNMENT = "PlanAssignment"
START_PROCESSING = "StartProcessing"
RESULT_REPORT = "ResultReport"
RESOURCE_UPDATE = "ResourceUpdate"
SCHEDULE_ABORTED = "ScheduleAborted"

IDLE = "Idle"
NOTIFIED = "Notified"
REGISTERED = "Registered"
PLANNED = "Planned"
PROCESSING = "Processing"

PHASE_CHAIN = {
    ED: (IDLE, NOTIFIED, REGISTERED, PLANNED, PROCESSING),
    AP: (IDLE, NOTIFIED, REGISTERED, PLANNED, PROCESSING),
    CC: (IDLE, NOTIFIED, PLANNED, PROCESSING),
}

DEFAULT_TOKEN = "task-1"


class OutOfOrder(RuntimeError):
    """A message arrived that the receiving phase cannot accept."""


@dataclass(frozen=True)
class Message:
    variant: str
    sender: str
    receiver: str
    payload: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class Event:
    """One line of the schedule log.

    ``kind`` is ``message`` for a delivery, ``local`` for a phase
    transition that happened on sending, ``error`` for a rejected
    delivery or an aborted schedule.
    """

    seq: int
    sender: str
    receiver: str
    variant: str
    kind: str = "message"
    detail: str = ""


@dataclass(frozen=True)
class PlanningContext:
    """What the CC planned with, kept for drift checks and replans."""

    topology: Topology
    workload: Workload
    rates: RateTable
    plan: OffloadPlan
    t_max: float


@dataclass(frozen=True)
class NodeState:
    """Protocol-visible state of one device. Layer decides which
    fields matter; the rest stay at their defaults."""

    device_id: str
    layer: str
    phase: str = IDLE
    participating: bool = True
    token: str = DEFAULT_TOKEN
    parent: str | None = None
    cpu_hz: float = 0.0
    # ED
    plan_entry: tuple | None = None
    # AP
    children: tuple[str, ...] = ()
    wireless_bps: float = 0.0
    wired_bps: float = 0.0
    awaiting: frozenset = frozenset()
    child_cpu_hz: Mapping[str, float] = field(default_factory=dict)
    plan_table: Mapping | None = None
    # CC
    expected_aps: tuple[str, ...] = ()
    registrations: Mapping[str, Mapping] = field(default_factory=dict)
    base_topology: Topology | None = None
    workload: Workload | None = None
    planning: PlanningContext | None = None
    failure: str | None = None


def init_states(topology: Topology, workload: Workload,
                participation: Mapping[str, bool] | None = None,
                token: str = DEFAULT_TOKEN) -> dict[str, NodeState]:
    """Fresh Idle states for every device in the tree.

    ``participation`` marks devices that will decline the task
    (missing entries mean willing); the CC always participates.
    """
    participation = dict(participation or {})
    rates = effective_rates(topology, workload)
    states: dict[str, NodeState] = {}
    for e in topology.eds:
        states[e.id] = NodeState(device_id=e.id, layer=ED, parent=topology.ap_of(e.id),
                                 cpu_hz=e.cpu_hz, token=token,
                                 participating=participation.get(e.id, True))
    for a in topology.aps:
        children = tuple(e.id for e in topology.eds_under(a.id))
        states[a.id] = NodeState(device_id=a.id, layer=AP, parent=topology.cc.id,
                                 cpu_hz=a.cpu_hz, token=token, children=children,
                                 wireless_bps=rates.wireless_bps[a.id],
                                 wired_bps=rates.wired_bps[a.id],
                                 participating=participation.get(a.id, True))
    states[topology.cc.id] = NodeState(
        device_id=topology.cc.id, layer=CC, cpu_hz=topology.cc.cpu_hz, token=token,
        expected_aps=tuple(a.id for a in topology.aps),
        base_topology=topology, workload=workload)
    return states


def participant_subgraph(topology: Topology, participation: Mapping[str, bool]) -> Topology:
    """The tree the CC actually plans over.

    Declining devices keep their place (their links still carry
    traffic, their EDs still produce data) but lose their compute: a
    zero CPU rate forces the planner to route their work elsewhere.
    """
    def strip(dev):
        if participation.get(dev.id, True):
            return dev
        return replace(dev, cpu_hz=0.0)

    return replace(topology, eds=tuple(strip(e) for e in topology.eds),
                   aps=tuple(strip(a) for a in topology.aps))


def _ap_aggregate(state: NodeState) -> Message:
    payload = {
        "token": state.token,
        "ap_cpu_hz": state.cpu_hz if state.participating else None,
        "wireless_bps": state.wireless_bps,
        "wired_bps": state.wired_bps,
        "children": dict(sorted(state.child_cpu_hz.items())),
    }
    return Message(REGISTRATION, state.device_id, state.parent, payload)


def _ed_step(state: NodeState, msg: Message) -> tuple[NodeState, list[Message]]:
    if msg.variant == TASK_NOTIFICATION:
        if state.phase != IDLE:
            raise OutOfOrder(f"{state.device_id}: notification in phase {state.phase}")
        if not state.participating:
            return replace(state, phase=NOTIFIED), []
        reg = Message(REGISTRATION, state.device_id, state.parent,
                      {"token": state.token, "cpu_hz": state.cpu_hz})
        return replace(state, phase=NOTIFIED), [reg]

    if msg.variant == PLAN_ASSIGNMENT:
        entry = (tuple(msg.payload["shares"]), msg.payload["wireless_fraction"])
        if not state.participating:
            if state.phase != NOTIFIED:
                raise OutOfOrder(f"{state.device_id}: plan for a declined ED in phase {state.phase}")
            return replace(state, plan_entry=entry), []
        if state.phase == PROCESSING:
            # Mid-flight replan: refresh the entry, keep processing.
            return replace(state, plan_entry=entry), []
        if state.phase != REGISTERED:
            raise OutOfOrder(f"{state.device_id}: plan assignment in phase {state.phase}")
        return replace(state, phase=PLANNED, plan_entry=entry), []

    if msg.variant == START_PROCESSING:
        if not state.participating:
            return state, []
        if state.phase != PLANNED:
            raise OutOfOrder(f"{state.device_id}: start in phase {state.phase}")
        report = Message(RESULT_REPORT, state.device_id, state.parent,
                         {"token": state.token, "status": "processing"})
        return replace(state, phase=PROCESSING), [report]

    raise OutOfOrder(f"{state.device_id}: unexpected {msg.variant} at an ED")


def _ap_step(state: NodeState, msg: Message) -> tuple[NodeState, list[Message]]:
    if msg.variant == TASK_NOTIFICATION:
        if state.phase != IDLE:
            raise OutOfOrder(f"{state.device_id}: notification in phase {state.phase}")
        out = [Message(TASK_NOTIFICATION, state.device_id, c, {"token": state.token})
               for c in state.children]
        new = replace(state, phase=NOTIFIED, awaiting=frozenset(state.children))
        if not new.awaiting:
            out.append(_ap_aggregate(new))
        return new, out

    if msg.variant == REGISTRATION:
        if state.phase != NOTIFIED or msg.sender not in state.awaiting:
            raise OutOfOrder(f"{state.device_id}: unexpected registration from {msg.sender}")
        child_cpu = dict(state.child_cpu_hz)
        child_cpu[msg.sender] = float(msg.payload["cpu_hz"])
        new = replace(state, awaiting=state.awaiting - {msg.sender}, child_cpu_hz=child_cpu)
        if new.awaiting:
            return new, []
        return new, [_ap_aggregate(new)]

    if msg.variant == PLAN_ASSIGNMENT:
        if state.participating and state.phase not in (REGISTERED, PROCESSING):
            raise OutOfOrder(f"{state.device_id}: plan assignment in phase {state.phase}")
        if not state.participating and state.phase != NOTIFIED:
            raise OutOfOrder(f"{state.device_id}: plan for a declined AP in phase {state.phase}")
        shares = msg.payload["shares"]
        fractions = msg.payload["wireless_fractions"]
        out = [Message(PLAN_ASSIGNMENT, state.device_id, c,
                       {"token": state.token, "shares": shares[c],
                        "wireless_fraction": fractions[c]})
               for c in state.children]
        new = replace(state, plan_table=dict(msg.payload))
        if state.participating and state.phase == REGISTERED:
            new = replace(new, phase=PLANNED)
        return new, out

    if msg.variant == START_PROCESSING:
        out = [Message(START_PROCESSING, state.device_id, c, {"token": state.token})
               for c in state.children]
        if not state.participating:
            return state, out
        if state.phase != PLANNED:
            raise OutOfOrder(f"{state.device_id}: start in phase {state.phase}")
        out.append(Message(RESULT_REPORT, state.device_id, state.parent,
                           {"token": state.token, "status": "processing"}))
        return replace(state, phase=PROCESSING), out

    if msg.variant == RESULT_REPORT:
        if msg.sender not in state.children:
            raise OutOfOrder(f"{state.device_id}: report from unknown child {msg.sender}")
        return state, []

    raise OutOfOrder(f"{state.device_id}: unexpected {msg.variant} at an AP")


def _cc_plan_messages(state: NodeState, planning: PlanningContext) -> list[Message]:
    topo = planning.topology
    out = []
    for ap_id in state.expected_aps:
        members = sorted(e.id for e in topo.eds_under(ap_id))
        payload = {
            "token": state.token,
            "shares": {e: planning.plan.shares[e] for e in members},
            "wireless_fractions": {e: planning.plan.wireless_fractions[e] for e in members},
            "wired_allowance_bps": planning.rates.wired_bps[ap_id],
            "t_max": planning.t_max,
        }
        out.append(Message(PLAN_ASSIGNMENT, state.device_id, ap_id, payload))
    out.extend(Message(START_PROCESSING, state.device_id, ap_id, {"token": state.token})
               for ap_id in state.expected_aps)
    return out


def _cc_try_plan(state: NodeState) -> tuple[NodeState, list[Message]]:
    """Plan over whoever registered; record the failure if nobody can
    absorb the work. With no APs at all the CC plans over itself."""
    regs = state.registrations
    participation = {ap: regs[ap]["ap_cpu_hz"] is not None for ap in state.expected_aps}
    for e in state.base_topology.eds:
        participation[e.id] = e.id in regs[state.base_topology.ap_of(e.id)]["children"]
    subgraph = participant_subgraph(state.base_topology, participation)
    try:
        plan, times = tato_multi(subgraph, state.workload)
    except Infeasible as exc:
        return replace(state, failure=str(exc)), []
    planning = PlanningContext(topology=subgraph, workload=state.workload,
                               rates=effective_rates(subgraph, state.workload),
                               plan=plan, t_max=times.t_max)
    new = replace(state, planning=planning)
    return new, _cc_plan_messages(new, planning)


def _cc_step(state: NodeState, msg: Message) -> tuple[NodeState, list[Message]]:
    if msg.variant == REGISTRATION:
        if state.phase != NOTIFIED:
            raise OutOfOrder(f"{state.device_id}: registration in phase {state.phase}")
        if msg.sender not in state.expected_aps or msg.sender in state.registrations:
            raise OutOfOrder(f"{state.device_id}: unexpected registration from {msg.sender}")
        regs = dict(state.registrations)
        regs[msg.sender] = dict(msg.payload)
        new = replace(state, registrations=regs)
        if len(regs) < len(state.expected_aps):
            return new, []
        return _cc_try_plan(new)

    if msg.variant == RESULT_REPORT:
        if msg.sender not in state.expected_aps:
            raise OutOfOrder(f"{state.device_id}: report from unknown AP {msg.sender}")
        return state, []

    if msg.variant == RESOURCE_UPDATE:
        decision = resource_update(state, msg)
        return decision.cc_state, list(decision.messages)

    raise OutOfOrder(f"{state.device_id}: unexpected {msg.variant} at the CC")


def step_node(state: NodeState, msg: Message) -> tuple[NodeState, list[Message]]:
    """Deliver one message to one node.

    Pure: returns the successor state and outbound messages, raising
    :class:`OutOfOrder` (state untouched) when the phase cannot accept
    the message. Phase transitions that happen on *sending* (a device
    counts as Registered once its registration is away, the CC as
    Planned/Processing once assignments and starts are away) are the
    scheduler's job, not this function's.
    """
    if msg.receiver != state.device_id:
        raise OutOfOrder(f"message for {msg.receiver} delivered to {state.device_id}")
    if state.layer == ED:
        return _ed_step(state, msg)
    if state.layer == AP:
        return _ap_step(state, msg)
    return _cc_step(state, msg)


def timeout_node(state: NodeState) -> tuple[NodeState, list[Message]]:
    """Give up waiting for silent children and register what answered.

    Only meaningful for an AP that is still collecting registrations;
    the devices that never answered are treated as declining.
    """
    if state.layer != AP or state.phase != NOTIFIED or not state.awaiting:
        raise OutOfOrder(f"{state.device_id}: nothing to time out")
    new = replace(state, awaiting=frozenset())
    return new, [_ap_aggregate(new)]


@dataclass(frozen=True)
class ScheduleResult:
    events: tuple[Event, ...]
    plan: OffloadPlan | None
    t_max: float | None
    states: Mapping[str, NodeState]
    token: str


def run_schedule(topology: Topology, workload: Workload,
                 participation: Mapping[str, bool] | None = None,
                 rng: random.Random | None = None,
                 token: str = DEFAULT_TOKEN) -> ScheduleResult:
    """Drive one full coordination round to quiescence.

    Messages travel over per-(sender, receiver) FIFO channels. The
    default delivery order is deterministic (channels drain in the
    order they first carried a message); passing ``rng`` randomizes
    which channel delivers next while per-channel FIFO order still
    holds, which is exactly the freedom a real network has. The plan
    that comes out is the same either way.

    Out-of-order deliveries are logged as error events and leave the
    target state unchanged; an unplannable participant set is logged
    as a schedule abort, with ``plan`` staying None.
    """
    states = init_states(topology, workload, participation, token)
    events: list[Event] = []
    channels: dict[tuple[str, str], list] = {}
    channel_order: list[tuple[str, str]] = []

    def post(messages):
        for m in messages:
            key = (m.sender, m.receiver)
            if key not in channels:
                channels[key] = []
                channel_order.append(key)
            channels[key].append(m)

    def log(sender, receiver, variant, kind="message", detail=""):
        events.append(Event(seq=len(events), sender=sender, receiver=receiver,
                            variant=variant, kind=kind, detail=detail))

    def local_advances(device_id, outbound):
        """Sending-side transitions, logged as local events."""
        state = states[device_id]
        sent = [m.variant for m in outbound if m.sender == device_id]
        if state.layer in (ED, AP) and state.participating and state.phase == NOTIFIED \
                and REGISTRATION in sent:
            states[device_id] = replace(state, phase=REGISTERED)
            log(device_id, device_id, REGISTERED, kind="local", detail="registration sent")
        elif state.layer == CC:
            if PLAN_ASSIGNMENT in sent and state.phase == NOTIFIED:
                state = replace(state, phase=PLANNED)
                states[device_id] = state
                log(device_id, device_id, PLANNED, kind="local", detail="plan assignments sent")
            if START_PROCESSING in sent and state.phase == PLANNED:
                states[device_id] = replace(state, phase=PROCESSING)
                log(device_id, device_id, PROCESSING, kind="local", detail="start signals sent")

    cc_id = topology.cc.id
    states[cc_id] = replace(states[cc_id], phase=NOTIFIED)
    log(cc_id, cc_id, NOTIFIED, kind="local", detail="task accepted")
    kickoff = [Message(TASK_NOTIFICATION, cc_id, a.id, {"token": token}) for a in topology.aps]
    post(kickoff)

    if not topology.aps:
        # Degenerate tree: nobody to notify, the CC plans over itself.
        new_state, out = _cc_try_plan(states[cc_id])
        states[cc_id] = new_state
        if new_state.failure:
            log(cc_id, cc_id, SCHEDULE_ABORTED, kind="error", detail=new_state.failure)
        else:
            states[cc_id] = replace(new_state, phase=PROCESSING)
            log(cc_id, cc_id, PLANNED, kind="local", detail="no subtree to assign")
            log(cc_id, cc_id, PROCESSING, kind="local", detail="no subtree to start")
        post(out)

    while True:
        ready = [k for k in channel_order if channels[k]]
        if not ready:
            pending = [a.id for a in topology.aps
                       if states[a.id].phase == NOTIFIED and states[a.id].awaiting]
            if not pending:
                break
            ap_id = sorted(pending)[0]
            silent = sorted(states[ap_id].awaiting)
            new_state, out = timeout_node(states[ap_id])
            states[ap_id] = new_state
            log(ap_id, ap_id, "Timeout", kind="local",
                detail=f"gave up waiting for {', '.join(silent)}")
            post(out)
            local_advances(ap_id, out)
            continue

        key = ready[rng.randrange(len(ready))] if rng is not None else ready[0]
        msg = channels[key].pop(0)
        target = states[msg.receiver]
        try:
            new_state, out = step_node(target, msg)
        except OutOfOrder as exc:
            log(msg.sender, msg.receiver, msg.variant, kind="error", detail=str(exc))
            continue
        states[msg.receiver] = new_state
        log(msg.sender, msg.receiver, msg.variant)
        if new_state.layer == CC and new_state.failure and not target.failure:
            log(msg.receiver, msg.receiver, SCHEDULE_ABORTED, kind="error",
                detail=new_state.failure)
        post(out)
        local_advances(msg.receiver, out)

    cc_state = states[cc_id]
    plan = cc_state.planning.plan if cc_state.planning else None
    t_max = cc_state.planning.t_max if cc_state.planning else None
    return ScheduleResult(events=tuple(events), plan=plan, t_max=t_max,
                          states=dict(states), token=token)


@dataclass(frozen=True)
class ReplanDecision:
    replanned: bool
    reason: str
    plan: OffloadPlan
    t_max: float
    messages: tuple[Message, ...]
    cc_state: NodeState


@dataclass(frozen=True)
class ReplanPolicy:
    """When the CC re-checks its plan against reported resource drift."""

    threshold: float = 0.1
    every_periods: int = 5

    def __post_init__(self):
        if not (0.0 <= self.threshold):
            raise ValueError("threshold must be >= 0")
        if self.every_periods < 1:
            raise ValueError("every_periods must be >= 1")


def _drifted(old: float, new: float, threshold: float) -> bool:
    if old == new:
        return False
    if old <= 0.0:
        return True
    return abs(new - old) / old > threshold


def _retopologize(planning: PlanningContext, theta, wireless, wired) -> Topology:
    """Rebuild the planning topology so its effective rates match the
    updated values, keeping everything else."""
    topo = planning.topology
    kappa = planning.workload.cycles_per_bit

    def with_cpu(dev):
        if dev.id in theta:
            return replace(dev, cpu_hz=theta[dev.id] * kappa)
        return dev

    new_wireless = dict(topo.wireless)
    for ap_id, rate in wireless.items():
        eff = new_wireless[ap_id].spectral_efficiency
        new_wireless[ap_id] = LinkSpec.wireless(rate / eff, eff)
    new_wired = dict(topo.wired)
    for ap_id, rate in wired.items():
        new_wired[ap_id] = LinkSpec.wired(rate)
    return replace(topo, cc=with_cpu(topo.cc),
                   aps=tuple(with_cpu(a) for a in topo.aps),
                   eds=tuple(with_cpu(e) for e in topo.eds),
                   wireless=new_wireless, wired=new_wired)


def resource_update(cc_state: NodeState, update: Message,
                    threshold: float = 0.1) -> ReplanDecision:
    """Compare reported rates against the planning ones and replan on drift.

    ``update`` carries effective rates (``theta``, ``wireless_bps``,
    ``wired_bps``, each a partial mapping by device or AP id) under the
    same task token the schedule ran with. A relative change above
    ``threshold`` on any reported value triggers a fresh plan and fresh
    per-AP plan assignments; anything below leaves the standing plan
    untouched.
    """
    if cc_state.layer != CC or cc_state.phase != PROCESSING or cc_state.planning is None:
        raise OutOfOrder(f"{cc_state.device_id}: resource update outside Processing")
    if update.payload.get("token", cc_state.token) != cc_state.token:
        raise OutOfOrder(f"{cc_state.device_id}: resource update for a different task token")

    planning = cc_state.planning
    theta = {k: float(v) for k, v in update.payload.get("theta", {}).items()}
    wireless = {k: float(v) for k, v in update.payload.get("wireless_bps", {}).items()}
    wired = {k: float(v) for k, v in update.payload.get("wired_bps", {}).items()}
    for dev in theta:
        if dev not in planning.rates.theta:
            raise ValueError(f"resource update names unknown device {dev!r}")
    for ap_id in list(wireless) + list(wired):
        if ap_id not in planning.rates.wired_bps:
            raise ValueError(f"resource update names unknown AP {ap_id!r}")

    drifts = []
    for dev, new in theta.items():
        if _drifted(planning.rates.theta[dev], new, threshold):
            drifts.append(f"theta[{dev}]")
    for ap_id, new in wireless.items():
        if _drifted(planning.rates.wireless_bps[ap_id], new, threshold):
            drifts.append(f"wireless[{ap_id}]")
    for ap_id, new in wired.items():
        if _drifted(planning.rates.wired_bps[ap_id], new, threshold):
            drifts.append(f"wired[{ap_id}]")

    if not drifts:
        return ReplanDecision(replanned=False, reason="drift within threshold",
                              plan=planning.plan, t_max=planning.t_max,
                              messages=(), cc_state=cc_state)

    new_topo = _retopologize(planning, theta, wireless, wired)
    plan, times = tato_multi(new_topo, planning.workload)
    new_planning = PlanningContext(topology=new_topo, workload=planning.workload,
                                   rates=effective_rates(new_topo, planning.workload),
                                   plan=plan, t_max=times.t_max)
    new_state = replace(cc_state, planning=new_planning)
    out = _cc_plan_messages(new_state, new_planning)
    out = [m for m in out if m.variant == PLAN_ASSIGNMENT]
    return ReplanDecision(replanned=True, reason="drift on " + ", ".join(drifts),
                          plan=plan, t_max=times.t_max, messages=tuple(out),
                          cc_state=new_state)


def maybe_replan(cc_state: NodeState, update: Message, period_index: int,
                 policy: ReplanPolicy = ReplanPolicy()) -> ReplanDecision:
    """Rate-limited wrapper: only re-estimate on the policy's cadence."""
    if period_index % policy.every_periods != 0:
        planning = cc_state.planning
        if planning is None:
            raise OutOfOrder(f"{cc_state.device_id}: no standing plan to keep")
        return ReplanDecision(replanned=False, reason="off re-estimation cadence",
                              plan=planning.plan, t_max=planning.t_max,
                              messages=(), cc_state=cc_state)
    return resource_update(cc_state, update, policy.threshold)


def export_event_log(events, fp) -> int:
    """Write events as line-delimited JSON (seq, sender, receiver, variant).

    ``fp`` is a path or an open text file. Returns the line count.
    """
    def dump(handle):
        n = 0
        for ev in events:
            handle.write(json.dumps({"seq": ev.seq, "sender": ev.sender,
                                     "receiver": ev.receiver, "variant": ev.variant}))
            handle.write("\n")
            n += 1
        return n

    if hasattr(fp, "write"):
        return dump(fp)
    with open(fp, "w", encoding="utf-8") as handle:
        return dump(handle)
