"""edgeflow: a desk-scale lab for three-layer task offloading.

The package splits into a shared vocabulary (``model``), a closed-form
planner with fixed baselines (``tato``), slow independent solvers that
check it (``oracle``), a discrete-time fluid simulator (``sim``), the
coordination protocol that distributes plans (``protocol``), and a CLI
(``cli``).
"""

__version__ = "0.1.0"

from .model import (
    DeviceSpec,
    Infeasible,
    LinkSpec,
    OffloadPlan,
    RateTable,
    StageTimes,
    Topology,
    Workload,
    bottleneck,
    build_topology,
    effective_rates,
    stage_times,
)
from .oracle import feasible_at, grid_search, optimal_tmax_bisect, random_instance
from .protocol import (
    Event,
    Message,
    NodeState,
    run_schedule,
    step_node,
)
from .sim import SimConfig, SimMetrics, SimTrace, metrics, simulate
from .tato import (
    allocate_wireless,
    balance_ed,
    baseline_plan,
    overload_equalize,
    tato_multi,
    tato_single,
)

__all__ = [
    "DeviceSpec", "Infeasible", "LinkSpec", "OffloadPlan", "RateTable",
    "StageTimes", "Topology", "Workload", "bottleneck", "build_topology",
    "effective_rates", "stage_times",
    "allocate_wireless", "balance_ed", "baseline_plan", "overload_equalize",
    "tato_multi", "tato_single",
    "feasible_at", "grid_search", "optimal_tmax_bisect", "random_instance",
    "SimConfig", "SimMetrics", "SimTrace", "metrics", "simulate",
    "Event", "Message", "NodeState", "run_schedule", "step_node",
    "__version__",
]
