"""Command-line front end: run experiments from a JSON config.

Subcommands:

- ``edgeflow run CONFIG.json``: execute the experiment the config
  describes (an image-size sweep or a burst-recovery run) and write
  ``sweep.csv``/``burst.csv`` plus ``manifest.json`` next to it.
- ``edgeflow preset paper --out DIR``: write the two bundled reference
  configs (a desk-scale four-ED, two-AP deployment).
- ``edgeflow verify``: cross-check the closed-form planner against the
  bisection and grid oracles on random instances.

Exit codes: 0 success, 1 invalid config or arguments, 2 internal
failure. Output files are deterministic byte for byte for a given
config, including under ``--workers`` parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .model import Topology, Workload, build_topology, stage_times
from .oracle import grid_search, optimal_tmax_bisect, random_instance
from .sim import SimConfig, metrics, simulate
from .tato import BASELINES, baseline_plan, tato_multi

SCHEMES = ("tato",) + BASELINES

BACKLOG_UNITS = ("raw-equivalent bits: compressed parcels are counted at the "
                 "pre-compression size of the data they encode")


class ConfigError(Exception):
    """A config file problem, reported with the offending field."""


def _require(section, key, kind, where):
    if key not in section:
        raise ConfigError(f"{where}.{key} is required")
    value = section[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind in (list, dict, str) and isinstance(value, kind):
        return value
    raise ConfigError(f"{where}.{key} must be a {kind.__name__}, got {value!r}")


@dataclass(frozen=True)
class RunSpec:
    """A validated config: the objects an experiment runs on."""

    topology: Topology
    workload: Workload
    sim: SimConfig
    experiment: dict


def load_config(doc: dict) -> RunSpec:
    """Validate a parsed config document into a :class:`RunSpec`.

    Raises:
        ConfigError: naming the field that is missing or malformed.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    for section in ("topology", "workload", "experiment"):
        if section not in doc:
            raise ConfigError(f"{section} section is required")

    mapping = doc.get("mapping", {})
    if not isinstance(mapping, dict):
        raise ConfigError("mapping must be an object")
    kappa = float(mapping.get("cycles_per_bit", 1000.0))
    eff = float(mapping.get("spectral_efficiency", 2.0))

    try:
        topology = build_topology(doc["topology"], default_spectral_efficiency=eff)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    w = doc["workload"]
    if not isinstance(w, dict):
        raise ConfigError("workload must be an object")
    bursts = w.get("bursts", [])
    if not isinstance(bursts, list):
        raise ConfigError("workload.bursts must be a list of [period, multiplier] pairs")
    overrides = w.get("volume_overrides", {})
    if not isinstance(overrides, dict):
        raise ConfigError("workload.volume_overrides must be an object")
    unknown = sorted(set(overrides) - {e.id for e in topology.eds})
    if unknown:
        raise ConfigError(f"workload.volume_overrides names unknown EDs: {', '.join(unknown)}")
    try:
        workload = Workload(
            packet_bits=_require(w, "packet_bits", float, "workload"),
            period_s=_require(w, "period_s", float, "workload"),
            compression_ratio=_require(w, "compression_ratio", float, "workload"),
            rate_pps=float(w.get("rate_pps", 1.0)),
            bursts=tuple((int(p), float(m)) for p, m in bursts),
            cycles_per_bit=kappa,
            volume_overrides={str(k): float(v) for k, v in overrides.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"workload: {exc}") from exc

    s = doc.get("sim", {})
    if not isinstance(s, dict):
        raise ConfigError("sim must be an object")
    try:
        sim_cfg = SimConfig(
            ticks_per_period=int(s.get("ticks_per_period", 100)),
            periods=int(s.get("periods", 30)),
            warmup_periods=int(s.get("warmup_periods", 0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sim: {exc}") from exc

    exp = doc["experiment"]
    if not isinstance(exp, dict):
        raise ConfigError("experiment must be an object")
    name = _require(exp, "name", str, "experiment")
    if name not in ("sweep", "burst"):
        raise ConfigError(f"experiment.name must be 'sweep' or 'burst', got {name!r}")
    schemes = _require(exp, "schemes", list, "experiment")
    bad = sorted(set(schemes) - set(SCHEMES))
    if bad:
        raise ConfigError(
            f"experiment.schemes contains unknown schemes: {', '.join(map(str, bad))} "
            f"(valid: {', '.join(SCHEMES)})")
    if not schemes:
        raise ConfigError("experiment.schemes must not be empty")
    if name == "sweep":
        sizes = _require(exp, "sizes", list, "experiment")
        if not all(isinstance(x, (int, float)) and x > 0 for x in sizes):
            raise ConfigError("experiment.sizes must be a list of positive numbers")
        if workload.volume_overrides:
            raise ConfigError("experiment 'sweep' varies packet_bits uniformly; "
                              "workload.volume_overrides is not supported with it")
    else:
        raw_bursts = exp.get("bursts", list(workload.bursts))
        try:
            parsed = tuple((int(p), float(m)) for p, m in raw_bursts)
            workload = replace(workload, bursts=parsed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"experiment.bursts: {exc}") from exc
        late = [p for p, _ in workload.bursts if p >= sim_cfg.periods]
        if late:
            raise ConfigError(f"experiment.bursts period {late[0]} is outside the "
                              f"simulated {sim_cfg.periods} periods")

    return RunSpec(topology=topology, workload=workload, sim=sim_cfg, experiment=dict(exp))


def plan_for(scheme: str, topology: Topology, workload: Workload):
    if scheme == "tato":
        return tato_multi(topology, workload)[0]
    return baseline_plan(scheme, topology, workload)


def _sweep_cell(args):
    topology, workload, sim_cfg, scheme, size = args
    wl = replace(workload, packet_bits=float(size))
    plan = plan_for(scheme, topology, wl)
    m = metrics(simulate(topology, wl, plan, sim_cfg))
    return (float(size), scheme, m.avg_finish_s, m.stable)


def sweep_image_size(topology: Topology, workload: Workload, sizes, schemes,
                     sim_cfg: SimConfig, workers: int = 1):
    """Average finish time and stability for every (size, scheme) cell."""
    cells = [(topology, workload, sim_cfg, scheme, size)
             for size in sizes for scheme in schemes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def _burst_cell(args):
    topology, workload, sim_cfg, scheme = args
    plan = plan_for(scheme, topology, workload)
    trace = simulate(topology, workload, plan, sim_cfg)
    m = metrics(trace)
    return scheme, trace, m


def burst_experiment(topology: Topology, workload: Workload, schemes,
                     sim_cfg: SimConfig, workers: int = 1):
    """Per-tick backlog under bursts, plus recovery times per scheme.

    Refuses to run when any scheme is already overloaded at the nominal
    volume: burst recovery is only meaningful from a stable baseline.
    """
    for scheme in schemes:
        plan = plan_for(scheme, topology, workload)
        ratio = stage_times(topology, workload, plan).t_max / workload.period_s
        if ratio >= 1.0:
            raise ConfigError(
                f"burst experiment needs a stable nominal point for every scheme; "
                f"{scheme} is overloaded (T_max/period = {ratio:.3f})")

    cells = [(topology, workload, sim_cfg, scheme) for scheme in schemes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_burst_cell, cells))
    else:
        results = [_burst_cell(c) for c in cells]

    rows = []
    recovery = {}
    for scheme, trace, m in results:
        tpp = trace.ticks_per_period
        for tick, backlog in enumerate(trace.total_backlog):
            rows.append(((tick + 1) / tpp, scheme, backlog))
        recovery[scheme] = list(m.recovery_s)
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows, recovery


def _write_csv(path: Path, header, rows, formats):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for fmt, v in zip(formats, row)])


def _fnum(value) -> str:
    return repr(float(value))


def _fbool(value) -> str:
    return "true" if value else "false"


def run_experiment(config_path, out_dir=None, seed: int = 0, ticks: int | None = None,
                   workers: int = 1) -> list[Path]:
    """Execute the experiment in ``config_path``; return written files."""
    config_path = Path(config_path)
    try:
        doc = json.loads(config_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    spec = load_config(doc)
    if ticks is not None:
        try:
            spec = replace(spec, sim=replace(spec.sim, ticks_per_period=ticks))
        except ValueError as exc:
            raise ConfigError(f"--ticks: {exc}") from exc
    if workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {workers}")

    out = Path(out_dir) if out_dir is not None else config_path.parent
    out.mkdir(parents=True, exist_ok=True)
    name = spec.experiment["name"]
    manifest = {
        "experiment": name,
        "config": doc,
        "version": __version__,
        "seed": seed,
        "workers": workers,
        "ticks_per_period": spec.sim.ticks_per_period,
        "backlog_units": BACKLOG_UNITS,
        "outputs": [],
    }

    written: list[Path] = []
    if name == "sweep":
        rows = sweep_image_size(spec.topology, spec.workload, spec.experiment["sizes"],
                                spec.experiment["schemes"], spec.sim, workers)
        csv_path = out / "sweep.csv"
        _write_csv(csv_path, ("packet_bits", "scheme", "avg_finish_time_s", "stable"),
                   rows, (_fnum, str, _fnum, _fbool))
        written.append(csv_path)
        manifest["outputs"].append(csv_path.name)
    else:
        rows, recovery = burst_experiment(spec.topology, spec.workload,
                                          spec.experiment["schemes"], spec.sim, workers)
        csv_path = out / "burst.csv"
        _write_csv(csv_path, ("period", "scheme", "total_backlog_bits"),
                   rows, (_fnum, str, _fnum))
        written.append(csv_path)
        manifest["outputs"].append(csv_path.name)
        manifest["recovery_s"] = recovery

    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    written.append(manifest_path)
    return written


def preset_paper() -> dict[str, dict]:
    """The bundled desk-scale reference configs.

    Four 1 GHz EDs split across two APs, 3.6 GHz APs, a 36 GHz CC,
    10 Mb/s shared wireless per AP and 8 Mb/s backhauls, one-second
    periods, tenfold compression. The sweep crosses each scheme's
    stability knee (1 Mb pure edge, 1.8 Mb cloudlet, 4 Mb pure cloud,
    5.9 Mb for the planner); the burst run doubles one period's volume
    mid-run and triples a later one.
    """
    topology = {
        "cc": {"id": "cc", "cpu_hz": 3.6e10},
        "aps": [
            {"id": "ap0", "cpu_hz": 3.6e9,
             "wireless": {"bandwidth_hz": 5e6, "spectral_efficiency": 2.0},
             "wired": {"capacity_bps": 8e6}},
            {"id": "ap1", "cpu_hz": 3.6e9,
             "wireless": {"bandwidth_hz": 5e6, "spectral_efficiency": 2.0},
             "wired": {"capacity_bps": 8e6}},
        ],
        "eds": [
            {"id": "ed0", "cpu_hz": 1e9, "ap": "ap0"},
            {"id": "ed1", "cpu_hz": 1e9, "ap": "ap0"},
            {"id": "ed2", "cpu_hz": 1e9, "ap": "ap1"},
            {"id": "ed3", "cpu_hz": 1e9, "ap": "ap1"},
        ],
    }
    base = {
        "mapping": {"cycles_per_bit": 1000.0, "spectral_efficiency": 2.0},
        "topology": topology,
        "workload": {"packet_bits": 8e5, "period_s": 1.0, "rate_pps": 1.0,
                     "compression_ratio": 0.1},
    }
    sweep = dict(base)
    sweep["sim"] = {"ticks_per_period": 100, "periods": 30, "warmup_periods": 5}
    sweep["experiment"] = {
        "name": "sweep",
        "sizes": [4e5, 8e5, 1.2e6, 1.6e6, 2.4e6, 3.2e6, 4.8e6, 6.4e6],
        "schemes": list(SCHEMES),
    }
    burst = dict(base)
    burst["sim"] = {"ticks_per_period": 100, "periods": 45, "warmup_periods": 5}
    burst["experiment"] = {
        "name": "burst",
        "bursts": [[12, 2.0], [28, 3.0]],
        "schemes": list(SCHEMES),
    }
    return {"paper_sweep.json": sweep, "paper_burst.json": burst}


def write_preset(out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for filename, doc in preset_paper().items():
        path = out / filename
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    return written


def _check(out, label, ok, detail=""):
    out(f"{label}: {'PASS' if ok else 'FAIL'}{(' (' + detail + ')') if detail else ''}")
    return ok


def verify_suite(seed: int = 0, out=print) -> bool:
    """Cross-check the planner against the oracles on random instances."""
    rng = random.Random(seed)
    ok = True

    worst = 0.0
    for _ in range(150):
        topo, wl = random_instance(rng)
        t_plan = tato_multi(topo, wl)[1].t_max
        t_oracle = optimal_tmax_bisect(topo, wl, rel_tol=1e-9)[0]
        worst = max(worst, abs(t_plan - t_oracle) / max(t_oracle, 1e-30))
    ok &= _check(out, "planner vs bisection oracle, 150 instances",
                 worst <= 1e-6, f"worst rel diff {worst:.2e}")

    violations = 0
    for _ in range(200):
        topo, wl = random_instance(rng)
        t_plan = tato_multi(topo, wl)[1].t_max
        for kind in BASELINES:
            t_base = stage_times(topo, wl, baseline_plan(kind, topo, wl)).t_max
            if t_plan > t_base * (1.0 + 1e-9):
                violations += 1
    ok &= _check(out, "planner dominates fixed baselines, 200 instances",
                 violations == 0, f"{violations} violations")

    gaps = []
    for _ in range(15):
        topo, wl = random_instance(rng, n_eds=1, n_aps=1)
        t_grid = grid_search(topo, wl, resolution=0.02)[0]
        t_oracle = optimal_tmax_bisect(topo, wl)[0]
        gaps.append((t_grid - t_oracle) / max(t_oracle, 1e-30))
    ok &= _check(out, "grid upper-bounds the optimum, 15 instances",
                 all(g >= -1e-9 for g in gaps), f"min rel gap {min(gaps):.2e}")

    return bool(ok)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgeflow",
        description="Plan and simulate three-layer task offloading experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the experiment described by a JSON config")
    run_p.add_argument("config", help="path to the config file")
    run_p.add_argument("--out", help="output directory (default: next to the config)")
    run_p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    run_p.add_argument("--ticks", type=int, help="override sim.ticks_per_period")
    run_p.add_argument("--workers", type=int, default=1, help="parallel sim processes")

    preset_p = sub.add_parser("preset", help="write a bundled reference config")
    preset_p.add_argument("name", choices=["paper"])
    preset_p.add_argument("--out", default=".", help="directory to write configs into")

    verify_p = sub.add_parser("verify", help="cross-check the planner against the oracles")
    verify_p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            written = run_experiment(args.config, out_dir=args.out, seed=args.seed,
                                     ticks=args.ticks, workers=args.workers)
            for path in written:
                print(path)
            return 0
        if args.command == "preset":
            for path in write_preset(args.out):
                print(path)
            return 0
        return 0 if verify_suite(seed=args.seed) else 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:                    # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
