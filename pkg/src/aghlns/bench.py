"""Benchmark harness: instance presets, metrics, and multi-method experiment runs."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .destroy import HEURISTICS
from .instance import GeneratorConfig, Instance, from_dict, generate, to_dict
from .lns import LnsConfig, RepairFailure, run_lns
from .milp import build_model
from .repair import ExactOracleRepair, ExternalSolverRepair, MatheuristicRepair
from .solution import ConstructionFailed, Solution, check_feasible, initial_solution

log = logging.getLogger(__name__)

PRESETS: dict[str, GeneratorConfig] = {
    "AGH-mini": GeneratorConfig(flights=5, ops=3),
    "AGH-small": GeneratorConfig(flights=10, ops=3),
    "AGH-20-lite": GeneratorConfig(flights=20, ops=5),
}


class HarnessError(RuntimeError):
    pass


# -- instances -------------------------------------------------------------------------

def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def generate_solvable(config: GeneratorConfig, seed: int, max_attempts: int = 50) -> tuple[Instance, Solution]:
    """First instance (seed, then derived seeds) on which the constructive heuristic succeeds."""
    last = None
    for attempt in range(max_attempts):
        s = seed if attempt == 0 else derived_seed(seed, attempt)
        inst = generate(config, s)
        try:
            return inst, initial_solution(inst)
        except ConstructionFailed as exc:
            last = exc
    raise ConstructionFailed(f"no constructible instance in {max_attempts} attempts from seed {seed}: {last}")


def instance_set(config: GeneratorConfig | str, count: int, seed: int) -> list[tuple[Instance, Solution]]:
    cfg = PRESETS[config] if isinstance(config, str) else config
    return [generate_solvable(cfg, derived_seed(seed, j)) for j in range(count)]


# -- metrics ----------------------------------------------------------------------------

def primal_gap(obj: float, best: float) -> float:
    """|obj - best| / max(|obj|, |best|), in percent; 0 when both are 0."""
    denom = max(abs(obj), abs(best))
    if denom == 0:
        return 0.0
    return abs(obj - best) / denom * 100.0


def vehicle_utilization(instance: Instance, solution: Solution) -> dict[int, int]:
    used = {fid: 0 for fid in instance.fleet_ids}
    for r in solution.routes:
        if r.visits:
            used[r.fleet_id] += 1
    return used


# -- methods ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    name: str
    destroy: str = "vehicle_random"  # heuristic name or "policy"
    repair: str = "matheuristic"  # matheuristic | exact_oracle | external
    degree: float = 0.4
    iterations: int = 30
    time_limit: float = math.inf
    repair_time_limit: float = 10.0
    acceptance_slack: float = 0.01
    policy: str | None = None
    mode: str = "sample"
    solver_cmd: str | None = None
    gap_tolerance: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown method keys {sorted(extra)}")
        return cls(**d)


class Unavailable(RuntimeError):
    pass


def make_operators(spec: MethodSpec):
    if spec.destroy == "policy":
        from .deploy import PolicyDestroy
        from .nn import PolicyChain
        if not spec.policy:
            raise ValueError(f"method {spec.name}: policy path missing")
        destroy = PolicyDestroy(PolicyChain.load(spec.policy), spec.mode)
    elif spec.destroy in HEURISTICS:
        destroy = HEURISTICS[spec.destroy]()
    else:
        raise ValueError(f"unknown destroy operator {spec.destroy!r}")
    if spec.repair == "matheuristic":
        repair = MatheuristicRepair()
    elif spec.repair == "exact_oracle":
        repair = ExactOracleRepair()
    elif spec.repair == "external":
        import os
        from .repair import SOLVER_ENV
        if not (spec.solver_cmd or os.environ.get(SOLVER_ENV)):
            raise Unavailable("no external solver configured")
        repair = ExternalSolverRepair(spec.solver_cmd, spec.gap_tolerance)
    else:
        raise ValueError(f"unknown repair operator {spec.repair!r}")
    return destroy, repair


def run_method(instance: Instance, initial: Solution, spec: MethodSpec, seed: int, model=None):
    destroy, repair = make_operators(spec)
    cfg = LnsConfig(iterations=spec.iterations, time_limit=spec.time_limit, destroy_degree=spec.degree,
                    acceptance_slack=spec.acceptance_slack, repair_time_limit=spec.repair_time_limit, seed=seed)
    return run_lns(instance, initial, destroy, repair, cfg, model=model)


def _job(args):
    inst_dict, init_routes, spec_dict, seed, trace_path = args
    inst = from_dict(inst_dict)
    from .solution import make_solution
    init = make_solution(inst, {tuple(k): v for k, v in init_routes})
    spec = MethodSpec.from_dict(spec_dict)
    t0 = time.perf_counter()
    try:
        best, trace = run_method(inst, init, spec, seed)
    except Unavailable as exc:
        return {"status": "unavailable", "detail": str(exc)}
    except (RepairFailure, ValueError, RuntimeError, OSError) as exc:
        return {"status": "error", "detail": f"{type(exc).__name__}: {exc}"}
    runtime = time.perf_counter() - t0
    problems = check_feasible(inst, best)
    if problems:
        raise HarnessError(f"{spec.name}: reported solution infeasible: {problems[0]}")
    trace.to_csv(trace_path)
    return {"status": "ok", "best": best.objective, "runtime": runtime, "iterations": len(trace.records),
            "utilization": vehicle_utilization(inst, best)}


SUMMARY_HEADER = ["Method", "Mipgap", "Limit", "D_d", "Obj.", "Gap", "Time"]


def run_experiment(config: dict | str | Path, out_dir: str | Path) -> Path:
    """Run every method on every instance; write per-run CSV, traces and a summary table."""
    if not isinstance(config, dict):
        config = json.loads(Path(config).read_text())
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    seed = int(config.get("seed", 0))
    if "instance_files" in config:
        from .instance import load
        insts = []
        for p in config["instance_files"]:
            inst = load(p)
            insts.append((inst, initial_solution(inst)))
    else:
        preset = config.get("preset", "AGH-small")
        cfg = PRESETS[preset]
        if "generator" in config:
            cfg = replace(cfg, **config["generator"])
        insts = instance_set(cfg, int(config.get("instances", 3)), seed)
    specs = [MethodSpec.from_dict(m) for m in config["methods"]]
    jobs, keys = [], []
    for i, (inst, init) in enumerate(insts):
        routes = [(list(k), list(v)) for k, v in init.by_vehicle.items()]
        for m, spec in enumerate(specs):
            trace_path = str(out / "traces" / f"inst{i:03d}__{spec.name}.csv")
            jobs.append((to_dict(inst), routes, spec.__dict__, derived_seed(seed, i, m), trace_path))
            keys.append((i, m))
    workers = int(config.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]

    rows = []
    for i, (inst, init) in enumerate(insts):
        res = {m: r for (ii, m), r in zip(keys, results) if ii == i}
        ok = [r["best"] for r in res.values() if r["status"] == "ok"]
        best = min(ok) if ok else math.nan
        for m, spec in enumerate(specs):
            r = res[m]
            row = {"instance": i, "seed": inst.rng_seed, "method": spec.name, "status": r["status"],
                   "initial": init.objective, "best_obj": r.get("best", ""), "gap": "",
                   "runtime": r.get("runtime", ""), "iterations": r.get("iterations", ""),
                   "utilization": json.dumps(r.get("utilization", {})),
                   "trace": f"traces/inst{i:03d}__{spec.name}.csv" if r["status"] == "ok" else "",
                   "detail": r.get("detail", "")}
            if r["status"] == "ok":
                row["gap"] = primal_gap(r["best"], best)
            rows.append(row)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["instance"])
        w.writeheader()
        w.writerows(rows)
    summary = []
    for spec in specs:
        mine = [r for r in rows if r["method"] == spec.name and r["status"] == "ok"]
        if mine:
            obj = float(np.mean([r["best_obj"] for r in mine]))
            gap = float(np.mean([r["gap"] for r in mine]))
            tim = float(np.mean([r["runtime"] for r in mine]))
            # partial coverage would bias the means; say so next to them
            cover = "" if len(mine) == len(insts) else f" ({len(mine)}/{len(insts)} ok)"
            summary.append([spec.name, spec.gap_tolerance if spec.repair == "external" else "-",
                            f"{spec.iterations} it / {spec.repair_time_limit:g}s", spec.degree,
                            f"{obj:.2f}{cover}", f"{gap:.2f}%", f"{tim:.2f}"])
        else:
            summary.append([spec.name, "-", "-", spec.degree, "unavailable", "-", "-"])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        w.writerows(summary)
    return out


def format_table(path: str | Path) -> str:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows)
