"""LNS driver: destroy, repair, accept, track the incumbent."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .instance import Instance
from .milp import MilpModel, build_model
from .solution import Solution


class RepairFailure(Exception):
    """A repair operator could not produce a solution; ``reason`` is a short tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass
class SearchState:
    """Everything a destroy operator may look at in one iteration."""

    instance: Instance
    model: MilpModel
    current: Solution
    incumbent: Solution
    degree: float
    rng: np.random.Generator
    iteration: int
    previous: frozenset = frozenset()  # columns freed in the previous iteration


class DestroyOperator(Protocol):
    def select(self, state: SearchState) -> frozenset[int]: ...


class RepairOperator(Protocol):
    def repair(self, instance: Instance, model: MilpModel, current: Solution,
               free_vars: frozenset[int], time_limit: float) -> Solution: ...


@dataclass
class LnsConfig:
    iterations: int = 50
    time_limit: float = math.inf  # whole run, seconds; checked between iterations
    destroy_degree: float = 0.4
    acceptance_slack: float = 0.01
    repair_time_limit: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.destroy_degree < 1:
            raise ValueError("destroy_degree must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not self.time_limit > 0 or not self.repair_time_limit >= 0:
            raise ValueError("budgets must be positive")
        if self.acceptance_slack < 0:
            raise ValueError("acceptance_slack must be non-negative")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    elapsed: float
    destroyed: int
    objective: float  # nan when the repair failed
    accepted: bool
    incumbent: float
    freed: frozenset = field(default=frozenset(), repr=False, compare=False)


@dataclass
class LnsTrace:
    initial: float
    records: list[IterationRecord] = field(default_factory=list)

    def incumbents(self) -> list[float]:
        return [r.incumbent for r in self.records]

    def rows(self, timing: bool = True) -> list[list]:
        out = []
        for r in self.records:
            row = [r.iteration]
            if timing:
                row.append(f"{r.elapsed:.6f}")
            row += [repr(r.objective), repr(r.incumbent), int(r.accepted)]
            out.append(row)
        return out

    def to_csv(self, path: str | Path, timing: bool = True) -> None:
        header = ["iteration"] + (["elapsed_s"] if timing else []) + ["obj", "incumbent", "accepted"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(self.rows(timing))


def accept(candidate_obj: float, incumbent_obj: float, slack: float) -> bool:
    return candidate_obj <= (1.0 + slack) * incumbent_obj


def run_lns(instance: Instance, initial: Solution, destroy: DestroyOperator, repair: RepairOperator,
            config: LnsConfig, model: MilpModel | None = None,
            callback: Callable[[SearchState, IterationRecord], None] | None = None) -> tuple[Solution, LnsTrace]:
    """Iterate destroy/repair from ``initial``; return the best solution seen and the trace.

    Candidates are accepted as the new current solution when their objective is
    within ``acceptance_slack`` of the incumbent.  A failed repair keeps the
    current solution and is logged as rejected.
    """
    config.validate()
    model = build_model(instance) if model is None else model
    rng = np.random.default_rng(config.seed)
    current = best = initial
    trace = LnsTrace(initial.objective)
    previous: frozenset = frozenset()
    t0 = time.perf_counter()
    for it in range(1, config.iterations + 1):
        if time.perf_counter() - t0 > config.time_limit:
            break
        state = SearchState(instance, model, current, best, config.destroy_degree, rng, it, previous)
        freed = destroy.select(state)
        try:
            cand = repair.repair(instance, model, current, freed, config.repair_time_limit)
            obj = cand.objective
        except RepairFailure:
            cand, obj = None, math.nan
        accepted = cand is not None and accept(obj, best.objective, config.acceptance_slack)
        if accepted:
            current = cand
            if cand.objective < best.objective:
                best = cand
        rec = IterationRecord(it, time.perf_counter() - t0, len(freed), obj, accepted, best.objective, freed)
        trace.records.append(rec)
        if callback is not None:
            callback(state, rec)
        previous = freed
    return best, trace
