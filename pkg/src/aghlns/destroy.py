"""Heuristic destroy operators working at vehicle granularity (plus a variable-level baseline)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instance import Instance
from .lns import SearchState
from .milp import MilpModel
from .solution import Solution, route_cost, tables

VehicleKey = tuple[int, int]


def vehicles_for_degree(instance_or_total: Instance | int, degree: float) -> int:
    """Number of vehicles whose columns make up (at least) ``degree`` of all route binaries."""
    total = instance_or_total if isinstance(instance_or_total, int) else instance_or_total.total_vehicles
    if not 0 <= degree <= 1:
        raise ValueError("degree must lie in [0, 1]")
    return min(total, max(0, math.ceil(degree * total - 1e-9)))


def vehicle_columns(model: MilpModel, keys) -> frozenset[int]:
    cols: list[int] = []
    for fid, vid in keys:
        cols.extend(model.vehicle_columns(fid, vid).tolist())
    return frozenset(cols)


def vehicles_of(model: MilpModel, cols) -> list[VehicleKey]:
    """Vehicles all of whose route binaries are in ``cols`` (declaration order)."""
    counts = np.bincount(np.fromiter((c // model.n_arcs for c in cols if c < model.num_binaries), dtype=np.int64),
                         minlength=len(model.vehicles))
    return [model.vehicles[h] for h in np.flatnonzero(counts == model.n_arcs)]


def random_destroy(model: MilpModel, degree: float, rng: np.random.Generator) -> frozenset[int]:
    """Uniform sample of round(degree * |X|) route binaries, at least one."""
    total = model.num_binaries
    size = min(total, max(1, math.floor(degree * total + 0.5)))
    return frozenset(rng.choice(total, size=size, replace=False).tolist())


def pick_random_vehicles(instance: Instance, count: int, rng: np.random.Generator,
                         pool: list[VehicleKey] | None = None) -> list[VehicleKey]:
    keys = instance.vehicle_keys() if pool is None else list(pool)
    count = min(count, len(keys))
    idx = rng.choice(len(keys), size=count, replace=False)
    return [keys[i] for i in sorted(idx.tolist())]


def vehicle_random(instance: Instance, model: MilpModel, degree: float, rng: np.random.Generator) -> frozenset[int]:
    return vehicle_columns(model, pick_random_vehicles(instance, vehicles_for_degree(instance, degree), rng))


def worst_vehicles(instance: Instance, solution: Solution, count: int) -> list[VehicleKey]:
    """Longest routes first, ties by (fleet_id, vehicle_id); unused vehicles pad in id order."""
    tab = tables(instance)
    used = [((r.fleet_id, r.vehicle_id), route_cost(tab, r.visits)) for r in solution.routes if r.visits]
    used.sort(key=lambda kv: (-kv[1], kv[0]))
    picked = [k for k, _ in used[:count]]
    if len(picked) < count:
        taken = set(picked)
        picked += [k for k in instance.vehicle_keys() if k not in taken][: count - len(picked)]
    return picked


def vehicle_worst(instance: Instance, model: MilpModel, solution: Solution, degree: float) -> frozenset[int]:
    return vehicle_columns(model, worst_vehicles(instance, solution, vehicles_for_degree(instance, degree)))


def worst_random_vehicles(instance: Instance, solution: Solution, degree: float,
                          rng: np.random.Generator) -> list[VehicleKey]:
    half = vehicles_for_degree(instance, degree / 2)
    worst = worst_vehicles(instance, solution, half)
    rand = pick_random_vehicles(instance, half, rng)
    chosen = list(dict.fromkeys(worst + rand))
    target = min(2 * half, instance.total_vehicles)
    if len(chosen) < target:
        rest = [k for k in instance.vehicle_keys() if k not in set(chosen)]
        chosen += pick_random_vehicles(instance, target - len(chosen), rng, pool=rest)
    return chosen


def vehicle_worst_random(instance: Instance, model: MilpModel, solution: Solution, degree: float,
                         rng: np.random.Generator) -> frozenset[int]:
    return vehicle_columns(model, worst_random_vehicles(instance, solution, degree, rng))


# -- operator objects for the LNS loop ---------------------------------------------------

class RandomDestroy:
    name = "random"

    def select(self, state: SearchState) -> frozenset[int]:
        return random_destroy(state.model, state.degree, state.rng)


class VehicleRandom:
    name = "vehicle_random"

    def select(self, state: SearchState) -> frozenset[int]:
        return vehicle_random(state.instance, state.model, state.degree, state.rng)


class VehicleWorst:
    name = "vehicle_worst"

    def select(self, state: SearchState) -> frozenset[int]:
        return vehicle_worst(state.instance, state.model, state.current, state.degree)


class VehicleWorstRandom:
    name = "vehicle_worst_random"

    def select(self, state: SearchState) -> frozenset[int]:
        return vehicle_worst_random(state.instance, state.model, state.current, state.degree, state.rng)


@dataclass
class VehicleRandomAdaptive:
    """Vehicle-random with the degree redrawn uniformly from ``degree_range`` each call."""

    degree_range: tuple[float, float] = (0.2, 0.7)
    name = "vehicle_random_sampleA"

    def select(self, state: SearchState) -> frozenset[int]:
        degree = float(state.rng.uniform(*self.degree_range))
        return vehicle_random(state.instance, state.model, degree, state.rng)


class VehicleRandomDisjoint:
    """Vehicle-random avoiding the vehicles freed in the previous iteration."""

    name = "vehicle_random_sampleD"

    def select(self, state: SearchState) -> frozenset[int]:
        count = vehicles_for_degree(state.instance, state.degree)
        prev = set(vehicles_of(state.model, state.previous))
        pool = [k for k in state.instance.vehicle_keys() if k not in prev] or state.instance.vehicle_keys()
        return vehicle_columns(state.model, pick_random_vehicles(state.instance, count, state.rng, pool=pool))


HEURISTICS = {
    "random": RandomDestroy,
    "vehicle_random": VehicleRandom,
    "vehicle_worst": VehicleWorst,
    "vehicle_worst_random": VehicleWorstRandom,
    "vehicle_random_sampleA": VehicleRandomAdaptive,
    "vehicle_random_sampleD": VehicleRandomDisjoint,
}
