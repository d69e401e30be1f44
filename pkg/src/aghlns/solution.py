"""Route-level solutions: cost, earliest-start scheduling, feasibility and construction."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

from .instance import Instance

TIME_EPS = 1e-6

VehicleKey = tuple[int, int]  # (fleet_id, vehicle_id)


class Infeasible(Exception):
    """No feasible start times exist for the given routes."""


class WindowExceeded(Infeasible):
    def __init__(self, flight: int, fleet_id: int, start: float, latest: float):
        super().__init__(f"flight {flight} fleet {fleet_id}: earliest start {start:g} > {latest:g}")
        self.flight, self.fleet_id = flight, fleet_id


class PrecedenceCycle(Infeasible):
    def __init__(self):
        super().__init__("route and precedence arcs form a cycle")


class ConstructionFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class Route:
    fleet_id: int
    vehicle_id: int
    visits: tuple[int, ...] = ()


@dataclass(frozen=True)
class Solution:
    """Routes for every vehicle of every fleet (empty tuple = unused) plus start times."""

    routes: tuple[Route, ...]
    start_times: Mapping[tuple[int, int], float]
    objective: float

    @cached_property
    def by_vehicle(self) -> dict[VehicleKey, tuple[int, ...]]:
        return {(r.fleet_id, r.vehicle_id): r.visits for r in self.routes}

    def route(self, fleet_id: int, vehicle_id: int) -> tuple[int, ...]:
        return self.by_vehicle.get((fleet_id, vehicle_id), ())


# -- cached lookup tables -------------------------------------------------------------

class _Tables:
    """Plain-list copies of instance arrays for tight Python loops."""

    def __init__(self, inst: Instance):
        n, K = inst.n, len(inst.fleets)
        self.n, self.K = n, K
        a, b = inst.window_matrix
        s = inst.service_matrix
        self.dist = inst.distance.tolist()
        self.travel = [inst.travel[k].tolist() for k in range(K)]
        self.q = inst.demand_matrix.tolist()
        self.cap = [f.capacity for f in inst.fleets]
        self.vcount = [f.vehicle_count for f in inst.fleets]
        # node id of (flight i, fleet index k) is k * n + i - 1
        self.a = [float(a[k, i]) for k in range(K) for i in range(1, n + 1)]
        self.b = [float(b[k, i]) for k in range(K) for i in range(1, n + 1)]
        self.s = [float(s[k, i]) for k in range(K) for i in range(1, n + 1)]
        self.depart = [float(inst.travel[k, 0, i]) for k in range(K) for i in range(1, n + 1)]
        self.prec_succ: list[list[int]] = [[] for _ in range(n * K)]
        self.prec_pred: list[list[int]] = [[] for _ in range(n * K)]
        for i, k1, k2 in inst.precedence_pairs:
            u, w = k1 * n + i - 1, k2 * n + i - 1
            self.prec_succ[u].append(w)
            self.prec_pred[w].append(u)
        self.prec_indeg = [len(p) for p in self.prec_pred]
        self.fleet_ids = list(inst.fleet_ids)


def tables(inst: Instance) -> _Tables:
    t = inst.__dict__.get("_tables")
    if t is None:
        t = _Tables(inst)
        inst.__dict__["_tables"] = t
    return t


def propagate(tab: _Tables, routes: Iterable[tuple[int, list[int] | tuple[int, ...]]]):
    """Earliest start times over the joint route/precedence graph.

    ``routes`` yields (fleet_index, visits).  Nodes not on any route are scheduled
    from their window and precedence predecessors only.  Returns ``(T, None)`` or
    ``(None, reason)`` where reason is ``("window", node, start)`` or ``("cycle", None, None)``.
    """
    n = tab.n
    N = n * tab.K
    T = list(tab.a)
    indeg = list(tab.prec_indeg)
    nxt = [-1] * N
    for k, visits in routes:
        if not visits:
            continue
        base = k * n - 1
        first = base + visits[0]
        d = tab.depart[first]
        if d > T[first]:
            T[first] = d
        prev = first
        for i in visits[1:]:
            u = base + i
            nxt[prev] = u
            indeg[u] += 1
            prev = u
    queue = deque(u for u in range(N) if indeg[u] == 0)
    b, s, succ, travel = tab.b, tab.s, tab.prec_succ, tab.travel
    done = 0
    while queue:
        u = queue.popleft()
        done += 1
        tu = T[u]
        if tu > b[u] + TIME_EPS:
            return None, ("window", u, tu)
        fin = tu + s[u]
        for w in succ[u]:
            if fin > T[w]:
                T[w] = fin
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
        w = nxt[u]
        if w >= 0:
            k, i = divmod(u, n)
            arr = fin + travel[k][i + 1][w - k * n + 1]
            if arr > T[w]:
                T[w] = arr
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    if done < N:
        return None, ("cycle", None, None)
    return T, None


def route_cost(tab: _Tables, visits) -> float:
    if not visits:
        return 0.0
    d = tab.dist
    total = d[0][visits[0]]
    for x, y in zip(visits, visits[1:]):
        total += d[x][y]
    return total + d[visits[-1]][tab.n + 1]


def evaluate(instance: Instance, solution: Solution) -> float:
    """Total travelled distance, depot legs included."""
    tab = tables(instance)
    return sum(route_cost(tab, r.visits) for r in solution.routes)


def _as_fleet_index_routes(instance: Instance, routes) -> list[tuple[int, tuple[int, ...]]]:
    if isinstance(routes, Mapping):
        items = [(key[0], visits) for key, visits in routes.items()]
    else:
        items = [(r.fleet_id, r.visits) for r in routes]
    return [(instance.fleet_index[fid], tuple(v)) for fid, v in items]


def schedule_earliest(instance: Instance, routes) -> dict[tuple[int, int], float]:
    """Earliest start time of every (flight, fleet_id) service.

    Vehicles leave the depot at time 0.  Raises :class:`WindowExceeded` or
    :class:`PrecedenceCycle`.
    """
    tab = tables(instance)
    T, why = propagate(tab, _as_fleet_index_routes(instance, routes))
    if T is None:
        if why[0] == "cycle":
            raise PrecedenceCycle()
        k, i = divmod(why[1], tab.n)
        raise WindowExceeded(i + 1, tab.fleet_ids[k], why[2], tab.b[why[1]])
    return {(u % tab.n + 1, tab.fleet_ids[u // tab.n]): T[u] for u in range(len(T))}


def make_solution(instance: Instance, routes: Mapping[VehicleKey, Iterable[int]]) -> Solution:
    """Build a Solution (earliest start times, cached objective) from a vehicle -> visits map."""
    full = tuple(
        Route(fid, v, tuple(routes.get((fid, v), ())))
        for fid, v in instance.vehicle_keys()
    )
    extra = set(routes) - {(r.fleet_id, r.vehicle_id) for r in full}
    if extra:
        raise KeyError(f"unknown vehicles {sorted(extra)}")
    times = schedule_earliest(instance, full)
    tab = tables(instance)
    obj = sum(route_cost(tab, r.visits) for r in full)
    return Solution(full, times, obj)


@dataclass(frozen=True)
class Violation:
    kind: str  # coverage | vehicles | capacity | window | time | precedence | objective
    detail: str


def check_feasible(instance: Instance, solution: Solution) -> list[Violation]:
    """Independent constraint-by-constraint audit of a solution; empty list iff feasible."""
    out: list[Violation] = []
    n = instance.n
    a, b = instance.window_matrix
    s = instance.service_matrix
    T = solution.start_times
    seen: dict[tuple[int, int], int] = {}
    vehicles_seen = set()
    for r in solution.routes:
        key = (r.fleet_id, r.vehicle_id)
        if r.fleet_id not in instance.fleet_index:
            out.append(Violation("vehicles", f"unknown fleet {r.fleet_id}"))
            continue
        k = instance.fleet_index[r.fleet_id]
        fleet = instance.fleets[k]
        if key in vehicles_seen or not 1 <= r.vehicle_id <= fleet.vehicle_count:
            out.append(Violation("vehicles", f"fleet {r.fleet_id} vehicle {r.vehicle_id} invalid or repeated"))
        vehicles_seen.add(key)
        if any(not 1 <= i <= n for i in r.visits):
            out.append(Violation("coverage", f"fleet {r.fleet_id} vehicle {r.vehicle_id} visits unknown flight"))
            continue
        load = sum(instance.flights[i - 1].demand[r.fleet_id] for i in r.visits)
        if load > fleet.capacity:
            out.append(Violation("capacity", f"fleet {r.fleet_id} vehicle {r.vehicle_id}: load {load} > {fleet.capacity}"))
        for i in r.visits:
            seen[(i, r.fleet_id)] = seen.get((i, r.fleet_id), 0) + 1
        prev = 0
        for i in r.visits:
            ti = T.get((i, r.fleet_id))
            if ti is None:
                out.append(Violation("time", f"no start time for flight {i} fleet {r.fleet_id}"))
                break
            ready = 0.0 if prev == 0 else T[(prev, r.fleet_id)] + s[k, prev]
            ready += instance.travel[k, prev, i]
            if ti < ready - TIME_EPS:
                out.append(Violation("time", f"fleet {r.fleet_id} vehicle {r.vehicle_id}: flight {i} starts {ti:g} before arrival {ready:g}"))
            prev = i
    for fl in instance.flights:
        for f in instance.fleets:
            c = seen.get((fl.flight_id, f.fleet_id), 0)
            if c != 1:
                out.append(Violation("coverage", f"flight {fl.flight_id} served {c} times by fleet {f.fleet_id}"))
    for f in instance.fleets:
        used = sum(1 for r in solution.routes if r.fleet_id == f.fleet_id and r.visits)
        if used > f.vehicle_count:
            out.append(Violation("vehicles", f"fleet {f.fleet_id}: {used} routes > {f.vehicle_count} vehicles"))
    for (i, fid), t in T.items():
        if fid not in instance.fleet_index or not 1 <= i <= n:
            out.append(Violation("window", f"start time for unknown pair ({i}, {fid})"))
            continue
        k = instance.fleet_index[fid]
        if t < a[k, i] - TIME_EPS or t > b[k, i] + TIME_EPS:
            out.append(Violation("window", f"flight {i} fleet {fid}: start {t:g} outside [{a[k, i]:g}, {b[k, i]:g}]"))
    ids = instance.fleet_ids
    for i, k1, k2 in instance.precedence_pairs:
        t1, t2 = T.get((i, ids[k1])), T.get((i, ids[k2]))
        if t1 is None or t2 is None:
            continue
        if t1 + s[k1, i] > t2 + TIME_EPS:
            out.append(Violation("precedence", f"flight {i}: op {ids[k2]} starts {t2:g} before op {ids[k1]} completes {t1 + s[k1, i]:g}"))
    recomputed = evaluate(instance, solution)
    if abs(recomputed - solution.objective) > 1e-6 * max(1.0, abs(recomputed)):
        out.append(Violation("objective", f"cached {solution.objective} != recomputed {recomputed}"))
    return out


def initial_solution(instance: Instance) -> Solution:
    """Nearest-neighbour construction, fleet by fleet along the precedence order.

    Closeness of a candidate flight is measured in time, Solomon style: half
    the travel time plus half the delay until its service could start.  A route
    keeps taking the closest unserved flight that fits the remaining capacity
    and can still start inside its window (ties: lowest flight id); when none
    fits, the next vehicle leaves the depot.
    """
    tab = tables(instance)
    n = tab.n
    start: dict[int, float] = {}  # node id -> start time of already built services
    routes: dict[VehicleKey, list[int]] = {}
    for fid in instance.fleet_construction_order():
        k = instance.fleet_index[fid]
        travel, q, cap = tab.travel[k], tab.q[k], tab.cap[k]
        unserved = set(range(1, n + 1))
        vehicle = 0
        while unserved:
            vehicle += 1
            if vehicle > tab.vcount[k]:
                raise ConstructionFailed(
                    f"fleet {fid}: flights {sorted(unserved)} left after using all {tab.vcount[k]} vehicles")
            visits: list[int] = []
            pos, clock, load = 0, 0.0, 0.0
            while True:
                best = None
                for i in sorted(unserved):
                    if load + q[i] > cap:
                        continue
                    u = k * n + i - 1
                    t = max(tab.a[u], clock + travel[pos][i])
                    for p in tab.prec_pred[u]:
                        if p in start:
                            t = max(t, start[p] + tab.s[p])
                    if t > tab.b[u] + TIME_EPS:
                        continue
                    closeness = 0.5 * travel[pos][i] + 0.5 * (t - clock)
                    if best is None or closeness < best[0] - 1e-12:
                        best = (closeness, i, t)
                if best is None:
                    break
                _, i, t = best
                u = k * n + i - 1
                start[u] = t
                visits.append(i)
                unserved.remove(i)
                pos, clock, load = i, t + tab.s[u], load + q[i]
            if not visits:
                raise ConstructionFailed(f"fleet {fid}: no vehicle can serve flights {sorted(unserved)}")
            routes[(fid, vehicle)] = visits
    try:
        return make_solution(instance, routes)
    except Infeasible as exc:
        raise ConstructionFailed(f"constructed routes cannot be scheduled: {exc}") from None


# -- solution files ------------------------------------------------------------------

def solution_to_dict(solution: Solution) -> dict:
    return {
        "format_version": 1,
        "objective": solution.objective,
        "routes": [
            {"fleet_id": r.fleet_id, "vehicle_id": r.vehicle_id, "visits": list(r.visits)}
            for r in solution.routes
        ],
        "start_times": [[i, k, t] for (i, k), t in sorted(solution.start_times.items())],
    }


def solution_from_dict(data: dict) -> Solution:
    try:
        routes = tuple(Route(int(r["fleet_id"]), int(r["vehicle_id"]), tuple(int(x) for x in r["visits"]))
                       for r in data["routes"])
        times = {(int(i), int(k)): float(t) for i, k, t in data["start_times"]}
        return Solution(routes, times, float(data["objective"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed solution file: {exc}") from None


def save_solution(solution: Solution, path: str | Path) -> None:
    Path(path).write_text(json.dumps(solution_to_dict(solution), indent=1))


def load_solution(path: str | Path) -> Solution:
    return solution_from_dict(json.loads(Path(path).read_text()))
