"""Airport ground handling instances: data model, synthetic generator and JSON I/O.

Node convention used everywhere in the package: node ``0`` is the start depot,
nodes ``1..n`` are flights (a flight's id *is* its node index) and node
``n + 1`` is the end depot.  Both depot nodes sit at ``depot_position``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FORMAT_VERSION = 1
AIRCRAFT_TYPES = ("T1", "T2", "T3")


class ConfigError(ValueError):
    """Invalid generator configuration."""


class InstanceFormatError(ValueError):
    """Malformed or inconsistent instance file."""


@dataclass(frozen=True)
class OperationSpec:
    op_id: int
    name: str
    service_duration_range: tuple[int, int]
    vehicle_speed: float
    fleet_size_range: tuple[int, int] = (10, 20)
    capacity_ratio_range: tuple[float, float] = (0.7, 0.9)

    def __post_init__(self):
        lo, hi = self.service_duration_range
        if not 0 < lo <= hi:
            raise ConfigError(f"operation {self.op_id}: bad service duration range {self.service_duration_range}")
        if self.vehicle_speed <= 0:
            raise ConfigError(f"operation {self.op_id}: speed must be positive")


# Ten turnaround operations; durations in minutes, speeds in distance units per minute.
OPERATIONS: dict[int, OperationSpec] = {
    1: OperationSpec(1, "deboarding", (2, 4), 250.0),
    2: OperationSpec(2, "fueling", (3, 6), 300.0),
    3: OperationSpec(3, "catering", (3, 5), 300.0),
    4: OperationSpec(4, "cleaning", (3, 6), 350.0),
    5: OperationSpec(5, "baggage_loading", (3, 6), 300.0),
    6: OperationSpec(6, "water", (2, 4), 350.0),
    7: OperationSpec(7, "lavatory", (2, 4), 350.0),
    8: OperationSpec(8, "boarding", (3, 5), 250.0),
    9: OperationSpec(9, "bridge_removal", (2, 3), 400.0),
    10: OperationSpec(10, "pushback", (2, 4), 200.0),
}

# Operations included when a config asks for the first K of them.
OPERATION_ORDER = (1, 2, 8, 3, 10, 4, 5, 9, 6, 7)

_BASE_EDGES = (
    (1, 2), (1, 3), (1, 4),
    (2, 8), (3, 8), (4, 8),
    (8, 9), (9, 10),
    (5, 10), (6, 10), (7, 10),
)


def _builtin_edges(aircraft_type: str) -> tuple[tuple[int, int], ...]:
    edges = set(_BASE_EDGES)
    if aircraft_type == "T2":
        # catering may start together with deboarding
        edges.discard((1, 3))
    elif aircraft_type == "T3":
        # cleaning may start with deboarding; catering only has to finish before pushback
        edges -= {(1, 4), (1, 3), (3, 8)}
        edges.add((3, 10))
    return tuple(sorted(edges))


@dataclass(frozen=True)
class PrecedenceRule:
    aircraft_type: str
    edges: tuple[tuple[int, int], ...]

    def successors(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for a, b in self.edges:
            out.setdefault(a, []).append(b)
        return out


def topological_order(nodes: Sequence[int], edges: Sequence[tuple[int, int]]) -> list[int] | None:
    """Kahn's algorithm with smallest-id tie breaking; ``None`` if the graph has a cycle."""
    indeg = {u: 0 for u in nodes}
    succ: dict[int, list[int]] = {u: [] for u in nodes}
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    ready = sorted(u for u in nodes if indeg[u] == 0)
    order = []
    while ready:
        u = ready.pop(0)
        order.append(u)
        for w in succ[u]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
                ready.sort()
    return order if len(order) == len(indeg) else None


def restrict_precedence(edges: Sequence[tuple[int, int]], keep: Sequence[int]) -> tuple[tuple[int, int], ...]:
    """Induced precedence on a subset of operations (transitive closure, then reduction)."""
    nodes = sorted({u for e in edges for u in e} | set(keep))
    reach = {u: set() for u in nodes}
    for u in reversed(topological_order(nodes, edges)):
        for a, b in edges:
            if a == u:
                reach[u] |= {b} | reach[b]
    kept = set(keep)
    closure = {(a, b) for a in kept for b in reach[a] if b in kept}
    reduced = {
        (a, b) for (a, b) in closure
        if not any((a, m) in closure and (m, b) in closure for m in kept)
    }
    return tuple(sorted(reduced))


def _depths(ops: Sequence[int], edges: Sequence[tuple[int, int]]) -> dict[int, int]:
    depth = {k: 0 for k in ops}
    for u in topological_order(ops, edges):
        for a, b in edges:
            if a == u:
                depth[b] = max(depth[b], depth[a] + 1)
    return depth


@dataclass(frozen=True)
class Flight:
    flight_id: int
    gate_position: tuple[float, float]
    arrival: float
    turnaround: float
    aircraft_type: str
    demand: Mapping[int, int]


@dataclass(frozen=True)
class Fleet:
    fleet_id: int
    vehicle_count: int
    capacity: int
    speed: float
    service_durations: Mapping[int, float]
    time_windows: Mapping[int, tuple[float, float]]


@dataclass(frozen=True)
class Instance:
    flights: tuple[Flight, ...]
    fleets: tuple[Fleet, ...]
    precedence: tuple[PrecedenceRule, ...]
    depot_position: tuple[float, float] = (0.0, 0.0)
    rng_seed: int = 0

    @property
    def n(self) -> int:
        return len(self.flights)

    @property
    def end_depot(self) -> int:
        return self.n + 1

    @property
    def fleet_ids(self) -> tuple[int, ...]:
        return tuple(f.fleet_id for f in self.fleets)

    @cached_property
    def fleet_index(self) -> dict[int, int]:
        return {f.fleet_id: idx for idx, f in enumerate(self.fleets)}

    def fleet(self, fleet_id: int) -> Fleet:
        try:
            return self.fleets[self.fleet_index[fleet_id]]
        except KeyError:
            raise KeyError(f"unknown fleet {fleet_id}") from None

    @property
    def total_vehicles(self) -> int:
        return sum(f.vehicle_count for f in self.fleets)

    def vehicle_keys(self) -> list[tuple[int, int]]:
        """All (fleet_id, vehicle_id) pairs, fleets in declaration order, vehicles from 1."""
        return [(f.fleet_id, v) for f in self.fleets for v in range(1, f.vehicle_count + 1)]

    # -- dense per-instance arrays (node-indexed, fleet-indexed) ----------------
    @cached_property
    def positions(self) -> np.ndarray:
        pts = [self.depot_position] + [f.gate_position for f in self.flights] + [self.depot_position]
        return np.asarray(pts, dtype=float).reshape(-1, 2)

    @cached_property
    def distance(self) -> np.ndarray:
        """Arc cost c_ij (Euclidean distance, identical for every fleet)."""
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((diff ** 2).sum(-1))

    @cached_property
    def travel(self) -> np.ndarray:
        """Travel times, shape (K, n+2, n+2)."""
        speeds = np.array([f.speed for f in self.fleets], dtype=float)
        return self.distance[None, :, :] / speeds[:, None, None]

    @cached_property
    def demand_matrix(self) -> np.ndarray:
        q = np.zeros((len(self.fleets), self.n + 2))
        for fl in self.flights:
            for k, f in enumerate(self.fleets):
                q[k, fl.flight_id] = fl.demand[f.fleet_id]
        return q

    @cached_property
    def service_matrix(self) -> np.ndarray:
        s = np.zeros((len(self.fleets), self.n + 2))
        for k, f in enumerate(self.fleets):
            for i, d in f.service_durations.items():
                s[k, i] = d
        return s

    @cached_property
    def window_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.zeros((len(self.fleets), self.n + 2))
        b = np.zeros((len(self.fleets), self.n + 2))
        for k, f in enumerate(self.fleets):
            for i, (lo, hi) in f.time_windows.items():
                a[k, i], b[k, i] = lo, hi
        return a, b

    @cached_property
    def precedence_pairs(self) -> tuple[tuple[int, int, int], ...]:
        """(flight, fleet_idx_before, fleet_idx_after) for every precedence edge that applies."""
        rules = {r.aircraft_type: r for r in self.precedence}
        out = []
        for fl in self.flights:
            rule = rules.get(fl.aircraft_type)
            if rule is None:
                continue
            for k1, k2 in rule.edges:
                if k1 in self.fleet_index and k2 in self.fleet_index:
                    out.append((fl.flight_id, self.fleet_index[k1], self.fleet_index[k2]))
        return tuple(out)

    def fleet_construction_order(self) -> list[int]:
        """Fleet ids in topological order of the union of all precedence rules.

        Cycles in the merged relation (possible with hand-built opposing rules)
        are broken by taking the smallest remaining fleet id.
        """
        ids = list(self.fleet_ids)
        edges = {(a, b) for r in self.precedence for a, b in r.edges
                 if a in self.fleet_index and b in self.fleet_index}
        order = []
        remaining = set(ids)
        while remaining:
            sub = [e for e in edges if e[0] in remaining and e[1] in remaining]
            indeg = {u: 0 for u in remaining}
            for _, b in sub:
                indeg[b] += 1
            sources = sorted(u for u in remaining if indeg[u] == 0)
            u = sources[0] if sources else min(remaining)
            order.append(u)
            remaining.remove(u)
        return order


def travel_time(instance: Instance, fleet_id: int, node_i: int, node_j: int) -> float:
    """Travel time t_ij for one fleet; zero between the two depot copies."""
    k = instance.fleet_index.get(fleet_id)
    if k is None:
        raise KeyError(f"unknown fleet {fleet_id}")
    last = instance.end_depot
    for node in (node_i, node_j):
        if not 0 <= node <= last:
            raise KeyError(f"unknown node {node}")
    if node_i == node_j:
        raise ValueError("self-loops are not arcs of the routing graph")
    if {node_i, node_j} == {0, last}:
        return 0.0
    return float(instance.travel[k, node_i, node_j])


# -- generator -------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    flights: int = 20
    ops: int | Sequence[int] = 10
    hourly_arrivals: tuple[int, int] = (5, 25)
    turnaround: tuple[int, int] = (30, 60)
    demand: tuple[int, int] = (5, 15)
    capacity_ratio: tuple[float, float] = (0.7, 0.9)
    vehicles: tuple[int, int] | None = None
    terminals: int = 3
    gates_per_terminal: int = 30

    def operation_ids(self) -> list[int]:
        if isinstance(self.ops, int):
            if not 1 <= self.ops <= len(OPERATION_ORDER):
                raise ConfigError(f"ops must be in [1, {len(OPERATION_ORDER)}]")
            return sorted(OPERATION_ORDER[: self.ops])
        ids = sorted(set(self.ops))
        unknown = [k for k in ids if k not in OPERATIONS]
        if unknown or not ids:
            raise ConfigError(f"unknown operations {unknown}")
        return ids

    def validate(self) -> None:
        if self.flights < 0:
            raise ConfigError("flight count must be non-negative")
        for name in ("hourly_arrivals", "turnaround", "demand", "capacity_ratio", "vehicles"):
            rng = getattr(self, name)
            if rng is None:
                continue
            lo, hi = rng
            if lo > hi:
                raise ConfigError(f"{name}: low {lo} > high {hi}")
            if lo <= 0:
                raise ConfigError(f"{name}: values must be positive")
        if self.capacity_ratio[1] > 1:
            raise ConfigError("capacity_ratio must not exceed 1")
        if self.terminals < 1 or self.gates_per_terminal < 1:
            raise ConfigError("need at least one gate")
        self.operation_ids()


def gate_layout(terminals: int = 3, gates_per_terminal: int = 30) -> np.ndarray:
    """Synthetic apron: terminals fan out to the right of a depot at the origin.

    Each terminal is a pier with two rows of gates spaced 80 units apart.
    """
    gates = []
    centers = [(1800.0 + 700.0 * (t % 2), (t - (terminals - 1) / 2) * 1400.0) for t in range(terminals)]
    per_row = math.ceil(gates_per_terminal / 2)
    for cx, cy in centers:
        for g in range(gates_per_terminal):
            row, col = divmod(g, per_row)
            gates.append((cx + 80.0 * (col - (per_row - 1) / 2), cy + (120.0 if row else -120.0)))
    return np.asarray(gates)


def _pick_fleet_size(total_demand: int, max_demand: int, v_lo: int, v_hi: int,
                     r_lo: float, r_hi: float, rng: np.random.Generator) -> tuple[int, int]:
    """Vehicle count and capacity with demand/(V*Q) in [r_lo, r_hi] and Q >= max single demand."""
    v = int(rng.integers(v_lo, v_hi + 1))
    r = float(rng.uniform(r_lo, r_hi))
    if total_demand == 0:
        return v, max(max_demand, 1)
    while True:
        q_lo = max(max_demand, math.ceil(total_demand / (r_hi * v) - 1e-9))
        q_hi = math.floor(total_demand / (r_lo * v) + 1e-9)
        if q_lo <= q_hi or v == 1:
            break
        v -= 1
    q = min(max(math.ceil(total_demand / (v * r) - 1e-9), q_lo), max(q_hi, q_lo))
    return v, q


def generate(config: GeneratorConfig, seed: int) -> Instance:
    """Draw a synthetic instance; equal (config, seed) always give equal instances."""
    config.validate()
    rng = np.random.default_rng(seed)
    ops = config.operation_ids()
    gates = gate_layout(config.terminals, config.gates_per_terminal)

    arrivals: list[int] = []
    hour = 0
    while len(arrivals) < config.flights:
        count = int(rng.integers(config.hourly_arrivals[0], config.hourly_arrivals[1] + 1))
        arrivals.extend(sorted(60 * hour + int(m) for m in rng.integers(0, 60, size=count)))
        hour += 1
    arrivals = arrivals[: config.flights]

    rules = tuple(PrecedenceRule(t, restrict_precedence(_builtin_edges(t), ops)) for t in AIRCRAFT_TYPES)
    depth_by_type = {r.aircraft_type: _depths(ops, r.edges) for r in rules}

    flights = []
    for idx, arr in enumerate(arrivals):
        gate = gates[int(rng.integers(len(gates)))]
        flights.append(Flight(
            flight_id=idx + 1,
            gate_position=(float(gate[0]), float(gate[1])),
            arrival=float(arr),
            turnaround=float(rng.integers(config.turnaround[0], config.turnaround[1] + 1)),
            aircraft_type=AIRCRAFT_TYPES[int(rng.integers(len(AIRCRAFT_TYPES)))],
            demand={k: int(rng.integers(config.demand[0], config.demand[1] + 1)) for k in ops},
        ))

    fleets = []
    for k in ops:
        spec = OPERATIONS[k]
        v_lo, v_hi = config.vehicles or spec.fleet_size_range
        r_lo, r_hi = config.capacity_ratio
        total = sum(fl.demand[k] for fl in flights)
        biggest = max((fl.demand[k] for fl in flights), default=config.demand[1])
        vehicles, capacity = _pick_fleet_size(total, biggest, v_lo, v_hi, r_lo, r_hi, rng)
        services, windows = {}, {}
        for fl in flights:
            s_lo, s_hi = spec.service_duration_range
            s = float(rng.integers(s_lo, s_hi + 1))
            depth = depth_by_type[fl.aircraft_type]
            levels = max(depth.values()) + 1
            start = fl.arrival + math.floor(fl.turnaround * depth[k] / levels)
            end = fl.arrival + fl.turnaround - s
            services[fl.flight_id] = s
            windows[fl.flight_id] = (float(start), float(max(end, start)))
        fleets.append(Fleet(k, vehicles, capacity, spec.vehicle_speed, services, windows))

    return Instance(tuple(flights), tuple(fleets), rules, (0.0, 0.0), int(seed))


# -- serialization ------------------------------------------------------------------

def to_dict(instance: Instance) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "rng_seed": instance.rng_seed,
        "depot_position": list(instance.depot_position),
        "flights": [
            {
                "flight_id": f.flight_id,
                "gate_position": list(f.gate_position),
                "arrival": f.arrival,
                "turnaround": f.turnaround,
                "aircraft_type": f.aircraft_type,
                "demand": {str(k): v for k, v in sorted(f.demand.items())},
            }
            for f in instance.flights
        ],
        "fleets": [
            {
                "fleet_id": f.fleet_id,
                "vehicle_count": f.vehicle_count,
                "capacity": f.capacity,
                "speed": f.speed,
                "service_durations": {str(i): d for i, d in sorted(f.service_durations.items())},
                "time_windows": {str(i): list(w) for i, w in sorted(f.time_windows.items())},
            }
            for f in instance.fleets
        ],
        "precedence": [
            {"aircraft_type": r.aircraft_type, "edges": [list(e) for e in r.edges]}
            for r in instance.precedence
        ],
    }


def _field(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise InstanceFormatError(f"{where}: missing field '{key}'")
    return obj[key]


def from_dict(data: dict) -> Instance:
    if not isinstance(data, dict):
        raise InstanceFormatError("top level must be an object")
    version = _field(data, "format_version", "instance")
    if version != FORMAT_VERSION:
        raise InstanceFormatError(f"instance: unsupported format_version {version!r}")
    try:
        flights = tuple(
            Flight(
                flight_id=int(_field(f, "flight_id", f"flights[{i}]")),
                gate_position=tuple(float(x) for x in _field(f, "gate_position", f"flights[{i}]")),
                arrival=float(_field(f, "arrival", f"flights[{i}]")),
                turnaround=float(_field(f, "turnaround", f"flights[{i}]")),
                aircraft_type=str(_field(f, "aircraft_type", f"flights[{i}]")),
                demand={int(k): int(v) for k, v in _field(f, "demand", f"flights[{i}]").items()},
            )
            for i, f in enumerate(_field(data, "flights", "instance"))
        )
        fleets = tuple(
            Fleet(
                fleet_id=int(_field(f, "fleet_id", f"fleets[{i}]")),
                vehicle_count=int(_field(f, "vehicle_count", f"fleets[{i}]")),
                capacity=int(_field(f, "capacity", f"fleets[{i}]")),
                speed=float(_field(f, "speed", f"fleets[{i}]")),
                service_durations={int(k): float(v) for k, v in _field(f, "service_durations", f"fleets[{i}]").items()},
                time_windows={int(k): (float(w[0]), float(w[1]))
                              for k, w in _field(f, "time_windows", f"fleets[{i}]").items()},
            )
            for i, f in enumerate(_field(data, "fleets", "instance"))
        )
        precedence = tuple(
            PrecedenceRule(str(_field(r, "aircraft_type", f"precedence[{i}]")),
                           tuple((int(a), int(b)) for a, b in _field(r, "edges", f"precedence[{i}]")))
            for i, r in enumerate(_field(data, "precedence", "instance"))
        )
        depot = tuple(float(x) for x in _field(data, "depot_position", "instance"))
        seed = int(data.get("rng_seed", 0))
    except InstanceFormatError:
        raise
    except (TypeError, ValueError, AttributeError, IndexError) as exc:
        raise InstanceFormatError(f"instance: bad value ({exc})") from None
    instance = Instance(flights, fleets, precedence, depot, seed)
    validate(instance)
    return instance


def validate(instance: Instance) -> None:
    """Raise :class:`InstanceFormatError` naming the first violated invariant."""
    fleet_ids = set(instance.fleet_ids)
    if len(fleet_ids) != len(instance.fleets):
        raise InstanceFormatError("fleets: duplicate fleet_id")
    for pos, fl in enumerate(instance.flights):
        where = f"flights[{pos}]"
        if fl.flight_id != pos + 1:
            raise InstanceFormatError(f"{where}.flight_id: expected {pos + 1}, got {fl.flight_id}")
        if len(fl.gate_position) != 2:
            raise InstanceFormatError(f"{where}.gate_position: need 2 coordinates")
        if fl.aircraft_type not in AIRCRAFT_TYPES:
            raise InstanceFormatError(f"{where}.aircraft_type: unknown type {fl.aircraft_type!r}")
        undeclared = set(fl.demand) - fleet_ids
        if undeclared:
            raise InstanceFormatError(f"{where}.demand: undeclared op_id {sorted(undeclared)}")
        missing = fleet_ids - set(fl.demand)
        if missing:
            raise InstanceFormatError(f"{where}.demand: no demand for op_id {sorted(missing)}")
    ids = {fl.flight_id for fl in instance.flights}
    for pos, f in enumerate(instance.fleets):
        where = f"fleets[{pos}]"
        if f.vehicle_count < 1:
            raise InstanceFormatError(f"{where}.vehicle_count: must be >= 1")
        if f.speed <= 0:
            raise InstanceFormatError(f"{where}.speed: must be positive")
        if set(f.time_windows) != ids or set(f.service_durations) != ids:
            raise InstanceFormatError(f"{where}: windows/service durations must cover exactly the flights")
        for i, (lo, hi) in f.time_windows.items():
            if lo > hi:
                raise InstanceFormatError(f"{where}.time_windows[{i}]: inverted time window ({lo} > {hi})")
        for i, d in f.service_durations.items():
            if d < 0:
                raise InstanceFormatError(f"{where}.service_durations[{i}]: negative duration")
        biggest = max((fl.demand[f.fleet_id] for fl in instance.flights), default=0)
        if f.capacity < biggest:
            raise InstanceFormatError(f"{where}.capacity: {f.capacity} below largest demand {biggest}")
    for pos, r in enumerate(instance.precedence):
        where = f"precedence[{pos}]"
        if r.aircraft_type not in AIRCRAFT_TYPES:
            raise InstanceFormatError(f"{where}.aircraft_type: unknown type {r.aircraft_type!r}")
        ops = {u for e in r.edges for u in e}
        if ops - fleet_ids:
            raise InstanceFormatError(f"{where}.edges: undeclared op_id {sorted(ops - fleet_ids)}")
        if topological_order(sorted(ops), r.edges) is None:
            raise InstanceFormatError(f"{where}.edges: precedence graph has a cycle")


def dumps(instance: Instance) -> str:
    return json.dumps(to_dict(instance), indent=1)


def save(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps(instance))


def loads(text: str) -> Instance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    return from_dict(data)


def load(path: str | Path) -> Instance:
    return loads(Path(path).read_text())
