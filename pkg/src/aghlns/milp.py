"""MILP encoding of the multi-fleet routing problem.

Columns: one binary ``x[i, j, v, k]`` per ordered node pair (i != j) and vehicle,
followed by one continuous start time ``T[i, v, k]`` per flight and vehicle.
Binary columns are grouped per vehicle, ``(n + 2) * (n + 1)`` arcs each, in
``(fleet, vehicle, i, j)`` order.  Depot nodes carry no start-time column;
vehicles leave the depot at time 0.

The model only *represents* the problem: it is used for featurization,
independent feasibility checks and LP export to external solvers.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np
import scipy.sparse as sp

from .instance import Instance
from .solution import Solution

BIG_M = 1e6
EQ, LE = 0, 1
SENSE_SYMBOL = {EQ: "=", LE: "<="}
FEAS_TOL = 1e-6


class ContractError(ValueError):
    pass


class DecodeError(ValueError):
    pass


class VarIndex(NamedTuple):
    kind: str  # "x" (route binary) or "T" (start time)
    i: int
    j: int  # -1 for start times
    v: int  # vehicle id (1-based)
    k: int  # fleet id
    column: int


@dataclass(eq=False)
class MilpModel:
    instance: Instance
    objective: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    row_kind: np.ndarray
    big_M: float = BIG_M
    vehicles: tuple[tuple[int, int], ...] = ()
    n_arcs: int = 0

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def num_binaries(self) -> int:
        return len(self.vehicles) * self.n_arcs

    # -- index map --------------------------------------------------------------
    def arc_position(self, i: int, j: int) -> int:
        n1 = self.instance.n + 1
        if i == j:
            raise KeyError("self-loop")
        return i * n1 + (j if j < i else j - 1)

    def vehicle_number(self, fleet_id: int, vehicle_id: int) -> int:
        return self._vehicle_pos[(fleet_id, vehicle_id)]

    def x_col(self, i: int, j: int, fleet_id: int, vehicle_id: int) -> int:
        return self.vehicle_number(fleet_id, vehicle_id) * self.n_arcs + self.arc_position(i, j)

    def t_col(self, i: int, fleet_id: int, vehicle_id: int) -> int:
        if not 1 <= i <= self.instance.n:
            raise KeyError(f"no start-time column for node {i}")
        return self.num_binaries + self.vehicle_number(fleet_id, vehicle_id) * self.instance.n + i - 1

    def vehicle_columns(self, fleet_id: int, vehicle_id: int) -> np.ndarray:
        h = self.vehicle_number(fleet_id, vehicle_id)
        return np.arange(h * self.n_arcs, (h + 1) * self.n_arcs)

    def var(self, column: int) -> VarIndex:
        n = self.instance.n
        if column < self.num_binaries:
            h, pos = divmod(column, self.n_arcs)
            i, r = divmod(pos, n + 1)
            j = r if r < i else r + 1
            k, v = self.vehicles[h]
            return VarIndex("x", i, j, v, k, column)
        h, r = divmod(column - self.num_binaries, n)
        k, v = self.vehicles[h]
        return VarIndex("T", r + 1, -1, v, k, column)

    def var_index(self) -> list[VarIndex]:
        return [self.var(c) for c in range(self.num_vars)]

    def column_name(self, column: int) -> str:
        x = self.var(column)
        if x.kind == "x":
            return f"x_{x.i}_{x.j}_{x.v}_{x.k}"
        return f"T_{x.i}_{x.v}_{x.k}"

    def __post_init__(self):
        self._vehicle_pos = {key: h for h, key in enumerate(self.vehicles)}
        n = self.instance.n
        pos = np.arange(self.n_arcs)
        i, r = np.divmod(pos, n + 1)
        self.arc_tail = i
        self.arc_head = np.where(r < i, r, r + 1)


def _arc_arrays(n: int):
    tails, heads = [], []
    for i in range(n + 2):
        for j in range(n + 2):
            if i != j:
                tails.append(i)
                heads.append(j)
    return np.array(tails), np.array(heads)


class _Rows:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.sense, self.rhs, self.kind = [], [], []

    def add(self, cols, vals, sense, rhs, kind):
        r = len(self.sense)
        cols = np.asarray(cols, dtype=np.int64)
        self.rows.append(np.full(cols.shape[0], r, dtype=np.int64))
        self.cols.append(cols)
        self.vals.append(np.broadcast_to(np.asarray(vals, dtype=float), cols.shape).copy())
        self.sense.append(sense)
        self.rhs.append(rhs)
        self.kind.append(kind)


def build_model(instance: Instance, big_M: float = BIG_M) -> MilpModel:
    """Assemble objective, constraint rows and bounds for ``instance``."""
    n = instance.n
    end = n + 1
    vehicles = tuple(instance.vehicle_keys())
    H = len(vehicles)
    E = (n + 2) * (n + 1)
    nbin = H * E
    nvar = nbin + H * n
    tail, head = _arc_arrays(n)
    arcpos = -np.ones((n + 2, n + 2), dtype=np.int64)
    arcpos[tail, head] = np.arange(E)

    fleet_of = np.array([instance.fleet_index[k] for k, _ in vehicles], dtype=np.int64)
    by_fleet = [np.flatnonzero(fleet_of == k) for k in range(len(instance.fleets))]
    dist = instance.distance
    q = instance.demand_matrix
    s = instance.service_matrix
    a, b = instance.window_matrix
    travel = instance.travel

    c = np.zeros(nvar)
    for h in range(H):
        c[h * E:(h + 1) * E] = dist[tail, head]

    def xcols(hs, arcs):
        hs = np.asarray(hs, dtype=np.int64)
        return (hs[:, None] * E + np.asarray(arcs, dtype=np.int64)[None, :]).ravel()

    def tcol(h, i):
        return nbin + h * n + i - 1

    rows = _Rows()
    flights = np.arange(1, n + 1)
    # each flight served once per fleet
    for k, hs in enumerate(by_fleet):
        for j in flights:
            arcs = arcpos[np.arange(n + 2)[np.arange(n + 2) != j], j]
            rows.add(xcols(hs, arcs), 1.0, EQ, 1.0, "assign")
    # route continuity
    for h in range(H):
        for u in flights:
            ins = arcpos[[i for i in range(0, n + 1) if i != u], u]
            outs = arcpos[u, [j for j in range(1, n + 2) if j != u]]
            rows.add(np.concatenate([ins, outs]) + h * E,
                     np.concatenate([np.ones(len(ins)), -np.ones(len(outs))]), EQ, 0.0, "flow")
    # vehicle budget, depot balance, depot direction
    for k, hs in enumerate(by_fleet):
        leave = arcpos[0, flights]
        back = arcpos[flights, end]
        rows.add(xcols(hs, leave), 1.0, LE, float(instance.fleets[k].vehicle_count), "fleet_size")
        rows.add(np.concatenate([xcols(hs, leave), xcols(hs, back)]),
                 np.concatenate([np.ones(len(hs) * n), -np.ones(len(hs) * n)]), EQ, 0.0, "balance")
        rows.add(xcols(hs, arcpos[np.arange(1, n + 2), 0]), 1.0, EQ, 0.0, "depot_in")
        rows.add(xcols(hs, arcpos[end, np.arange(0, n + 1)]), 1.0, EQ, 0.0, "depot_out")
    # capacity
    for h in range(H):
        k = fleet_of[h]
        mask = (tail >= 1) & (tail <= n)
        rows.add(h * E + np.flatnonzero(mask), q[k, tail[mask]], LE, float(instance.fleets[k].capacity), "capacity")
    # linearized time consistency: T_i + s_i + t_ij - T_j <= M (1 - x_ij), T_0 = 0
    for h in range(H):
        k = fleet_of[h]
        for i in range(0, n + 1):
            for j in flights:
                if i == j:
                    continue
                col_x = h * E + arcpos[i, j]
                rhs = big_M - s[k, i] - travel[k, i, j]
                if i == 0:
                    rows.add([tcol(h, j), col_x], [-1.0, big_M], LE, rhs, "bigM")
                else:
                    rows.add([tcol(h, i), tcol(h, j), col_x], [1.0, -1.0, big_M], LE, rhs, "bigM")
    # precedence between whichever vehicles serve the flight in the two fleets
    for i, k1, k2 in instance.precedence_pairs:
        into_i = arcpos[[p for p in range(n + 2) if p != i], i]
        for h1 in by_fleet[k1]:
            for h2 in by_fleet[k2]:
                cols = np.concatenate([[tcol(h1, i), tcol(h2, i)], h1 * E + into_i, h2 * E + into_i])
                vals = np.concatenate([[1.0, -1.0], np.full(2 * len(into_i), big_M)])
                rows.add(cols, vals, LE, 2 * big_M - s[k1, i], "precedence")

    nrow = len(rows.sense)
    if nrow:
        A = sp.csr_matrix((np.concatenate(rows.vals), (np.concatenate(rows.rows), np.concatenate(rows.cols))),
                          shape=(nrow, nvar))
    else:
        A = sp.csr_matrix((0, nvar))
    A.sort_indices()
    lb = np.zeros(nvar)
    ub = np.ones(nvar)
    for h in range(H):
        k = fleet_of[h]
        lb[nbin + h * n: nbin + (h + 1) * n] = a[k, 1:n + 1]
        ub[nbin + h * n: nbin + (h + 1) * n] = b[k, 1:n + 1]
    integrality = np.zeros(nvar, dtype=bool)
    integrality[:nbin] = True
    return MilpModel(
        instance=instance, objective=c, A=A, sense=np.array(rows.sense, dtype=np.int8),
        rhs=np.array(rows.rhs, dtype=float), lb=lb, ub=ub, integrality=integrality,
        row_kind=np.array(rows.kind), big_M=big_M, vehicles=vehicles, n_arcs=E,
    )


def expected_counts(instance: Instance) -> tuple[int, int]:
    """Closed-form (rows, columns) of :func:`build_model`."""
    n, K = instance.n, len(instance.fleets)
    V = [f.vehicle_count for f in instance.fleets]
    H = sum(V)
    prec = sum(V[k1] * V[k2] for _, k1, k2 in instance.precedence_pairs)
    rows = n * K + n * H + 4 * K + H + H * n * n + prec
    cols = H * (n + 2) * (n + 1) + H * n
    return rows, cols


# -- solutions <-> assignments --------------------------------------------------------

def encode(model: MilpModel, solution: Solution) -> np.ndarray:
    """Column vector of a route-level solution; idle vehicles use the (0, n+1) arc.

    Start-time columns of vehicles that do not serve a flight sit at the window's
    lower bound, where every relaxed big-M row is slack.
    """
    inst = model.instance
    end = inst.n + 1
    x = model.lb.copy()
    x[: model.num_binaries] = 0.0
    for r in solution.routes:
        path = (0, *r.visits, end) if r.visits else (0, end)
        for i, j in zip(path, path[1:]):
            x[model.x_col(i, j, r.fleet_id, r.vehicle_id)] += 1.0
        for i in r.visits:
            x[model.t_col(i, r.fleet_id, r.vehicle_id)] = solution.start_times[(i, r.fleet_id)]
    return x


def decode_routes(model: MilpModel, x: np.ndarray, tol: float = 1e-6) -> dict[tuple[int, int], tuple[int, ...]]:
    """Follow unit arcs from the start depot for every vehicle.

    Depot rows bound departures per fleet, so a model-feasible point may give one
    vehicle several depot-to-depot trips (all leaving at time 0).  Extra trips are
    handed to idle vehicles of the same fleet in id order.
    """
    inst = model.instance
    n, end = inst.n, inst.n + 1
    binaries = x[: model.num_binaries]
    frac = np.abs(binaries - np.round(binaries)) > tol
    if frac.any():
        bad = int(np.flatnonzero(frac)[0])
        raise DecodeError(f"non-integral binary {model.column_name(bad)} = {binaries[bad]}")
    trips: dict[tuple[int, int], list[tuple[int, ...]]] = {}
    for h, key in enumerate(model.vehicles):
        block = np.round(binaries[h * model.n_arcs:(h + 1) * model.n_arcs]).astype(int)
        used = np.flatnonzero(block)
        starts, succ = [], {}
        for pos in used:
            i, j = int(model.arc_tail[pos]), int(model.arc_head[pos])
            if i == 0:
                starts.append(j)
            elif i in succ:
                raise DecodeError(f"vehicle {key}: node {i} left twice")
            else:
                succ[i] = j
        mine, walked = [], set()
        for node in starts:
            visits = []
            while node != end:
                if node in walked or node == 0:
                    raise DecodeError(f"vehicle {key}: route does not reach the end depot")
                walked.add(node)
                visits.append(node)
                if node not in succ:
                    raise DecodeError(f"vehicle {key}: route stops at flight {node}")
                node = succ[node]
            if visits:
                mine.append(tuple(visits))
        if len(walked) != len(succ):
            raise DecodeError(f"vehicle {key}: {len(succ) - len(walked)} arcs outside its depot-to-depot paths")
        trips[key] = mine
    routes = {}
    for fid in inst.fleet_ids:
        keys = [k for k in model.vehicles if k[0] == fid]
        extra = [t for k in keys for t in trips[k][1:]]
        for k in keys:
            if trips[k]:
                routes[k] = trips[k][0]
            elif extra:
                routes[k] = extra.pop(0)
            else:
                routes[k] = ()
        if extra:
            raise DecodeError(f"fleet {fid}: more depot departures than vehicles")
    return routes


# -- feasibility oracle ------------------------------------------------------------------

@dataclass
class ViolationReport:
    rows: list[tuple[int, float]] = field(default_factory=list)  # (row, slack) with slack < 0
    bounds: list[tuple[int, float]] = field(default_factory=list)  # (column, distance outside)
    integrality: list[int] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.rows or self.bounds or self.integrality)

    def __len__(self) -> int:
        return len(self.rows) + len(self.bounds) + len(self.integrality)


def check_assignment(model: MilpModel, x: np.ndarray, tol: float = FEAS_TOL) -> ViolationReport:
    """Evaluate every row, bound and integrality flag of ``model`` at ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.num_vars,):
        raise ValueError(f"assignment has shape {x.shape}, model has {model.num_vars} columns")
    lhs = model.A @ x
    slack = model.rhs - lhs
    eq = model.sense == EQ
    bad = np.flatnonzero((eq & (np.abs(slack) > tol)) | (~eq & (slack < -tol)))
    rep = ViolationReport()
    rep.rows = [(int(r), float(-abs(slack[r]) if eq[r] else slack[r])) for r in bad]
    below = model.lb - x
    above = x - model.ub
    out = np.maximum(below, above)
    rep.bounds = [(int(c), float(out[c])) for c in np.flatnonzero(out > tol)]
    ints = model.integrality & (np.abs(x - np.round(x)) > tol)
    rep.integrality = [int(c) for c in np.flatnonzero(ints)]
    return rep


# -- sub-MILP extraction ----------------------------------------------------------------

def fix_and_extract(model: MilpModel, current: Solution | np.ndarray, free_vars: Iterable[int]) -> MilpModel:
    """Copy of ``model`` with every binary outside ``free_vars`` fixed to its current value."""
    x = encode(model, current) if isinstance(current, Solution) else np.asarray(current, dtype=float)
    free = np.fromiter(free_vars, dtype=np.int64)
    if free.size and (free.min() < 0 or free.max() >= model.num_binaries):
        raise ContractError("free_vars may only contain route-binary columns")
    fixed = np.ones(model.num_binaries, dtype=bool)
    fixed[free] = False
    lb, ub = model.lb.copy(), model.ub.copy()
    lb[: model.num_binaries][fixed] = x[: model.num_binaries][fixed]
    ub[: model.num_binaries][fixed] = x[: model.num_binaries][fixed]
    return MilpModel(model.instance, model.objective, model.A, model.sense, model.rhs, lb, ub,
                     model.integrality, model.row_kind, model.big_M, model.vehicles, model.n_arcs)


# -- LP text format ------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _expr(names: list[str], vals: Iterable[float], per_line: int = 6) -> str:
    parts = []
    for idx, (name, v) in enumerate(zip(names, vals)):
        sign = "-" if v < 0 else "+"
        term = f"{sign} {_fmt(abs(v))} {name}"
        if idx == 0 and sign == "+":
            term = f"{_fmt(v)} {name}"
        parts.append(term)
    lines = [" ".join(parts[s:s + per_line]) for s in range(0, len(parts), per_line)]
    return "\n   ".join(lines) if lines else "0 " + "x_dummy"


def lp_text(model: MilpModel) -> str:
    names = [model.column_name(c) for c in range(model.num_vars)]
    out = ["\\ multi-fleet ground handling routing model", "Minimize"]
    nz = np.flatnonzero(model.objective)
    obj = _expr([names[c] for c in nz], model.objective[nz]) if nz.size else f"0 {names[0]}" if names else "0"
    out.append(f" obj: {obj}")
    out.append("Subject To")
    A = model.A
    for r in range(model.num_rows):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        cols, vals = A.indices[lo:hi], A.data[lo:hi]
        out.append(f" r{r}_{model.row_kind[r]}: {_expr([names[c] for c in cols], vals)} "
                   f"{SENSE_SYMBOL[int(model.sense[r])]} {_fmt(model.rhs[r])}")
    out.append("Bounds")
    for c in range(model.num_vars):
        out.append(f" {_fmt(model.lb[c])} <= {names[c]} <= {_fmt(model.ub[c])}")
    out.append("Generals")
    ints = np.flatnonzero(model.integrality)
    for s in range(0, len(ints), 8):
        out.append(" " + " ".join(names[c] for c in ints[s:s + 8]))
    out.append("End")
    return "\n".join(out) + "\n"


def export_lp(model: MilpModel, path: str | Path) -> None:
    Path(path).write_text(lp_text(model))


@dataclass
class LpFile:
    objective: dict[str, float]
    rows: list[tuple[str, dict[str, float], str, float]]
    bounds: dict[str, tuple[float, float]]
    generals: list[str]


_SECTION = re.compile(r"^(Minimize|Subject To|Bounds|Generals|End)\s*$", re.IGNORECASE)


def _parse_terms(tokens: list[str]) -> dict[str, float]:
    terms: dict[str, float] = {}
    sign, coef = 1.0, None
    for tok in tokens:
        if tok in "+-":
            sign = -1.0 if tok == "-" else 1.0
            continue
        try:
            coef = float(tok)
            continue
        except ValueError:
            pass
        terms[tok] = terms.get(tok, 0.0) + sign * (1.0 if coef is None else coef)
        sign, coef = 1.0, None
    return terms


def read_lp(path_or_text: str | Path) -> LpFile:
    """Reader for the subset of the LP format written by :func:`export_lp`."""
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) or "\n" not in str(path_or_text) else str(path_or_text)
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("\\"):
            continue
        m = _SECTION.match(stripped)
        if m:
            current = m.group(1).lower()
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ValueError(f"LP text outside any section: {stripped[:40]!r}")
        sections[current].append(stripped)
    obj_tokens = " ".join(sections.get("minimize", [])).split()
    if obj_tokens and obj_tokens[0].endswith(":"):
        obj_tokens = obj_tokens[1:]
    objective = _parse_terms(obj_tokens)
    rows = []
    for tokens in _split_statements(sections.get("subject to", [])):
        name = tokens[0].rstrip(":")
        sense_pos = next(p for p, t in enumerate(tokens) if t in ("=", "<=", ">="))
        rows.append((name, _parse_terms(tokens[1:sense_pos]), tokens[sense_pos], float(tokens[sense_pos + 1])))
    bounds = {}
    for line in sections.get("bounds", []):
        lo, _, name, _, hi = line.split()
        bounds[name] = (float(lo), float(hi))
    generals = " ".join(sections.get("generals", [])).split()
    return LpFile(objective, rows, bounds, generals)


def _split_statements(lines: list[str]) -> list[list[str]]:
    out, cur = [], []
    for line in lines:
        tokens = line.split()
        if tokens and tokens[0].endswith(":") and cur:
            out.append(cur)
            cur = []
        cur.extend(tokens)
    if cur:
        out.append(cur)
    return out


def read_solution_values(path: str | Path) -> dict[str, float]:
    """Parse a ``name value`` per line solution file (blank lines and # comments ignored)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'name value'")
        try:
            values[parts[0]] = float(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: bad value {parts[1]!r}") from None
    return values


def assignment_from_values(model: MilpModel, values: Mapping[str, float]) -> np.ndarray:
    index = {model.column_name(c): c for c in range(model.num_vars)}
    x = np.zeros(model.num_vars)
    for name, v in values.items():
        if name not in index:
            raise ValueError(f"unknown column {name}")
        x[index[name]] = v
    return x


def write_solution_values(model: MilpModel, x: np.ndarray, path: str | Path) -> None:
    lines = [f"{model.column_name(c)} {_fmt(x[c])}" for c in range(model.num_vars)]
    Path(path).write_text("\n".join(lines) + "\n")


def product_form_holds(instance: Instance, model: MilpModel, x: np.ndarray, tol: float = FEAS_TOL) -> bool:
    """Direct check of x_ij (T_i + s_i + t_ij - T_j) <= 0 over the arcs covered by big-M rows."""
    n = instance.n
    s = instance.service_matrix
    for h, (fid, vid) in enumerate(model.vehicles):
        k = instance.fleet_index[fid]
        T = np.concatenate([[0.0], x[model.num_binaries + h * n: model.num_binaries + (h + 1) * n]])
        for i in range(0, n + 1):
            for j in range(1, n + 1):
                if i == j:
                    continue
                xv = x[h * model.n_arcs + model.arc_position(i, j)]
                if xv * (T[i] + s[k, i] + instance.travel[k, i, j] - T[j]) > tol:
                    return False
    return True
