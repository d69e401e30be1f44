"""Repair operators: insertion + local-search matheuristic, exhaustive oracle, external MILP solver."""
from __future__ import annotations

import itertools
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .instance import Instance
from .lns import RepairFailure
from .milp import (MilpModel, assignment_from_values, check_assignment, decode_routes, export_lp,
                   fix_and_extract, read_solution_values)
from .solution import (TIME_EPS, Infeasible, Solution, check_feasible, make_solution, propagate,
                       route_cost, tables)

VehicleKey = tuple[int, int]
SOLVER_ENV = "AGHLNS_SOLVER_CMD"
IMPROVE_EPS = 1e-9


class EncodingError(RuntimeError):
    """A model-feasible point decoded into an infeasible solution."""


# -- matheuristic -----------------------------------------------------------------------

class _Freedom:
    """Which arc columns of each vehicle the sub-problem may change."""

    def __init__(self, model: MilpModel, cols, current: Solution):
        E = model.n_arcs
        n = model.instance.n
        self.n1 = n + 1
        arr = np.fromiter((c for c in cols if c < model.num_binaries), dtype=np.int64)
        veh, pos = np.divmod(arr, E)
        counts = np.bincount(veh, minlength=len(model.vehicles))
        self.full = set(np.flatnonzero(counts == E).tolist())
        self.partial: dict[int, set[int]] = {}
        for h in np.flatnonzero((counts > 0) & (counts < E)).tolist():
            self.partial[h] = set(pos[veh == h].tolist())
        self.original: dict[int, set[tuple[int, int]]] = {}
        for h, key in enumerate(model.vehicles):
            visits = current.by_vehicle.get(key, ())
            path = (0, *visits, n + 1)
            self.original[h] = set(zip(path, path[1:]))

    def touched(self, h: int) -> bool:
        return h in self.full or h in self.partial

    def free(self, h: int, i: int, j: int) -> bool:
        if h in self.full:
            return True
        p = self.partial.get(h)
        if p is None:
            return False
        return (i * self.n1 + (j if j < i else j - 1)) in p

    def allowed(self, h: int, i: int, j: int) -> bool:
        return self.free(h, i, j) or (i, j) in self.original[h]


class _Workspace:
    def __init__(self, instance: Instance, model: MilpModel, current: Solution, cols):
        self.inst = instance
        self.tab = tables(instance)
        self.model = model
        self.n = instance.n
        self.end = instance.n + 1
        self.freedom = _Freedom(model, cols, current)
        self.keys = list(model.vehicles)
        self.kidx = [instance.fleet_index[fid] for fid, _ in self.keys]
        self.routes = [list(current.by_vehicle.get(key, ())) for key in self.keys]
        q = self.tab.q
        self.load = [sum(q[k][i] for i in r) for k, r in zip(self.kidx, self.routes)]
        self.by_fleet: dict[int, list[int]] = {}
        for h, k in enumerate(self.kidx):
            if self.freedom.touched(h):
                self.by_fleet.setdefault(k, []).append(h)
        self.T = None

    def schedule(self):
        return propagate(self.tab, [(k, r) for k, r in zip(self.kidx, self.routes) if r])

    def neighbours(self, h: int, idx: int) -> tuple[int, int]:
        """Nodes around insertion slot ``idx``."""
        r = self.routes[h]
        return (r[idx - 1] if idx > 0 else 0), (r[idx] if idx < len(r) else self.end)

    def around(self, h: int, idx: int) -> tuple[int, int]:
        """Predecessor and successor of the visit at ``idx``."""
        r = self.routes[h]
        return (r[idx - 1] if idx > 0 else 0), (r[idx + 1] if idx + 1 < len(r) else self.end)

    # -- destroy the freed part of each route ------------------------------------
    def strip(self) -> list[tuple[int, int]]:
        fr = self.freedom
        pool = []
        for h, r in enumerate(self.routes):
            if not fr.touched(h):
                continue
            idx = 0
            while idx < len(r):
                p = r[idx - 1] if idx > 0 else 0
                u = r[idx]
                s = r[idx + 1] if idx + 1 < len(r) else self.end
                if fr.free(h, p, u) and fr.free(h, u, s) and fr.allowed(h, p, s):
                    r.pop(idx)
                    self.load[h] -= self.tab.q[self.kidx[h]][u]
                    pool.append((self.kidx[h], u))
                else:
                    idx += 1
        return pool

    # -- cheapest feasible insertion -----------------------------------------------
    def _quick_ok(self, k: int, h: int, prev: int, i: int, nxt: int) -> bool:
        """Necessary timing condition given the current (monotone) earliest times."""
        tab, n, T = self.tab, self.n, self.T
        u = k * n + i - 1
        if prev == 0:
            arr = tab.travel[k][0][i]
        else:
            pu = k * n + prev - 1
            arr = T[pu] + tab.s[pu] + tab.travel[k][prev][i]
        ti = max(T[u], arr)
        if ti > tab.b[u] + TIME_EPS:
            return False
        if nxt != self.end:
            w = k * n + nxt - 1
            if max(T[w], ti + tab.s[u] + tab.travel[k][i][nxt]) > tab.b[w] + TIME_EPS:
                return False
        return True

    def insert(self, k: int, i: int) -> bool:
        d, fr, tab = self.tab.dist, self.freedom, self.tab
        qi = tab.q[k][i]
        cands = []
        for h in self.by_fleet.get(k, ()):
            if self.load[h] + qi > tab.cap[k]:
                continue
            r = self.routes[h]
            for idx in range(len(r) + 1):
                p, s = self.neighbours(h, idx)
                if not (fr.free(h, p, s) and fr.allowed(h, p, i) and fr.allowed(h, i, s)):
                    continue
                cands.append((d[p][i] + d[i][s] - d[p][s], h, -idx, p, s))
        cands.sort(key=lambda c: c[:3])
        for _, h, negidx, p, s in cands:
            if not self._quick_ok(k, h, p, i, s):
                continue
            self.routes[h].insert(-negidx, i)
            T, _ = self.schedule()
            if T is not None:
                self.T = T
                self.load[h] += qi
                return True
            self.routes[h].pop(-negidx)
        return False

    # -- local search ---------------------------------------------------------------
    def _try(self, changes) -> bool:
        """Apply route replacements; keep them if schedulable."""
        old = [(h, self.routes[h]) for h, _ in changes]
        for h, r in changes:
            self.routes[h] = r
        T, _ = self.schedule()
        if T is None:
            for h, r in old:
                self.routes[h] = r
            return False
        self.T = T
        return True

    def relocate_once(self) -> bool:
        d, fr, tab = self.tab.dist, self.freedom, self.tab
        for k, hs in self.by_fleet.items():
            for h in hs:
                r = self.routes[h]
                for idx, u in enumerate(r):
                    p, s = self.around(h, idx)
                    if not (fr.free(h, p, u) and fr.free(h, u, s) and fr.allowed(h, p, s)):
                        continue
                    gain = d[p][u] + d[u][s] - d[p][s]
                    qu = tab.q[k][u]
                    for h2 in hs:
                        if h2 != h and self.load[h2] + qu > tab.cap[k]:
                            continue
                        r2 = r[:idx] + r[idx + 1:] if h2 == h else self.routes[h2]
                        for pos in range(len(r2) + 1):
                            if h2 == h and pos == idx:
                                continue
                            x = r2[pos - 1] if pos > 0 else 0
                            y = r2[pos] if pos < len(r2) else self.end
                            if d[x][u] + d[u][y] - d[x][y] - gain >= -IMPROVE_EPS:
                                continue
                            if not (fr.free(h2, x, y) and fr.allowed(h2, x, u) and fr.allowed(h2, u, y)):
                                continue
                            new2 = r2[:pos] + [u] + r2[pos:]
                            changes = [(h, new2)] if h2 == h else [(h, r[:idx] + r[idx + 1:]), (h2, new2)]
                            if self._try(changes):
                                if h2 != h:
                                    self.load[h] -= qu
                                    self.load[h2] += qu
                                return True
        return False

    def exchange_once(self) -> bool:
        d, fr, tab = self.tab.dist, self.freedom, self.tab
        for k, hs in self.by_fleet.items():
            q, cap = tab.q[k], tab.cap[k]
            for a_pos, h1 in enumerate(hs):
                for h2 in hs[a_pos + 1:]:
                    r1, r2 = self.routes[h1], self.routes[h2]
                    for i1, u in enumerate(r1):
                        p1, s1 = self.around(h1, i1)
                        if not (fr.free(h1, p1, u) and fr.free(h1, u, s1)):
                            continue
                        for i2, w in enumerate(r2):
                            p2, s2 = self.around(h2, i2)
                            delta = (d[p1][w] + d[w][s1] + d[p2][u] + d[u][s2]
                                     - d[p1][u] - d[u][s1] - d[p2][w] - d[w][s2])
                            if delta >= -IMPROVE_EPS:
                                continue
                            if (self.load[h1] - q[u] + q[w] > cap) or (self.load[h2] - q[w] + q[u] > cap):
                                continue
                            if not (fr.free(h2, p2, w) and fr.free(h2, w, s2) and fr.allowed(h1, p1, w)
                                    and fr.allowed(h1, w, s1) and fr.allowed(h2, p2, u) and fr.allowed(h2, u, s2)):
                                continue
                            n1 = r1[:i1] + [w] + r1[i1 + 1:]
                            n2 = r2[:i2] + [u] + r2[i2 + 1:]
                            if self._try([(h1, n1), (h2, n2)]):
                                self.load[h1] += q[w] - q[u]
                                self.load[h2] += q[u] - q[w]
                                return True
        return False


@dataclass
class MatheuristicRepair:
    """Strip freed arcs, reinsert by cheapest feasible insertion, then relocate/exchange.

    Works at arc granularity: an arc whose column is not freed keeps its current
    value, so a route can only change where the freed columns allow it.  The
    returned solution is never worse than ``current``.  With ``time_limit`` 0
    only the greedy reinsertion runs.
    """

    max_moves: int = 500
    name = "matheuristic"

    def repair(self, instance: Instance, model: MilpModel, current: Solution,
               free_vars, time_limit: float) -> Solution:
        t0 = time.perf_counter()
        ws = _Workspace(instance, model, current, free_vars)
        pool = ws.strip()
        if pool:
            order = {k: pos for pos, k in enumerate(instance.fleet_index[f] for f in instance.fleet_construction_order())}
            tab = ws.tab
            pool.sort(key=lambda p: (order[p[0]], tab.a[p[0] * ws.n + p[1] - 1], p[1]))
        T, _ = ws.schedule()
        if T is None:
            raise RepairFailure("unrepairable", "stripped routes cannot be scheduled")
        ws.T = T
        for k, i in pool:
            if not ws.insert(k, i):
                raise RepairFailure("unrepairable", f"flight {i} fleet {instance.fleets[k].fleet_id} has no feasible slot")
        moves = 0
        while moves < self.max_moves and time.perf_counter() - t0 < time_limit:
            if ws.relocate_once() or ws.exchange_once():
                moves += 1
            else:
                break
        try:
            cand = make_solution(instance, dict(zip(ws.keys, ws.routes)))
        except Infeasible as exc:  # pragma: no cover - insertion keeps routes schedulable
            raise RepairFailure("unrepairable", str(exc)) from None
        return cand if cand.objective <= current.objective else current


def matheuristic_repair(instance: Instance, model: MilpModel, current: Solution,
                        free_vehicles, time_limit: float = 10.0, max_moves: int = 500) -> Solution:
    from .destroy import vehicle_columns
    return MatheuristicRepair(max_moves).repair(instance, model, current, vehicle_columns(model, free_vehicles), time_limit)


# -- exhaustive oracle ------------------------------------------------------------------

class GuardExceeded(ValueError):
    pass


def _ordered_splits(flights: list[int], vehicles: int):
    """All assignments of ``flights`` to ``vehicles`` labelled ordered routes."""
    for labels in itertools.product(range(vehicles), repeat=len(flights)):
        groups = [[f for f, l in zip(flights, labels) if l == v] for v in range(vehicles)]
        yield from itertools.product(*[itertools.permutations(g) for g in groups])


def exact_oracle_repair(instance: Instance, current: Solution, free_vehicles,
                        max_pairs: int = 8, max_vehicles: int = 3) -> Solution:
    """Cheapest schedulable re-routing of the freed vehicles, by full enumeration."""
    keys = instance.vehicle_keys()
    free = [k for k in keys if k in set(free_vehicles)]
    pairs = [(i, fid) for fid, v in free for i in current.route(fid, v)]
    if len(pairs) > max_pairs or len(free) > max_vehicles:
        raise GuardExceeded(f"{len(pairs)} pairs / {len(free)} vehicles exceed the oracle guard "
                            f"({max_pairs} / {max_vehicles})")
    tab = tables(instance)
    per_fleet = []
    for fid in instance.fleet_ids:
        vs = [key for key in free if key[0] == fid]
        if not vs:
            continue
        k = instance.fleet_index[fid]
        flights = sorted(i for i, f in pairs if f == fid)
        opts = []
        for orders in _ordered_splits(flights, len(vs)):
            if all(sum(tab.q[k][i] for i in o) <= tab.cap[k] for o in orders):
                opts.append({key: o for key, o in zip(vs, orders)})
        per_fleet.append(opts)
    base = dict(current.by_vehicle)
    combos = []
    for choice in itertools.product(*per_fleet):
        routes = dict(base)
        for part in choice:
            routes.update(part)
        cost = sum(route_cost(tab, routes.get(key, ())) for key in keys)
        combos.append((cost, len(combos), routes))
    combos.sort(key=lambda c: c[:2])
    for cost, _, routes in combos:
        T, _ = propagate(tab, [(instance.fleet_index[fid], routes.get((fid, v), ())) for fid, v in keys])
        if T is not None:
            return make_solution(instance, routes)
    raise RepairFailure("infeasible", "no schedulable assignment of the freed pairs")


class ExactOracleRepair:
    """Repair operator wrapper: frees whole vehicles only (partially freed ones stay fixed)."""

    name = "exact_oracle"

    def repair(self, instance, model, current, free_vars, time_limit):
        from .destroy import vehicles_of
        return exact_oracle_repair(instance, current, vehicles_of(model, free_vars))


# -- external MILP solver -------------------------------------------------------------------

@dataclass
class ExternalSolverRepair:
    """Hand the fixed sub-MILP to an external command through LP / "name value" files.

    ``command`` is a template with ``{input}``, ``{output}``, ``{timelimit}`` and
    ``{gap}`` placeholders; the ``AGHLNS_SOLVER_CMD`` environment variable is used
    when it is not given.  The solver signals infeasibility by writing a file
    whose first line is ``infeasible``.
    """

    command: str | None = None
    gap_tolerance: float = 0.1
    grace: float = 30.0
    name = "external"

    def template(self) -> str:
        cmd = self.command or os.environ.get(SOLVER_ENV)
        if not cmd:
            raise RepairFailure("solver_error", f"no solver command configured (set {SOLVER_ENV})")
        return cmd

    def repair(self, instance: Instance, model: MilpModel, current: Solution,
               free_vars, time_limit: float) -> Solution:
        sub = fix_and_extract(model, current, free_vars)
        with tempfile.TemporaryDirectory(prefix="aghlns-") as tmp:
            lp, out = Path(tmp, "sub.lp"), Path(tmp, "sub.sol")
            export_lp(sub, lp)
            cmd = self.template().format(input=shlex.quote(str(lp)), output=shlex.quote(str(out)),
                                         timelimit=time_limit, gap=self.gap_tolerance)
            try:
                proc = subprocess.run(cmd, shell=True, capture_output=True, text=True,
                                      timeout=time_limit + self.grace)
            except subprocess.TimeoutExpired:
                raise RepairFailure("timeout", cmd) from None
            if proc.returncode != 0:
                raise RepairFailure("solver_error", proc.stderr.strip()[-2000:])
            if not out.exists():
                raise RepairFailure("solver_error", "solver wrote no solution file")
            text = out.read_text()
            if text.strip().lower().startswith("infeasible"):
                raise RepairFailure("infeasible")
            try:
                x = assignment_from_values(sub, read_solution_values(out))
            except ValueError as exc:
                raise RepairFailure("parse_error", str(exc)) from None
        return decode_assignment(instance, sub, x, current)


def decode_assignment(instance: Instance, sub: MilpModel, x: np.ndarray, current: Solution) -> Solution:
    nb = sub.num_binaries
    frac = np.abs(x[:nb] - np.round(x[:nb])) > 1e-6
    if frac.any():
        c = int(np.flatnonzero(frac)[0])
        raise RepairFailure("parse_error", f"non-integral binary {sub.column_name(c)} = {x[c]}")
    x = x.copy()
    x[:nb] = np.round(x[:nb])
    report = check_assignment(sub, x, tol=1e-5)
    if report:
        raise RepairFailure("infeasible", f"solver point violates {len(report)} rows/bounds")
    routes = decode_routes(sub, x)
    try:
        sol = make_solution(instance, routes)
    except Infeasible as exc:
        raise EncodingError(f"model-feasible point has no schedule: {exc}") from None
    problems = check_feasible(instance, sol)
    if problems:
        raise EncodingError(f"decoded solution infeasible: {problems[0]}")
    return sol
