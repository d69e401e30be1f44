"""Hand-built instances and a standalone brute-force optimum for tests."""
from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

from aghlns.instance import Fleet, Flight, Instance, PrecedenceRule


def d1() -> Instance:
    """Two flights on a line, fleets 1 before 2, one vehicle each."""
    flights = (
        Flight(1, (10.0, 0.0), 0.0, 60.0, "T1", {1: 10, 2: 10}),
        Flight(2, (20.0, 0.0), 0.0, 60.0, "T1", {1: 10, 2: 10}),
    )
    fleets = tuple(
        Fleet(k, 1, 100, 1.0, {1: 5.0, 2: 5.0}, {1: (0.0, 1000.0), 2: (0.0, 1000.0)})
        for k in (1, 2)
    )
    return Instance(flights, fleets, (PrecedenceRule("T1", ((1, 2),)),), (0.0, 0.0), 0)


def tiny_instance(seed: int, n: int | None = None, vehicles: int = 1) -> Instance:
    """Random instance with two fleets and up to four flights."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5)) if n is None else n
    flights = []
    for i in range(1, n + 1):
        pos = (float(rng.integers(-50, 51)), float(rng.integers(-50, 51)))
        kind = "T1" if rng.random() < 0.7 else "T2"
        flights.append(Flight(i, pos, 0.0, 200.0, kind, {1: int(rng.integers(5, 16)), 2: int(rng.integers(5, 16))}))
    fleets = []
    for k in (1, 2):
        services = {i: float(rng.integers(2, 7)) for i in range(1, n + 1)}
        windows = {}
        for i in range(1, n + 1):
            lo = float(rng.integers(0, 60))
            windows[i] = (lo, lo + float(rng.integers(60, 200)))
        cap = 15 * n if vehicles == 1 else int(sum(fl.demand[k] for fl in flights) * 0.7) + 15
        fleets.append(Fleet(k, vehicles, cap, float(rng.integers(1, 4)), services, windows))
    rules = (PrecedenceRule("T1", ((1, 2),)), PrecedenceRule("T2", ()))
    return Instance(tuple(flights), tuple(fleets), rules, (0.0, 0.0), seed)


def lp_schedule_feasible(inst: Instance, routes: dict) -> bool:
    """Feasibility of start times for fixed routes, decided by an LP solver."""
    n = inst.n
    ids = inst.fleet_ids
    col = {(i, k): idx for idx, (k, i) in enumerate(itertools.product(range(len(ids)), range(1, n + 1)))}
    a, b = inst.window_matrix
    s = inst.service_matrix
    A, rhs = [], []

    def row(terms, bound):
        r = np.zeros(len(col))
        for c, v in terms:
            r[c] += v
        A.append(r)
        rhs.append(bound)

    for (fid, _), visits in routes.items():
        k = inst.fleet_index[fid]
        prev = 0
        for i in visits:
            if prev == 0:
                row([(col[(i, k)], -1.0)], -inst.travel[k, 0, i])
            else:
                row([(col[(prev, k)], 1.0), (col[(i, k)], -1.0)], -s[k, prev] - inst.travel[k, prev, i])
            prev = i
    for i, k1, k2 in inst.precedence_pairs:
        row([(col[(i, k1)], 1.0), (col[(i, k2)], -1.0)], -s[k1, i])
    bounds = [(a[k, i], b[k, i]) for (i, k) in col]
    res = linprog(np.zeros(len(col)), A_ub=np.array(A) if A else None, b_ub=rhs if A else None,
                  bounds=bounds, method="highs")
    return res.status == 0


def _route_cost(d, visits, end):
    if not visits:
        return 0.0
    total = d[0][visits[0]]
    for x, y in zip(visits, visits[1:]):
        total += d[x][y]
    return total + d[visits[-1]][end]


def _vehicle_splits(flights, vehicles, cap, demand):
    """Every way to spread ``flights`` over ``vehicles`` ordered routes (vehicles are labelled)."""
    for labels in itertools.product(range(vehicles), repeat=len(flights)):
        groups = [[f for f, l in zip(flights, labels) if l == v] for v in range(vehicles)]
        if any(sum(demand[f] for f in g) > cap for g in groups):
            continue
        for orders in itertools.product(*[itertools.permutations(g) for g in groups]):
            yield orders


def brute_force(inst: Instance):
    """Global optimum objective and routes by full enumeration (tiny instances only)."""
    d = inst.distance.tolist()
    end = inst.n + 1
    flights = list(range(1, inst.n + 1))
    per_fleet = []
    for f in inst.fleets:
        k = inst.fleet_index[f.fleet_id]
        opts = [tuple(orders) for orders in
                _vehicle_splits(flights, f.vehicle_count, f.capacity, inst.demand_matrix[k].tolist())]
        per_fleet.append(opts)
    combos = []
    for choice in itertools.product(*per_fleet):
        cost = 0.0
        for f, orders in zip(inst.fleets, choice):
            for visits in orders:
                cost += _route_cost(d, list(visits), end)
        combos.append((cost, choice))
    combos.sort(key=lambda c: c[0])
    for cost, choice in combos:
        routes = {(f.fleet_id, v + 1): tuple(orders[v]) for f, orders in zip(inst.fleets, choice)
                  for v in range(f.vehicle_count)}
        if lp_schedule_feasible(inst, routes):
            return cost, routes
    return None, None


def random_state(rng: np.random.Generator, n_cons: int = 2, n_vars: int = 5, n_vehicles: int = 2,
                 density: float = 0.6):
    """Random bipartite state; every variable but the last few belongs to some vehicle."""
    from aghlns.features import BipartiteState
    mask = rng.random((n_cons, n_vars)) < density
    mask[rng.integers(n_cons), :] = True
    rows, cols = np.nonzero(mask)
    coef = rng.uniform(-1, 1, size=rows.size)
    pooled = max(n_vehicles, n_vars - 1)
    membership = -np.ones(n_vars, dtype=np.int64)
    membership[:pooled] = np.concatenate([np.arange(n_vehicles), rng.integers(0, n_vehicles, pooled - n_vehicles)])
    cf = np.column_stack([rng.uniform(-1, 1, (n_cons, 2)), np.eye(2)[rng.integers(0, 2, n_cons)]])
    is_int = membership >= 0
    vf = np.column_stack([is_int, ~is_int, rng.uniform(0, 1, (n_vars, 3))]).astype(float)
    used = rng.integers(0, 2, n_vehicles)
    wf = np.column_stack([used, 1 - used, rng.uniform(0, 1, n_vehicles) * used])
    return BipartiteState(cf, vf, rows, cols, coef, wf.astype(float), membership,
                          tuple((1, v + 1) for v in range(n_vehicles)))


def random_route_solution(inst: Instance, rng: np.random.Generator, corrupt: float = 0.1):
    """Random routes with start times; feasible or not, but always structurally encodable.

    Schedulable routes get earliest start times; otherwise times are chained along
    each route only (windows and precedence may then fail).  With probability
    ``corrupt`` one flight is dropped or duplicated in some fleet.
    """
    from aghlns.solution import Infeasible, Route, Solution, evaluate, schedule_earliest
    routes = {}
    for f in inst.fleets:
        flights = list(rng.permutation(np.arange(1, inst.n + 1)))
        if inst.n and rng.random() < corrupt:
            if rng.random() < 0.5:
                flights.pop()
            else:
                flights.append(flights[0])
                if f.vehicle_count == 1:
                    flights.pop(0)
                    flights.append(flights[-1])
        labels = rng.integers(0, f.vehicle_count, size=len(flights))
        for v in range(f.vehicle_count):
            visits = [int(x) for x, l in zip(flights, labels) if l == v]
            if len(set(visits)) < len(visits):
                seen, dedup = set(), []
                for x in visits:
                    if x not in seen:
                        dedup.append(x)
                        seen.add(x)
                visits = dedup
            routes[(f.fleet_id, v + 1)] = tuple(visits)
    full = tuple(Route(fid, v, routes.get((fid, v), ())) for fid, v in inst.vehicle_keys())
    try:
        times = schedule_earliest(inst, full)
    except Infeasible:
        a, _ = inst.window_matrix
        s = inst.service_matrix
        times = {}
        for r in full:
            k = inst.fleet_index[r.fleet_id]
            prev, clock = 0, 0.0
            for i in r.visits:
                t = max(a[k, i], clock + inst.travel[k, prev, i])
                times[(i, r.fleet_id)] = t
                prev, clock = i, t + s[k, i]
        for i in range(1, inst.n + 1):
            for f in inst.fleets:
                times.setdefault((i, f.fleet_id), float(a[inst.fleet_index[f.fleet_id], i]))
    sol = Solution(full, times, 0.0)
    return Solution(full, times, evaluate(inst, sol))


def permute_state(state, rng: np.random.Generator):
    """Relabel constraints, variables and vehicles; returns (state, vehicle permutation)."""
    from aghlns.features import BipartiteState
    pc = rng.permutation(state.num_constraints)
    pv = rng.permutation(state.num_variables)
    pw = rng.permutation(state.num_vehicles)
    inv_c, inv_v, inv_w = np.argsort(pc), np.argsort(pv), np.argsort(pw)
    membership = state.membership[pv]
    membership = np.where(membership >= 0, inv_w[np.maximum(membership, 0)], -1)
    order = rng.permutation(state.edge_rows.size)
    out = BipartiteState(state.constraint_features[pc], state.variable_features[pv],
                         inv_c[state.edge_rows][order], inv_v[state.edge_cols][order], state.edge_coef[order],
                         state.vehicle_features[pw], membership,
                         tuple(state.vehicle_keys[i] for i in pw) if state.vehicle_keys else ())
    return out, pw


def scrambled(seed):
    from aghlns.solution import Infeasible, check_feasible, make_solution
    """(instance, optimum, worse feasible solution differing on one vehicle)."""
    inst = tiny_instance(seed, n=3)
    opt, routes = brute_force(inst)
    if routes is None:
        return None
    for key, visits in routes.items():
        for perm in itertools.permutations(visits):
            if perm == tuple(visits):
                continue
            try:
                worse = make_solution(inst, {**routes, key: perm})
            except Infeasible:
                continue
            if worse.objective > opt and not check_feasible(inst, worse):
                return inst, make_solution(inst, routes), worse, key
    return None
