import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from helpers import d1, lp_schedule_feasible, random_route_solution, tiny_instance

from aghlns.instance import Fleet, Flight, GeneratorConfig, Instance, PrecedenceRule, generate
from aghlns.milp import build_model, check_assignment, encode
from aghlns.solution import (ConstructionFailed, PrecedenceCycle, Route, Solution, WindowExceeded,
                             check_feasible, evaluate, initial_solution, load_solution, make_solution,
                             save_solution, schedule_earliest)

D1_OPT = {(1, 1): (1, 2), (2, 1): (1, 2)}


def test_d1_optimum_cost_and_schedule():
    inst = d1()
    sol = make_solution(inst, D1_OPT)
    assert sol.objective == 80.0
    assert evaluate(inst, sol) == 80.0
    # vehicles leave the depot at 0; depot->f1 takes 10
    assert sol.start_times == {(1, 1): 10.0, (2, 1): 25.0, (1, 2): 15.0, (2, 2): 30.0}
    assert check_feasible(inst, sol) == []


def test_d1_schedule_matches_lp_oracle():
    inst = d1()
    times = schedule_earliest(inst, D1_OPT)
    assert lp_schedule_feasible(inst, D1_OPT)
    # pushing the first service earlier than travel allows is infeasible
    assert times[(1, 1)] == inst.travel[0, 0, 1]


def test_reversed_route_same_cost_on_a_line():
    inst = d1()
    sol = make_solution(inst, {(1, 1): (2, 1), (2, 1): (1, 2)})
    per_fleet = [sum(inst.distance[a, b] for a, b in zip((0, *r.visits), (*r.visits, 3))) for r in sol.routes]
    assert per_fleet[0] == 40.0
    assert sol.objective == 80.0


def test_empty_instance():
    inst = generate(GeneratorConfig(flights=0, ops=2), 0)
    sol = initial_solution(inst)
    assert sol.objective == 0.0
    assert all(not r.visits for r in sol.routes)
    assert check_feasible(inst, sol) == []


def _single(a):
    fl = (Flight(1, (30.0, 40.0), 0.0, 60.0, "T1", {1: 1}),)
    fleet = (Fleet(1, 1, 10, 1.0, {1: 3.0}, {1: (a, 500.0)}),)
    return Instance(fl, fleet, (PrecedenceRule("T1", ()),))


@pytest.mark.parametrize("a,expected", [(50.0, 50.0), (10.0, 50.0), (80.0, 80.0)])
def test_single_flight_start_is_max_of_window_and_travel(a, expected):
    inst = _single(a)
    assert schedule_earliest(inst, {(1, 1): (1,)})[(1, 1)] == expected


def _crossing():
    flights = tuple(Flight(i, (10.0 * i, 0.0), 0.0, 60.0, t, {1: 1, 2: 1}) for i, t in ((1, "T1"), (2, "T2")))
    fleets = tuple(Fleet(k, 1, 10, 1.0, {1: 1.0, 2: 1.0}, {1: (0.0, 999.0), 2: (0.0, 999.0)}) for k in (1, 2))
    rules = (PrecedenceRule("T1", ((1, 2),)), PrecedenceRule("T2", ((2, 1),)))
    return Instance(flights, fleets, rules)


def test_precedence_cycle_detected():
    inst = _crossing()
    # fleet 1 serves f2 then f1, fleet 2 serves f1 then f2: 1@f1 < 2@f1 < 2@f2 < 1@f2 < 1@f1
    with pytest.raises(PrecedenceCycle):
        schedule_earliest(inst, {(1, 1): (2, 1), (2, 1): (1, 2)})


def test_window_exceeded_names_pair():
    inst = _single(0.0)
    tight = Instance(inst.flights, (Fleet(1, 1, 10, 1.0, {1: 3.0}, {1: (0.0, 20.0)}),), inst.precedence)
    with pytest.raises(WindowExceeded) as err:
        schedule_earliest(tight, {(1, 1): (1,)})
    assert (err.value.flight, err.value.fleet_id) == (1, 1)


def test_capacity_violation_reported():
    inst = d1()
    sol = make_solution(inst, D1_OPT)
    small = Instance(inst.flights, (Fleet(1, 1, 15, 1.0, {1: 5.0, 2: 5.0}, {1: (0.0, 1000.0), 2: (0.0, 1000.0)}),
                                    inst.fleets[1]), inst.precedence)
    found = [v for v in check_feasible(small, sol) if v.kind == "capacity"]
    assert found and "fleet 1 vehicle 1" in found[0].detail


def test_precedence_violation_reported():
    inst = d1()
    sol = make_solution(inst, D1_OPT)
    times = dict(sol.start_times)
    times[(1, 2)] = 12.0  # boarding-like op starts before fleet 1 finishes at 15
    bad = Solution(sol.routes, times, sol.objective)
    found = [v for v in check_feasible(inst, bad) if v.kind == "precedence"]
    assert found and "flight 1" in found[0].detail


def test_initial_solution_d1():
    sol = initial_solution(d1())
    assert sol.route(1, 1) == (1, 2)
    assert sol.objective == 80.0


def test_initial_solution_opens_second_vehicle_on_capacity():
    inst = d1()
    fleets = tuple(Fleet(k, 2, 15, 1.0, {1: 5.0, 2: 5.0}, {1: (0.0, 1000.0), 2: (0.0, 1000.0)}) for k in (1, 2))
    inst = Instance(inst.flights, fleets, inst.precedence)
    sol = initial_solution(inst)
    assert sum(1 for r in sol.routes if r.fleet_id == 1 and r.visits) == 2
    assert check_feasible(inst, sol) == []


def test_initial_solution_surfaces_failure():
    inst = d1()
    fleets = tuple(Fleet(k, 1, 15, 1.0, {1: 5.0, 2: 5.0}, {1: (0.0, 1000.0), 2: (0.0, 1000.0)}) for k in (1, 2))
    with pytest.raises(ConstructionFailed):
        initial_solution(Instance(inst.flights, fleets, inst.precedence))


@pytest.mark.parametrize("seed", range(10))
def test_initial_solutions_feasible_on_generated(seed):
    inst = generate(GeneratorConfig(flights=8, ops=4), seed)
    try:
        sol = initial_solution(inst)
    except ConstructionFailed:
        pytest.skip("greedy construction failed on this draw")
    assert check_feasible(inst, sol) == []


@given(st.integers(0, 500))
def test_earliest_start_is_minimal(seed):
    rng = np.random.default_rng(seed)
    inst = tiny_instance(seed, vehicles=2)
    sol = random_route_solution(inst, rng, corrupt=0.0)
    if check_feasible(inst, sol):
        return
    for key, t in sol.start_times.items():
        times = dict(sol.start_times)
        times[key] = t - 1e-3
        assert check_feasible(inst, Solution(sol.routes, times, sol.objective)), key


@given(st.integers(0, 500))
def test_schedule_satisfies_model_rows(seed):
    inst = tiny_instance(seed, vehicles=2)
    sol = random_route_solution(inst, np.random.default_rng(seed), corrupt=0.0)
    if check_feasible(inst, sol):
        return
    model = build_model(inst)
    x = encode(model, sol)
    rep = check_assignment(model, x)
    assert not rep.rows and not rep.bounds


@given(st.integers(0, 500))
def test_earliest_schedule_feasibility_agrees_with_lp(seed):
    inst = tiny_instance(seed, vehicles=2)
    sol = random_route_solution(inst, np.random.default_rng(seed), corrupt=0.0)
    kinds = {v.kind for v in check_feasible(inst, sol)}
    time_ok = not (kinds & {"time", "window", "precedence"})
    assert time_ok == lp_schedule_feasible(inst, sol.by_vehicle)


def test_evaluate_invariant_to_route_order():
    inst = generate(GeneratorConfig(flights=10, ops=3), 1)
    sol = initial_solution(inst)
    shuffled = Solution(tuple(reversed(sol.routes)), sol.start_times, sol.objective)
    assert math.isclose(evaluate(inst, shuffled), evaluate(inst, sol), rel_tol=1e-12)


def test_solution_file_round_trip(tmp_path):
    inst = generate(GeneratorConfig(flights=6, ops=3), 2)
    sol = initial_solution(inst)
    save_solution(sol, tmp_path / "s.json")
    back = load_solution(tmp_path / "s.json")
    assert back.routes == sol.routes
    assert back.start_times == sol.start_times
    assert back.objective == sol.objective


def test_unknown_vehicle_rejected():
    with pytest.raises(KeyError):
        make_solution(d1(), {(1, 2): (1, 2)})


def test_route_type_defaults():
    assert Route(1, 1).visits == ()
