import shlex
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from helpers import brute_force, d1, scrambled, tiny_instance

from aghlns.destroy import vehicle_columns
from aghlns.lns import RepairFailure
from aghlns.milp import build_model, encode, write_solution_values
from aghlns.repair import (SOLVER_ENV, ExactOracleRepair, ExternalSolverRepair, GuardExceeded, MatheuristicRepair,
                           exact_oracle_repair, matheuristic_repair)
from aghlns.solution import ConstructionFailed, check_feasible, initial_solution, make_solution

MOCK = Path(__file__).with_name("mock_solver.py")


def mock_cmd(mode, answer=None):
    parts = [sys.executable, str(MOCK), mode, "{input}", "{output}"]
    cmd = " ".join(shlex.quote(p) if "{" not in p else p for p in parts)
    return cmd + (f" {shlex.quote(str(answer))}" if answer else "")


BAD = [s for s in range(20) if scrambled(s)][:4]


@pytest.mark.parametrize("seed", BAD)
def test_matheuristic_fixes_scrambled_route(seed):
    inst, opt, worse, key = scrambled(seed)
    out = matheuristic_repair(inst, build_model(inst), worse, [key])
    assert not check_feasible(inst, out)
    assert out.objective < worse.objective
    assert out.objective >= opt.objective


def test_matheuristic_on_d1_optimum_is_stable():
    inst = d1()
    model = build_model(inst)
    opt = make_solution(inst, {(1, 1): (1, 2), (2, 1): (1, 2)})
    out = matheuristic_repair(inst, model, opt, [(1, 1), (2, 1)])
    assert out.objective == opt.objective == 80.0


def test_zero_budget_still_greedy():
    inst = tiny_instance(2, n=4, vehicles=2)
    init = initial_solution(inst)
    out = matheuristic_repair(inst, build_model(inst), init, inst.vehicle_keys(), time_limit=0.0)
    assert not check_feasible(inst, out) and out.objective <= init.objective


@settings(max_examples=30)
@given(st.integers(0, 40), st.integers(0, 1000), st.floats(0.1, 0.9))
def test_fixed_vehicles_untouched_and_never_worse(inst_seed, seed, frac):
    inst = tiny_instance(inst_seed, vehicles=2)
    try:
        init = initial_solution(inst)
    except ConstructionFailed:
        return
    rng = np.random.default_rng(seed)
    keys = inst.vehicle_keys()
    free = [k for k in keys if rng.random() < frac]
    out = matheuristic_repair(inst, build_model(inst), init, free)
    assert not check_feasible(inst, out)
    assert out.objective <= init.objective
    for k in keys:
        if k not in free:
            assert out.route(*k) == init.route(*k)


def test_arc_level_freedom():
    """With only some arcs of a vehicle freed, its other arcs keep their values."""
    inst = tiny_instance(2, n=4, vehicles=2)
    init = initial_solution(inst)
    model = build_model(inst)
    x0 = encode(model, init)
    rng = np.random.default_rng(0)
    free = frozenset(rng.choice(model.num_binaries, size=model.num_binaries // 3, replace=False).tolist())
    out = MatheuristicRepair().repair(inst, model, init, free, 1.0)
    x1 = encode(model, out)
    fixed = np.array([c for c in range(model.num_binaries) if c not in free])
    assert np.array_equal(x0[fixed], x1[fixed])


def test_unrepairable_raises():
    inst = d1()
    # capacity below one demand: no insertion can place the stripped flights
    from dataclasses import replace
    tight = replace(inst, fleets=(inst.fleets[0], replace(inst.fleets[1], capacity=15)))
    cur = make_solution(inst, {(1, 1): (1, 2), (2, 1): (1, 2)})
    with pytest.raises(RepairFailure) as err:
        matheuristic_repair(tight, build_model(tight), cur, [(2, 1)])
    assert err.value.reason == "unrepairable"


def test_oracle_on_d1():
    inst = d1()
    cur = make_solution(inst, {(1, 1): (2, 1), (2, 1): (2, 1)})
    out = exact_oracle_repair(inst, cur, inst.vehicle_keys())
    assert out.objective == 80.0 and not check_feasible(inst, out)


def test_oracle_single_pair():
    inst = d1()
    cur = make_solution(inst, {(1, 1): (1, 2), (2, 1): (1, 2)})
    out = exact_oracle_repair(inst, cur, [(1, 1)])
    assert out.route(2, 1) == (1, 2)


def test_oracle_guard():
    inst = tiny_instance(3, n=5, vehicles=1)
    with pytest.raises(GuardExceeded):
        exact_oracle_repair(inst, _fake_routes(inst), inst.vehicle_keys(), max_pairs=9)


def _fake_routes(inst):
    from aghlns.solution import Route, Solution
    routes = tuple(Route(fid, v, tuple(range(1, inst.n + 1))) for fid, v in inst.vehicle_keys())
    return Solution(routes, {}, 0.0)


@pytest.mark.parametrize("seed", [1, 2, 3, 6])
def test_oracle_matches_brute_force(seed):
    inst = tiny_instance(seed)
    opt, _ = brute_force(inst)
    try:
        init = initial_solution(inst)
    except ConstructionFailed:
        pytest.skip("no constructive start")
    assert exact_oracle_repair(inst, init, inst.vehicle_keys()).objective == opt


def test_oracle_wrapper_ignores_partial_vehicles():
    inst = d1()
    model = build_model(inst)
    cur = make_solution(inst, {(1, 1): (2, 1), (2, 1): (2, 1)})
    partial = frozenset(model.vehicle_columns(1, 1)[:5].tolist())
    assert ExactOracleRepair().repair(inst, model, cur, partial, 1.0).by_vehicle == cur.by_vehicle


# -- external adapter ---------------------------------------------------------------------

@pytest.fixture
def scrambled_case():
    return scrambled(BAD[0])


def test_external_round_trip(tmp_path, scrambled_case):
    inst, opt, worse, key = scrambled_case
    model = build_model(inst)
    answer = tmp_path / "answer.sol"
    write_solution_values(model, encode(model, opt), answer)
    rep = ExternalSolverRepair(mock_cmd("answer", answer))
    out = rep.repair(inst, model, worse, vehicle_columns(model, [key]), 5.0)
    assert out.by_vehicle == opt.by_vehicle
    assert out.objective == opt.objective


def test_external_respects_fixings(tmp_path, scrambled_case):
    inst, opt, worse, key = scrambled_case
    model = build_model(inst)
    answer = tmp_path / "answer.sol"
    write_solution_values(model, encode(model, opt), answer)
    others = [k for k in inst.vehicle_keys() if k != key]
    with pytest.raises(RepairFailure) as err:
        ExternalSolverRepair(mock_cmd("answer", answer)).repair(inst, model, worse, vehicle_columns(model, others), 5)
    assert err.value.reason == "infeasible"


@pytest.mark.parametrize("mode,reason", [("fractional", "parse_error"), ("fail", "solver_error"),
                                         ("silent", "solver_error")])
def test_external_failures(mode, reason):
    inst = d1()
    model = build_model(inst)
    cur = make_solution(inst, {(1, 1): (1, 2), (2, 1): (1, 2)})
    with pytest.raises(RepairFailure) as err:
        ExternalSolverRepair(mock_cmd(mode)).repair(inst, model, cur, vehicle_columns(model, [(1, 1)]), 5)
    assert err.value.reason == reason


def test_external_without_command(monkeypatch):
    monkeypatch.delenv(SOLVER_ENV, raising=False)
    inst = d1()
    model = build_model(inst)
    cur = make_solution(inst, {(1, 1): (1, 2), (2, 1): (1, 2)})
    with pytest.raises(RepairFailure) as err:
        ExternalSolverRepair().repair(inst, model, cur, frozenset(), 5)
    assert err.value.reason == "solver_error"


def test_external_env_fallback(monkeypatch, tmp_path):
    inst = d1()
    model = build_model(inst)
    cur = make_solution(inst, {(1, 1): (1, 2), (2, 1): (1, 2)})
    answer = tmp_path / "a.sol"
    write_solution_values(model, encode(model, cur), answer)
    monkeypatch.setenv(SOLVER_ENV, mock_cmd("answer", answer))
    out = ExternalSolverRepair().repair(inst, model, cur, vehicle_columns(model, [(1, 1)]), 5)
    assert out.objective == 80.0


def test_external_highs_backend():
    """The bundled scipy/HiGHS script solves the freed sub-problem to optimality."""
    script = Path(__file__).resolve().parents[1] / "scripts" / "highs_solver.py"
    inst, opt, worse, key = scrambled(BAD[0])
    model = build_model(inst)
    cmd = f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{input}} {{output}} {{timelimit}} {{gap}}"
    out = ExternalSolverRepair(cmd, gap_tolerance=0.0).repair(inst, model, worse, vehicle_columns(model, [key]), 30)
    assert not check_feasible(inst, out)
    assert out.objective < worse.objective and out.objective >= opt.objective - 1e-9
