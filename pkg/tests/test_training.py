import numpy as np
import pytest
from helpers import d1, random_state, scrambled

from aghlns.destroy import vehicle_columns, vehicles_for_degree
from aghlns.milp import build_model
from aghlns.nn import init_params
from aghlns.repair import MatheuristicRepair
from aghlns.solution import initial_solution, make_solution
from aghlns.training import (Demo, TrainConfig, collect_demos, dataset_loss, forward_train, load_demos,
                             save_demos, supervise_train)

CASE = scrambled(1) or scrambled(2)


def demos_for(samples=10, seed=0):
    inst, _, worse, _ = CASE
    model = build_model(inst)
    roll = collect_demos([inst], [model], [worse], [worse], samples, MatheuristicRepair(), 0.5,
                         np.random.default_rng(seed))
    return inst, model, worse, roll


def test_collects_best_improving_rollout():
    inst, model, worse, roll = demos_for()
    assert len(roll.objectives[0]) == 10
    assert len(roll.demos) == 1
    (demo,) = roll.demos
    assert demo.action.sum() == vehicles_for_degree(inst, 0.5)
    assert demo.meta["objective"] == min(o for o in roll.objectives[0] if o == o)
    assert demo.meta["objective"] < worse.objective


def test_single_sample():
    _, _, _, roll = demos_for(samples=1)
    assert len(roll.objectives[0]) == 1 and len(roll.demos) <= 1


def test_no_demo_at_optimum():
    inst = d1()
    opt = make_solution(inst, {(1, 1): (1, 2), (2, 1): (1, 2)})
    roll = collect_demos([inst], [build_model(inst)], [opt], [opt], 5, MatheuristicRepair(), 0.5,
                         np.random.default_rng(0))
    assert roll.demos == [] and roll.objectives == [[80.0] * 5]


def test_demo_json_and_labels(tmp_path):
    inst, model, worse, roll = demos_for()
    save_demos(roll.demos, tmp_path / "d.jsonl")
    (back,) = load_demos(tmp_path / "d.jsonl")
    assert np.array_equal(back.action, roll.demos[0].action) and back.meta == roll.demos[0].meta
    keys = [model.vehicles[h] for h in np.flatnonzero(back.action)]
    assert back.freed_columns(model) == vehicle_columns(model, keys)
    assert np.array_equal(back.state.variable_features, roll.demos[0].state.variable_features)


def test_supervised_loss_drops_on_separable_demos():
    rng = np.random.default_rng(0)
    state = random_state(rng, 4, 10, 4)
    demos = [Demo(state, np.array([1.0, 0.0, 1.0, 0.0]))] * 32
    params = init_params(0)
    start = dataset_loss(params, demos)
    for _ in range(10):
        params, stats = supervise_train(params, demos, 0.2, 16, rng)
    assert stats.batches == 2
    assert dataset_loss(params, demos) < 0.1 * start


def test_supervised_loss_decreases_on_real_demo():
    _, _, _, roll = demos_for()
    demos = roll.demos * 32
    params = init_params(0)
    rng = np.random.default_rng(0)
    losses = [dataset_loss(params, demos)]
    for _ in range(5):
        params, stats = supervise_train(params, demos, 0.05, 16, rng)
        losses.append(stats.loss_after)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_zero_learning_rate_keeps_params():
    _, _, _, roll = demos_for()
    params = init_params(0)
    after, stats = supervise_train(params, roll.demos, 0.0, 4, np.random.default_rng(0))
    assert all(np.array_equal(params[k], after[k]) for k in params)
    assert stats.loss_before == stats.loss_after


def test_batch_larger_than_demos():
    _, _, _, roll = demos_for()
    _, stats = supervise_train(init_params(0), roll.demos * 3, 1e-3, 100, np.random.default_rng(0))
    assert stats.batches == 1


def test_empty_demo_list():
    with pytest.raises(ValueError):
        supervise_train(init_params(0), [], 1e-3, 4, np.random.default_rng(0))


def test_forward_train_minimal_and_pure():
    inst, _, worse, _ = CASE
    before = (worse.by_vehicle, worse.objective)
    cfg = TrainConfig(epochs=1, lns_iterations=1, samples=3, validation_iterations=2)
    res = forward_train([inst], [worse], cfg, validation=([inst], [worse]))
    assert len(res.chains) == 1 and len(res.best.policies) == 1
    assert res.best_epoch == 0 and len(res.validation) == 1
    assert (worse.by_vehicle, worse.objective) == before
    assert res.history[0]["step"] == 1


def test_forward_train_chain_length_and_determinism():
    inst, _, worse, _ = CASE
    cfg = TrainConfig(epochs=2, lns_iterations=3, samples=3, lr=1e-2)
    a = forward_train([inst], [worse], cfg)
    b = forward_train([inst], [worse], cfg)
    assert len(a.chains) == 2 and all(len(c.policies) == 3 for c in a.chains)
    assert a.history == b.history
    assert np.array_equal(a.best.at(3)["f3.W2"], b.best.at(3)["f3.W2"])


def test_forward_train_without_instances():
    res = forward_train([], [], TrainConfig(epochs=2))
    assert len(res.best.policies) == 1 and res.history == []


def test_config_validation():
    with pytest.raises(ValueError):
        forward_train([], [], TrainConfig(samples=0))
    with pytest.raises(ValueError):
        forward_train([], [], TrainConfig(degree=1.0))
