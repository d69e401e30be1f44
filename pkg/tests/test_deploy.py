import numpy as np
import pytest
from scipy.stats import chisquare
from helpers import d1

from aghlns.deploy import PolicyDestroy, il_sample, il_sample_a, il_sample_d, softmax_weights
from aghlns.destroy import vehicles_of
from aghlns.lns import LnsConfig, SearchState, run_lns
from aghlns.milp import build_model
from aghlns.nn import PolicyChain, init_params
from aghlns.repair import MatheuristicRepair
from aghlns.solution import check_feasible, make_solution


def test_softmax_weights():
    w = softmax_weights(np.array([0.0, np.log(3.0)]))
    assert np.allclose(w, [0.25, 0.75])


def test_equal_scores_sample_uniformly():
    rng = np.random.default_rng(0)
    counts = np.zeros(6)
    for _ in range(6000):
        counts[il_sample(np.full(6, 0.3), 0.5, rng)] += 1
    assert counts.sum() == 18000
    assert chisquare(counts).pvalue > 0.01


def test_selection_odds_follow_score_gap():
    rng = np.random.default_rng(1)
    picks = np.zeros(2)
    for _ in range(20_000):
        picks[il_sample(np.array([0.9, 0.1]), 0.5, rng)] += 1
    assert picks[0] / picks[1] == pytest.approx(np.exp(0.8), rel=0.05)


def test_full_degree_takes_everything():
    assert il_sample(np.array([0.2, 0.9, 0.4]), 1.0, np.random.default_rng(0)) == [0, 1, 2]


def test_sample_a_extremes():
    rng = np.random.default_rng(2)
    assert il_sample_a(np.ones(5), rng) == [0, 1, 2, 3, 4]
    assert il_sample_a(np.array([0.0, 0.0, 0.0]), rng) == [0]
    assert il_sample_a(np.array([0.0, 0.0, 1e-12]), rng, max_tries=3) == [2]


def test_sample_a_mean_size():
    rng = np.random.default_rng(3)
    sizes = [len(il_sample_a(np.full(10, 0.5), rng)) for _ in range(5000)]
    assert np.mean(sizes) == pytest.approx(5.0, abs=0.1)


def test_sample_d_is_disjoint_from_previous():
    rng = np.random.default_rng(4)
    P = rng.uniform(size=9)
    prev = []
    for _ in range(100):
        cur = il_sample_d(P, 0.4, prev, rng)
        assert len(cur) == 4 and not set(cur) & set(prev)
        prev = cur


def test_sample_d_pool_clamp():
    rng = np.random.default_rng(5)
    assert il_sample_d(np.full(3, 0.5), 0.9, [0, 2], rng) == [1]
    assert il_sample_d(np.full(3, 0.5), 0.9, [0, 1, 2], rng) == [0, 1, 2]


def test_policy_destroy_modes():
    inst = d1()
    model = build_model(inst)
    sol = make_solution(inst, {(1, 1): (1, 2), (2, 1): (1, 2)})
    chain = PolicyChain([init_params(0)])
    for mode in ("sample", "sampleA", "sampleD"):
        op = PolicyDestroy(chain, mode)
        state = SearchState(inst, model, sol, sol, 0.5, np.random.default_rng(0), 1, frozenset())
        cols = op.select(state)
        assert cols and vehicles_of(model, cols)
        assert op.name == f"IL-{mode}"
    with pytest.raises(ValueError):
        PolicyDestroy(chain, "greedy")


def test_policy_inside_lns():
    inst = d1()
    sol = make_solution(inst, {(1, 1): (2, 1), (2, 1): (2, 1)})
    best, trace = run_lns(inst, sol, PolicyDestroy(PolicyChain([init_params(0), init_params(1)]), "sampleD"),
                          MatheuristicRepair(), LnsConfig(iterations=4, destroy_degree=0.5))
    assert not check_feasible(inst, best) and len(trace.records) == 4
