"""Imitation learning of the destroy policy from best-of-n Vehicle-random rollouts."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deploy import PolicyDestroy, il_sample
from .destroy import pick_random_vehicles, vehicle_columns, vehicles_for_degree
from .features import BipartiteState, featurize
from .instance import Instance
from .lns import LnsConfig, RepairFailure, accept, run_lns
from .milp import MilpModel, build_model
from .nn import Params, PolicyChain, backward, bce_loss, forward, init_params, sgd_step, zeros_like
from .repair import MatheuristicRepair
from .solution import Solution

log = logging.getLogger(__name__)


@dataclass
class Demo:
    state: BipartiteState
    action: np.ndarray  # 0/1 per vehicle node
    meta: dict = field(default_factory=dict)

    def freed_columns(self, model: MilpModel) -> frozenset[int]:
        return vehicle_columns(model, [model.vehicles[h] for h in np.flatnonzero(self.action)])

    def to_json(self) -> str:
        return json.dumps({"state": json.loads(self.state.to_json()), "action": self.action.astype(int).tolist(),
                           "meta": self.meta})

    @classmethod
    def from_json(cls, line: str) -> "Demo":
        d = json.loads(line)
        return cls(BipartiteState.from_json(json.dumps(d["state"])), np.array(d["action"], dtype=float), d["meta"])


def save_demos(demos, path: str | Path) -> None:
    with open(path, "w") as fh:
        for d in demos:
            fh.write(d.to_json() + "\n")


def load_demos(path: str | Path) -> list[Demo]:
    return [Demo.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class TrainConfig:
    epochs: int = 10
    lns_iterations: int = 5
    samples: int = 10
    lr: float = 1e-4
    batch: int = 16
    degree: float = 0.4
    seed: int = 0
    validation_iterations: int = 10
    repair_time_limit: float = 10.0
    acceptance_slack: float = 0.01

    def validate(self) -> None:
        for name in ("epochs", "lns_iterations", "samples", "batch", "validation_iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or not 0 < self.degree < 1:
            raise ValueError("lr must be >= 0 and degree in (0, 1)")


@dataclass
class Rollouts:
    demos: list[Demo]
    objectives: list[list[float]]  # per instance, per rollout (nan = failed repair)


def collect_demos(instances, models, currents, incumbents, samples: int, repair, degree: float,
                  rng: np.random.Generator, time_limit: float = 10.0, ids=None, iteration: int = 0) -> Rollouts:
    """Run ``samples`` one-step Vehicle-random rollouts per instance; keep the strictly best improving one."""
    demos, objs = [], []
    for j, (inst, model, cur, inc) in enumerate(zip(instances, models, currents, incumbents)):
        count = vehicles_for_degree(inst, degree)
        best = None
        row = []
        for _ in range(samples):
            keys = pick_random_vehicles(inst, count, rng)
            try:
                cand = repair.repair(inst, model, cur, vehicle_columns(model, keys), time_limit)
                obj = cand.objective
            except RepairFailure:
                obj = float("nan")
            row.append(obj)
            if obj < cur.objective - 1e-9 and (best is None or obj < best[0]):
                best = (obj, keys)
        objs.append(row)
        if best is None:
            continue
        chosen = set(best[1])
        action = np.array([1.0 if key in chosen else 0.0 for key in model.vehicles])
        demos.append(Demo(featurize(inst, model, cur, inc), action,
                          {"instance": ids[j] if ids else j, "iteration": iteration, "objective": best[0]}))
    return Rollouts(demos, objs)


def dataset_loss(params: Params, demos) -> float:
    """Binary cross-entropy averaged over every vehicle node of every demo."""
    total, count = 0.0, 0
    for d in demos:
        m = d.action.size
        total += bce_loss(forward(params, d.state), d.action) * m
        count += m
    return total / count if count else 0.0


@dataclass
class TrainStats:
    loss_before: float
    loss_after: float
    batches: int


def supervise_train(params: Params, demos, lr: float, batch: int, rng: np.random.Generator) -> tuple[Params, TrainStats]:
    """One shuffled pass of mini-batch SGD over ``demos``."""
    if not demos:
        raise ValueError("no demos to train on")
    before = dataset_loss(params, demos)
    order = rng.permutation(len(demos))
    batches = 0
    for start in range(0, len(demos), batch):
        chunk = [demos[i] for i in order[start:start + batch]]
        total = sum(d.action.size for d in chunk)
        grads = zeros_like(params)
        for d in chunk:
            P, cache = forward(params, d.state, keep=True)
            backward(params, cache, P, d.action, weight=1.0 / total, grads=grads)
        params = sgd_step(params, grads, lr)
        batches += 1
    return params, TrainStats(before, dataset_loss(params, demos), batches)


@dataclass
class TrainResult:
    chains: list[PolicyChain]  # one per epoch
    best_epoch: int
    validation: list[float]
    history: list[dict]

    @property
    def best(self) -> PolicyChain:
        return self.chains[self.best_epoch]


def _advance(inst, model, cur, inc, params, cfg: TrainConfig, repair, rng):
    P = forward(params, featurize(inst, model, cur, inc))
    keys = [model.vehicles[h] for h in il_sample(P, cfg.degree, rng)]
    try:
        cand = repair.repair(inst, model, cur, vehicle_columns(model, keys), cfg.repair_time_limit)
    except RepairFailure:
        return cur, inc
    if accept(cand.objective, inc.objective, cfg.acceptance_slack):
        cur = cand
        if cand.objective < inc.objective:
            inc = cand
    return cur, inc


def validate_chain(chain: PolicyChain, instances, models, initials, cfg: TrainConfig, repair, seed: int) -> float:
    best = []
    for j, (inst, model, init) in enumerate(zip(instances, models, initials)):
        lcfg = LnsConfig(iterations=cfg.validation_iterations, destroy_degree=cfg.degree,
                         acceptance_slack=cfg.acceptance_slack, repair_time_limit=cfg.repair_time_limit,
                         seed=seed + j)
        sol, _ = run_lns(inst, init, PolicyDestroy(chain, "sample"), repair, lcfg, model=model)
        best.append(sol.objective)
    return float(np.mean(best)) if best else float("nan")


def forward_train(instances: list[Instance], initials: list[Solution], config: TrainConfig,
                  validation: tuple[list[Instance], list[Solution]] | None = None,
                  repair=None, params: Params | None = None) -> TrainResult:
    """Forward training: one policy per LNS step, each warm-started from its predecessor.

    At step t demos are collected at the solutions reached so far, the policy is
    trained on them, and every instance then advances one LNS step with that
    policy.  Each epoch restarts the instances from their initial solutions.
    """
    config.validate()
    repair = MatheuristicRepair() if repair is None else repair
    params = init_params(config.seed) if params is None else params
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    demo_rng, sgd_rng, step_rng = (np.random.default_rng(s) for s in seeds)
    models = [build_model(i) for i in instances]
    val_models = [build_model(i) for i in validation[0]] if validation else []
    chains, scores, history = [], [], []
    if not instances:
        return TrainResult([PolicyChain([params])], 0, [], [])
    for epoch in range(config.epochs):
        cur, inc = list(initials), list(initials)
        steps = []
        for t in range(1, config.lns_iterations + 1):
            roll = collect_demos(instances, models, cur, inc, config.samples, repair, config.degree, demo_rng,
                                 config.repair_time_limit, iteration=t)
            rec = {"epoch": epoch, "step": t, "demos": len(roll.demos)}
            if roll.demos:
                params, stats = supervise_train(params, roll.demos, config.lr, config.batch, sgd_rng)
                rec.update(loss_before=stats.loss_before, loss_after=stats.loss_after)
            else:
                log.info("epoch %d step %d: no improving rollout, policy carried over", epoch, t)
            steps.append(dict(params))
            for j, (inst, model) in enumerate(zip(instances, models)):
                cur[j], inc[j] = _advance(inst, model, cur[j], inc[j], params, config, repair, step_rng)
            rec["mean_incumbent"] = float(np.mean([s.objective for s in inc]))
            history.append(rec)
            log.info("%s", rec)
        chain = PolicyChain(steps)
        chains.append(chain)
        if validation:
            score = validate_chain(chain, validation[0], val_models, validation[1], config, repair,
                                   seed=config.seed + 7919)
            scores.append(score)
            log.info("epoch %d validation mean best objective %.3f", epoch, score)
    best_epoch = int(np.argmin(scores)) if scores else len(chains) - 1
    return TrainResult(chains, best_epoch, scores, history)
