"""Turning vehicle scores into destroy sets: fixed-size, adaptive and disjoint sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .destroy import vehicle_columns, vehicles_for_degree, vehicles_of
from .features import featurize
from .lns import SearchState
from .nn import PolicyChain, forward


def softmax_weights(P: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(P, dtype=float) / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


def il_sample(P: np.ndarray, degree: float, rng: np.random.Generator, temperature: float = 1.0,
              pool: np.ndarray | None = None) -> list[int]:
    """Fixed-size draw without replacement, weights = softmax of the scores themselves."""
    P = np.asarray(P, dtype=float)
    pool = np.arange(P.size) if pool is None else np.asarray(pool, dtype=np.int64)
    count = min(vehicles_for_degree(P.size, degree), pool.size)
    if count == 0:
        return []
    if count == pool.size:
        return sorted(pool.tolist())
    w = softmax_weights(P[pool], temperature)
    return sorted(pool[rng.choice(pool.size, size=count, replace=False, p=w)].tolist())


def il_sample_a(P: np.ndarray, rng: np.random.Generator, max_tries: int = 100) -> list[int]:
    """Independent Bernoulli(P_h) per vehicle; an empty draw is redrawn, then falls back to argmax."""
    P = np.asarray(P, dtype=float)
    if P.size == 0:
        return []
    for _ in range(max_tries):
        picked = np.flatnonzero(rng.random(P.size) < P)
        if picked.size:
            return picked.tolist()
    return [int(np.argmax(P))]


def il_sample_d(P: np.ndarray, degree: float, previous, rng: np.random.Generator,
                temperature: float = 1.0) -> list[int]:
    """Like :func:`il_sample` but never reusing vehicles drawn in the previous call."""
    P = np.asarray(P, dtype=float)
    prev = set(int(i) for i in previous)
    pool = np.array([h for h in range(P.size) if h not in prev], dtype=np.int64)
    if pool.size == 0:
        pool = np.arange(P.size)
    return il_sample(P, degree, rng, temperature, pool=pool)


MODES = ("sample", "sampleA", "sampleD")


@dataclass
class PolicyDestroy:
    """Destroy operator driven by a trained policy chain."""

    chain: PolicyChain
    mode: str = "sample"
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown deployment {self.mode!r}; choose from {MODES}")

    @property
    def name(self) -> str:
        return f"IL-{self.mode}"

    def scores(self, state: SearchState) -> np.ndarray:
        st = featurize(state.instance, state.model, state.current, state.incumbent)
        return forward(self.chain.at(state.iteration), st)

    def select(self, state: SearchState) -> frozenset[int]:
        P = self.scores(state)
        if self.mode == "sample":
            picked = il_sample(P, state.degree, state.rng, self.temperature)
        elif self.mode == "sampleA":
            picked = il_sample_a(P, state.rng)
        else:
            index = {key: h for h, key in enumerate(state.model.vehicles)}
            prev = [index[k] for k in vehicles_of(state.model, state.previous)]
            picked = il_sample_d(P, state.degree, prev, state.rng, self.temperature)
        return vehicle_columns(state.model, [state.model.vehicles[h] for h in picked])
