"""Bipartite constraint/variable graph with pooled vehicle nodes, as fed to the policy."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .instance import Instance
from .milp import EQ, MilpModel, encode
from .solution import Solution, route_cost, tables

CONSTRAINT_DIM = 4  # obj cosine, bias, sense one-hot (=, <=)
VARIABLE_DIM = 5  # type one-hot (integer, continuous), obj coef, value, incumbent value
VEHICLE_DIM = 3  # used one-hot (used, unused), route cost share
EDGE_DIM = 1


@dataclass(frozen=True)
class BipartiteState:
    constraint_features: np.ndarray  # (C, 4)
    variable_features: np.ndarray  # (V, 5)
    edge_rows: np.ndarray
    edge_cols: np.ndarray
    edge_coef: np.ndarray
    vehicle_features: np.ndarray  # (W, 3)
    membership: np.ndarray  # (V,) vehicle node of each variable, -1 when unpooled
    vehicle_keys: tuple = ()

    @property
    def num_constraints(self) -> int:
        return self.constraint_features.shape[0]

    @property
    def num_variables(self) -> int:
        return self.variable_features.shape[0]

    @property
    def num_vehicles(self) -> int:
        return self.vehicle_features.shape[0]

    def members(self, h: int) -> np.ndarray:
        return np.flatnonzero(self.membership == h)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Normalized coefficient matrix, constraints x variables."""
        return sp.csr_matrix((self.edge_coef, (self.edge_rows, self.edge_cols)),
                             shape=(self.num_constraints, self.num_variables))

    @cached_property
    def pooling(self) -> sp.csr_matrix:
        """Mean-pooling matrix, vehicles x variables."""
        cols = np.flatnonzero(self.membership >= 0)
        rows = self.membership[cols]
        counts = np.bincount(rows, minlength=self.num_vehicles).astype(float)
        vals = 1.0 / counts[rows]
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.num_vehicles, self.num_variables))

    def to_json(self) -> str:
        return json.dumps({
            "constraint_features": self.constraint_features.tolist(),
            "variable_features": self.variable_features.tolist(),
            "edges": [self.edge_rows.tolist(), self.edge_cols.tolist(), self.edge_coef.tolist()],
            "vehicle_features": self.vehicle_features.tolist(),
            "membership": self.membership.tolist(),
            "vehicle_keys": [list(k) for k in self.vehicle_keys],
        })

    @classmethod
    def from_json(cls, text: str) -> "BipartiteState":
        d = json.loads(text)
        r, c, e = d["edges"]
        return cls(np.array(d["constraint_features"], dtype=float).reshape(-1, CONSTRAINT_DIM),
                   np.array(d["variable_features"], dtype=float).reshape(-1, VARIABLE_DIM),
                   np.array(r, dtype=np.int64), np.array(c, dtype=np.int64), np.array(e, dtype=float),
                   np.array(d["vehicle_features"], dtype=float).reshape(-1, VEHICLE_DIM),
                   np.array(d["membership"], dtype=np.int64), tuple(tuple(k) for k in d["vehicle_keys"]))


def obj_cos_sim(row: np.ndarray | sp.spmatrix, objective: np.ndarray | sp.spmatrix) -> float:
    r = np.asarray(row.todense() if sp.issparse(row) else row, dtype=float).ravel()
    c = np.asarray(objective.todense() if sp.issparse(objective) else objective, dtype=float).ravel()
    nr, nc = np.linalg.norm(r), np.linalg.norm(c)
    if nr == 0 or nc == 0:
        return 0.0
    return float(np.clip(r @ c / (nr * nc), -1.0, 1.0))


@dataclass(frozen=True)
class _StaticPart:
    constraint_features: np.ndarray
    edge_rows: np.ndarray
    edge_cols: np.ndarray
    edge_coef: np.ndarray
    obj_coef: np.ndarray
    is_int: np.ndarray
    membership: np.ndarray
    time_scale: float


def _static(model: MilpModel) -> _StaticPart:
    cached = model.__dict__.get("_static_features")
    if cached is not None:
        return cached
    A = model.A.tocsr()
    c = model.objective
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    safe = np.where(norms > 0, norms, 1.0)
    cnorm = np.linalg.norm(c)
    cos = (A @ c) / (safe * cnorm) if cnorm > 0 else np.zeros(A.shape[0])
    cos = np.where(norms > 0, np.clip(cos, -1, 1), 0.0)
    bias = np.clip(np.where(norms > 0, model.rhs / safe, 0.0), -1, 1)
    cf = np.column_stack([cos, bias, model.sense == EQ, model.sense != EQ]).astype(float)
    coo = A.tocoo()
    coef = coo.data / safe[coo.row]
    cmax = np.abs(c).max() if c.size else 0.0
    membership = -np.ones(model.num_vars, dtype=np.int64)
    membership[: model.num_binaries] = np.arange(model.num_binaries) // max(model.n_arcs, 1)
    ub_t = model.ub[model.num_binaries:]
    part = _StaticPart(cf, coo.row.astype(np.int64), coo.col.astype(np.int64), coef,
                       c / cmax if cmax > 0 else np.zeros_like(c), model.integrality.copy(), membership,
                       float(ub_t.max()) if ub_t.size and ub_t.max() > 0 else 1.0)
    model.__dict__["_static_features"] = part
    return part


def _values(model: MilpModel, sol: Solution, scale: float) -> np.ndarray:
    x = encode(model, sol)
    x[model.num_binaries:] /= scale
    return x


def featurize(instance: Instance, model: MilpModel, current: Solution, incumbent: Solution) -> BipartiteState:
    st = _static(model)
    vf = np.column_stack([st.is_int, ~st.is_int, st.obj_coef,
                          _values(model, current, st.time_scale), _values(model, incumbent, st.time_scale)])
    tab = tables(instance)
    W = len(model.vehicles)
    wf = np.zeros((W, VEHICLE_DIM))
    total = current.objective
    for h, key in enumerate(model.vehicles):
        visits = current.by_vehicle.get(key, ())
        used = bool(visits)
        wf[h, 0], wf[h, 1] = float(used), float(not used)
        wf[h, 2] = route_cost(tab, visits) / total if total > 0 else 0.0
    return BipartiteState(st.constraint_features, vf, st.edge_rows, st.edge_cols, st.edge_coef, wf,
                          st.membership, tuple(model.vehicles))


def save_states(states, path: str | Path) -> None:
    with open(path, "w") as fh:
        for s in states:
            fh.write(s.to_json() + "\n")
