"""Bipartite graph-convolutional selection policy with hand-written backpropagation.

Wiring: raw features are linearly projected to 64-d embeddings; one
variable-to-constraint convolution updates constraint embeddings, one
constraint-to-variable convolution then updates variable embeddings; each
vehicle node concatenates the mean of its member variable embeddings with its
own projected features, and a final MLP plus sigmoid scores it.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .features import CONSTRAINT_DIM, VARIABLE_DIM, VEHICLE_DIM, BipartiteState

EMBED = 64
HIDDEN = 128
BCE_EPS = 1e-7
WEIGHTS_VERSION = 1

Params = dict[str, np.ndarray]


class WeightsFormatError(ValueError):
    pass


def param_shapes(emb: int = EMBED, hidden: int = HIDDEN, dims=(CONSTRAINT_DIM, VARIABLE_DIM, VEHICLE_DIM)) -> dict[str, tuple]:
    dc, dv, dw = dims
    shapes = {
        "proj_c.W": (dc, emb), "proj_c.b": (emb,),
        "proj_v.W": (dv, emb), "proj_v.b": (emb,),
        "proj_w.W": (dw, emb), "proj_w.b": (emb,),
    }
    for name, fan_in, out in (("g1", emb, emb), ("f1", 2 * emb, emb), ("g2", emb, emb),
                              ("f2", 2 * emb, emb), ("f3", 2 * emb, 1)):
        shapes.update({f"{name}.W1": (fan_in, hidden), f"{name}.b1": (hidden,),
                       f"{name}.W2": (hidden, out), f"{name}.b2": (out,)})
    return shapes


def init_params(seed: int = 0, dtype=np.float32, **kw) -> Params:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(**kw).items():
        if len(shape) == 2:
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            out[name] = rng.uniform(-lim, lim, size=shape).astype(dtype)
        else:
            out[name] = np.zeros(shape, dtype=dtype)
    return out


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def cast(params: Params, dtype) -> Params:
    return {k: v.astype(dtype) for k, v in params.items()}


# -- forward / backward ------------------------------------------------------------------

def _mlp(params, name, x):
    pre = x @ params[f"{name}.W1"] + params[f"{name}.b1"]
    h = np.maximum(pre, 0)
    return h @ params[f"{name}.W2"] + params[f"{name}.b2"], (x, pre, h)


def _mlp_back(params, grads, name, cache, gout):
    x, pre, h = cache
    grads[f"{name}.W2"] += h.T @ gout
    grads[f"{name}.b2"] += gout.sum(0)
    gh = (gout @ params[f"{name}.W2"].T) * (pre > 0)
    grads[f"{name}.W1"] += x.T @ gh
    grads[f"{name}.b1"] += gh.sum(0)
    return gh @ params[f"{name}.W1"].T


def _check(params: Params, state: BipartiteState):
    for layer, feats in (("proj_c", state.constraint_features), ("proj_v", state.variable_features),
                         ("proj_w", state.vehicle_features)):
        want = params[f"{layer}.W"].shape[0]
        if feats.ndim != 2 or feats.shape[1] != want:
            raise ValueError(f"layer {layer}: expected {want} raw features, got shape {feats.shape}")


def forward(params: Params, state: BipartiteState, keep: bool = False):
    """Vehicle scores P in (0, 1); with ``keep`` also the cache needed by :func:`backward`."""
    _check(params, state)
    dt = params["proj_c.W"].dtype
    A = state.incidence.astype(dt)
    pool = state.pooling.astype(dt)
    Fc = state.constraint_features.astype(dt)
    Fv = state.variable_features.astype(dt)
    Fw = state.vehicle_features.astype(dt)
    Xc = Fc @ params["proj_c.W"] + params["proj_c.b"]
    Xv = Fv @ params["proj_v.W"] + params["proj_v.b"]
    G1, cg1 = _mlp(params, "g1", A @ Xv)
    C1, cf1 = _mlp(params, "f1", np.concatenate([Xc, G1], axis=1))
    G2, cg2 = _mlp(params, "g2", A.T @ C1)
    V1, cf2 = _mlp(params, "f2", np.concatenate([Xv, G2], axis=1))
    Xw = Fw @ params["proj_w.W"] + params["proj_w.b"]
    Z, cf3 = _mlp(params, "f3", np.concatenate([pool @ V1, Xw], axis=1))
    P = expit(Z[:, 0])
    if not keep:
        return P
    return P, dict(A=A, pool=pool, Fc=Fc, Fv=Fv, Fw=Fw, cg1=cg1, cf1=cf1, cg2=cg2, cf2=cf2, cf3=cf3)


def bce_loss(P: np.ndarray, y: np.ndarray) -> float:
    Pc = np.clip(np.asarray(P, dtype=float), BCE_EPS, 1 - BCE_EPS)
    y = np.asarray(y, dtype=float)
    if Pc.size == 0:
        return 0.0
    return float(-np.mean(y * np.log(Pc) + (1 - y) * np.log(1 - Pc)))


def backward(params: Params, cache: dict, P: np.ndarray, y: np.ndarray, weight: float | None = None,
             grads: Params | None = None) -> Params:
    """Accumulate d(weight * sum_h bce_h)/d(params); ``weight`` defaults to 1/|W| (mean loss)."""
    grads = zeros_like(params) if grads is None else grads
    m = P.shape[0]
    if m == 0:
        return grads
    weight = 1.0 / m if weight is None else weight
    y = np.asarray(y, dtype=P.dtype)
    inside = (P > BCE_EPS) & (P < 1 - BCE_EPS)
    gZ = ((P - y) * inside * weight).astype(P.dtype)[:, None]
    gw_in = _mlp_back(params, grads, "f3", cache["cf3"], gZ)
    gpooled, gXw = gw_in[:, :EMBED], gw_in[:, EMBED:]
    grads["proj_w.W"] += cache["Fw"].T @ gXw
    grads["proj_w.b"] += gXw.sum(0)
    gV1 = cache["pool"].T @ gpooled
    g_f2in = _mlp_back(params, grads, "f2", cache["cf2"], gV1)
    gXv, gG2 = g_f2in[:, :EMBED], g_f2in[:, EMBED:]
    gC1 = cache["A"] @ _mlp_back(params, grads, "g2", cache["cg2"], gG2)
    g_f1in = _mlp_back(params, grads, "f1", cache["cf1"], gC1)
    gXc, gG1 = g_f1in[:, :EMBED], g_f1in[:, EMBED:]
    gXv = gXv + cache["A"].T @ _mlp_back(params, grads, "g1", cache["cg1"], gG1)
    grads["proj_c.W"] += cache["Fc"].T @ gXc
    grads["proj_c.b"] += gXc.sum(0)
    grads["proj_v.W"] += cache["Fv"].T @ gXv
    grads["proj_v.b"] += gXv.sum(0)
    return grads


def loss_and_grad(params: Params, state: BipartiteState, y: np.ndarray) -> tuple[float, Params]:
    P, cache = forward(params, state, keep=True)
    return bce_loss(P, y), backward(params, cache, P, y)


def sgd_step(params: Params, grads: Params, lr: float) -> Params:
    return {k: (v - lr * grads[k]).astype(v.dtype) for k, v in params.items()}


# -- persistence ----------------------------------------------------------------------------

def save_weights(params: Params, path: str | Path) -> None:
    meta = {
        "format_version": WEIGHTS_VERSION,
        "raw_dims": [params["proj_c.W"].shape[0], params["proj_v.W"].shape[0], params["proj_w.W"].shape[0]],
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "dtype": str(params["proj_c.W"].dtype),
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta)), **params)
    Path(path).write_bytes(buf.getvalue())


def load_weights(path: str | Path, raw_dims=(CONSTRAINT_DIM, VARIABLE_DIM, VEHICLE_DIM)) -> Params:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            params = {k: data[k] for k in data.files if k != "__meta__"}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError) as exc:
        raise WeightsFormatError(f"cannot read weights file {path}: {exc}") from None
    if meta.get("format_version") != WEIGHTS_VERSION:
        raise WeightsFormatError(f"weights format {meta.get('format_version')} != {WEIGHTS_VERSION}")
    if tuple(meta["raw_dims"]) != tuple(raw_dims):
        raise WeightsFormatError(f"weights expect raw feature dims {meta['raw_dims']}, featurizer gives {list(raw_dims)}")
    for k, shape in meta["shapes"].items():
        if k not in params or list(params[k].shape) != shape:
            raise WeightsFormatError(f"weights file version {WEIGHTS_VERSION}: tensor {k} missing or misshapen")
    return params


@dataclass
class PolicyChain:
    """Per-step policies from forward training; later steps reuse the last one."""

    policies: list[Params]

    def at(self, iteration: int) -> Params:
        if not self.policies:
            raise ValueError("empty policy chain")
        return self.policies[min(iteration, len(self.policies)) - 1]

    def save(self, path: str | Path) -> None:
        buf = io.BytesIO()
        arrays = {f"{t}/{k}": v for t, p in enumerate(self.policies) for k, v in p.items()}
        meta = {"format_version": WEIGHTS_VERSION, "steps": len(self.policies),
                "raw_dims": [self.policies[0]["proj_c.W"].shape[0], self.policies[0]["proj_v.W"].shape[0],
                             self.policies[0]["proj_w.W"].shape[0]]}
        np.savez(buf, __meta__=np.array(json.dumps(meta)), **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "PolicyChain":
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data["__meta__"]))
                if meta.get("format_version") != WEIGHTS_VERSION or "steps" not in meta:
                    raise WeightsFormatError("not a policy chain file")
                policies = [{} for _ in range(meta["steps"])]
                for key in data.files:
                    if key == "__meta__":
                        continue
                    t, name = key.split("/", 1)
                    policies[int(t)][name] = data[key]
        except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError) as exc:
            if isinstance(exc, WeightsFormatError):
                raise
            raise WeightsFormatError(f"cannot read policy file {path}: {exc}") from None
        return cls(policies)


# -- finite-difference oracle -------------------------------------------------------------

def _relu_pattern(params: Params, state: BipartiteState) -> tuple:
    _, cache = forward(params, state, keep=True)
    return tuple((cache[c][1] > 0).tobytes() for c in ("cg1", "cf1", "cg2", "cf2", "cf3"))


def _relerr(a: float, b: float, floor: float = 1e-7) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(params: Params, state: BipartiteState, y: np.ndarray, rng: np.random.Generator,
                   step: float = 1e-4, elements: int = 3, fallback_step: float = 1e-6) -> dict[str, list[float]]:
    """Relative errors of analytic vs central-difference gradients, per tensor.

    Each tensor gets one random unit-direction probe plus ``elements`` single-entry
    probes.  A probe whose +/- step flips any ReLU is re-measured with
    ``fallback_step``: a kink inside the stencil is not a gradient error.
    Run with float64 params.
    """
    _, grads = loss_and_grad(params, state, y)
    base = _relu_pattern(params, state)
    out: dict[str, list[float]] = {}

    def central(name, direction, h):
        vals, same = [], True
        for sgn in (1.0, -1.0):
            probe = dict(params)
            probe[name] = params[name] + sgn * h * direction
            vals.append(bce_loss(forward(probe, state), y))
            same = same and _relu_pattern(probe, state) == base
        return (vals[0] - vals[1]) / (2 * h), same

    for name, value in params.items():
        dirs = [rng.normal(size=value.shape)]
        dirs[0] /= np.linalg.norm(dirs[0])
        for flat in rng.choice(value.size, size=min(elements, value.size), replace=False):
            e = np.zeros(value.size)
            e[flat] = 1.0
            dirs.append(e.reshape(value.shape))
        errs = []
        for d in dirs:
            analytic = float((grads[name] * d).sum())
            fd, smooth = central(name, d, step)
            if not smooth:
                fd, _ = central(name, d, fallback_step)
            errs.append(_relerr(fd, analytic))
        out[name] = errs
    return out
