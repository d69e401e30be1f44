"""Forward-train a destroy policy on small instances, then compare it with the heuristics.

    python scripts/train_and_eval.py --out runs/il   # defaults reproduce the acceptance setting

Writes policy.npz, training history and an eval CSV (one row per instance x method).
"""
import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from aghlns.bench import instance_set, primal_gap
from aghlns.deploy import PolicyDestroy
from aghlns.destroy import HEURISTICS
from aghlns.lns import LnsConfig, run_lns
from aghlns.milp import build_model
from aghlns.nn import PolicyChain
from aghlns.repair import MatheuristicRepair
from aghlns.training import TrainConfig, forward_train


def evaluate(chain, sets, iterations, degree):
    methods = {"Vehicle-random": lambda: HEURISTICS["vehicle_random"](),
               "Random": lambda: HEURISTICS["random"](),
               "IL-sample": lambda: PolicyDestroy(chain, "sample"),
               "IL-sampleA": lambda: PolicyDestroy(chain, "sampleA"),
               "IL-sampleD": lambda: PolicyDestroy(chain, "sampleD")}
    rows = []
    for j, (inst, init) in enumerate(sets):
        model = build_model(inst)
        res = {}
        for name, make in methods.items():
            t0 = time.perf_counter()
            best, _ = run_lns(inst, init, make(), MatheuristicRepair(),
                              LnsConfig(iterations=iterations, destroy_degree=degree, seed=j), model=model)
            res[name] = (best.objective, time.perf_counter() - t0)
        top = min(o for o, _ in res.values())
        for name, (obj, secs) in res.items():
            rows.append({"instance": j, "n": inst.n, "method": name, "initial": init.objective, "best": obj,
                         "gap": primal_gap(obj, top), "runtime": secs})
    return rows


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--train", type=int, default=20)
    ap.add_argument("--val", type=int, default=5)
    ap.add_argument("--test", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=30, help="LNS iterations at evaluation")
    ap.add_argument("--large", action="store_true", help="also evaluate on AGH-20-lite")
    ap.add_argument("--policy", help="skip training and load this policy chain")
    for f, v in asdict(TrainConfig()).items():
        ap.add_argument(f"--{f.replace('_', '-')}", type=type(v), default=v)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(**{f: getattr(args, f) for f in asdict(TrainConfig())})

    if args.policy:
        chain = PolicyChain.load(args.policy)
    else:
        train = instance_set("AGH-small", args.train, 100)
        val = instance_set("AGH-small", args.val, 200)
        t0 = time.perf_counter()
        res = forward_train([i for i, _ in train], [s for _, s in train], cfg,
                            validation=([i for i, _ in val], [s for _, s in val]))
        chain = res.best
        chain.save(out / "policy.npz")
        (out / "history.json").write_text(json.dumps({"config": asdict(cfg), "best_epoch": res.best_epoch,
                                                      "validation": res.validation, "history": res.history,
                                                      "seconds": time.perf_counter() - t0}, indent=1))
    sets = {"AGH-small": instance_set("AGH-small", args.test, 300)}
    if args.large:
        sets["AGH-20-lite"] = instance_set("AGH-20-lite", args.test, 400)
    rows = []
    for label, s in sets.items():
        for r in evaluate(chain, s, args.iterations, cfg.degree):
            rows.append({"set": label, **r})
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for label in sets:
        print(f"\n{label}")
        for m in dict.fromkeys(r["method"] for r in rows):
            mine = [r for r in rows if r["set"] == label and r["method"] == m]
            print(f"  {m:16s} mean best {np.mean([r['best'] for r in mine]):12.2f}  "
                  f"mean gap {np.mean([r['gap'] for r in mine]):6.2f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())
