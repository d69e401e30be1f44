"""Command-line entry point: ``python -m aghlns {gen,solve,train,eval,gap}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .instance import GeneratorConfig, load, save
from .solution import check_feasible, initial_solution, save_solution


def _generator(args) -> GeneratorConfig:
    cfg = bench.PRESETS[args.preset] if args.preset else GeneratorConfig()
    if args.flights is not None:
        cfg = replace(cfg, flights=args.flights)
    if args.ops is not None:
        cfg = replace(cfg, ops=args.ops)
    return cfg


def _add_generator_flags(p):
    p.add_argument("--preset", choices=sorted(bench.PRESETS))
    p.add_argument("--flights", type=int)
    p.add_argument("--ops", type=int)
    p.add_argument("--seed", type=int, default=0)


def cmd_gen(args) -> int:
    cfg = _generator(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for j, (inst, _) in enumerate(bench.instance_set(cfg, args.count, args.seed)):
        path = out / f"instance_{j:03d}.json"
        save(inst, path)
        print(path)
    return 0


def cmd_solve(args) -> int:
    inst = load(args.instance)
    init = initial_solution(inst)
    spec = bench.MethodSpec(name=args.destroy, destroy=args.destroy, repair=args.repair, degree=args.degree,
                            iterations=args.iterations, time_limit=args.time_limit,
                            repair_time_limit=args.repair_time_limit, policy=args.policy, mode=args.mode,
                            solver_cmd=args.solver_cmd, gap_tolerance=args.gap)
    best, trace = bench.run_method(inst, init, spec, args.seed)
    problems = check_feasible(inst, best)
    if problems:
        print(f"internal error: infeasible result {problems[0]}", file=sys.stderr)
        return 2
    if args.out:
        save_solution(best, args.out)
    if args.trace:
        trace.to_csv(args.trace)
    print(f"initial {init.objective:.3f} best {best.objective:.3f} "
          f"gap-to-initial {bench.primal_gap(best.objective, init.objective):.3f}%")
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, forward_train
    cfg = _generator(args)
    train = bench.instance_set(cfg, args.count, args.seed)
    val = bench.instance_set(cfg, args.validation, args.seed + 1) if args.validation else []
    tcfg = TrainConfig(epochs=args.epochs, lns_iterations=args.lns_iterations, samples=args.samples, lr=args.lr,
                       batch=args.batch, degree=args.degree, seed=args.seed)
    res = forward_train([i for i, _ in train], [s for _, s in train], tcfg,
                        validation=([i for i, _ in val], [s for _, s in val]) if val else None)
    res.best.save(args.out)
    Path(args.out).with_suffix(".history.json").write_text(
        json.dumps({"best_epoch": res.best_epoch, "validation": res.validation, "history": res.history}, indent=1))
    print(f"saved policy chain ({len(res.best.policies)} steps, epoch {res.best_epoch}) to {args.out}")
    return 0


def cmd_eval(args) -> int:
    out = bench.run_experiment(args.config, args.out)
    print(bench.format_table(out / "summary.csv"))
    return 0


def cmd_gap(args) -> int:
    print(f"{bench.primal_gap(args.obj, args.best):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aghlns", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate constructible instances")
    _add_generator_flags(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run LNS on one instance file")
    p.add_argument("instance")
    p.add_argument("--destroy", default="vehicle_random",
                   help="random, vehicle_random, vehicle_worst, vehicle_worst_random, "
                        "vehicle_random_sampleA, vehicle_random_sampleD or policy")
    p.add_argument("--repair", default="matheuristic", choices=["matheuristic", "exact_oracle", "external"])
    p.add_argument("--degree", type=float, default=0.4)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--time-limit", type=float, default=math.inf)
    p.add_argument("--repair-time-limit", type=float, default=10.0)
    p.add_argument("--policy", help="policy chain file (with --destroy policy)")
    p.add_argument("--mode", default="sample", choices=["sample", "sampleA", "sampleD"])
    p.add_argument("--solver-cmd", help="external solver template with {input} {output} {timelimit} {gap}")
    p.add_argument("--gap", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write best solution JSON here")
    p.add_argument("--trace", help="write trace CSV here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="forward-train a destroy policy")
    _add_generator_flags(p)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--validation", type=int, default=5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lns-iterations", type=int, default=5)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--degree", type=float, default=0.4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gap", help="primal gap in percent")
    p.add_argument("obj", type=float)
    p.add_argument("best", type=float)
    p.set_defaults(func=cmd_gap)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
