"""Run an experiment config and print the summary table.

    python scripts/run_benchmark.py scripts/configs/desk_small.json --out runs/desk_small

Methods with ``"repair": "external"`` need a solver command; ``--highs`` points
them at the bundled scipy/HiGHS backend.
"""
import argparse
import json
import os
import shlex
import sys
from pathlib import Path

from aghlns.bench import format_table, run_experiment
from aghlns.repair import SOLVER_ENV


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--out", required=True)
    ap.add_argument("--highs", action="store_true", help="use scripts/highs_solver.py for external repair")
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()
    config = json.loads(Path(args.config).read_text())
    if args.workers:
        config["workers"] = args.workers
    if args.highs:
        script = Path(__file__).with_name("highs_solver.py")
        os.environ[SOLVER_ENV] = f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{input}} {{output}} {{timelimit}} {{gap}}"
    out = run_experiment(config, args.out)
    print(format_table(out / "summary.csv"))
    print(f"\nper-run results: {out / 'results.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
