"""External-solver backend for the ``external`` repair: solves an exported LP file with HiGHS via scipy.

Usage (as a command template):
    AGHLNS_SOLVER_CMD="python scripts/highs_solver.py {input} {output} {timelimit} {gap}"
"""
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp

from aghlns.milp import read_lp


def solve(lp_path: str, out_path: str, time_limit: float, gap: float) -> int:
    lp = read_lp(lp_path)
    names = list(dict.fromkeys([*lp.bounds, *lp.objective, *(n for _, t, _, _ in lp.rows for n in t)]))
    col = {n: j for j, n in enumerate(names)}
    c = np.array([lp.objective.get(n, 0.0) for n in names])
    rows, cols, vals, lo, hi = [], [], [], [], []
    for r, (_, terms, sense, rhs) in enumerate(lp.rows):
        for n, v in terms.items():
            rows.append(r)
            cols.append(col[n])
            vals.append(v)
        lo.append(rhs if sense == "=" else -np.inf)
        hi.append(rhs)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(lp.rows), len(names)))
    bounds = np.array([lp.bounds.get(n, (0.0, np.inf)) for n in names], dtype=float)
    generals = set(lp.generals)
    res = milp(c, constraints=LinearConstraint(A, lo, hi), bounds=Bounds(bounds[:, 0], bounds[:, 1]),
               integrality=np.array([n in generals for n in names], dtype=int),
               options={"time_limit": time_limit, "mip_rel_gap": gap})
    if res.x is None:
        Path(out_path).write_text("infeasible\n")
        return 0
    Path(out_path).write_text("".join(f"{n} {float(v)!r}\n" for n, v in zip(names, res.x)))
    return 0


if __name__ == "__main__":
    lp_file, out_file, limit, rel_gap = sys.argv[1:5]
    sys.exit(solve(lp_file, out_file, float(limit), float(rel_gap)))
