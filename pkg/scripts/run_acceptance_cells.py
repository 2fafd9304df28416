"""Fit every simulation cell used by the acceptance suite and print a table.

Results land in the same cache tests/test_acceptance.py reads, so running
this first (possibly in the background) makes the test suite fast.

    python scripts/run_acceptance_cells.py [--only S1,S2]
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from test_acceptance import ACCEPT_HP, CACHE, N, REPS  # noqa: E402

from xnn.experiments import cached_cell  # noqa: E402


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", default=",".join(REPS), help="comma-separated scenario ids")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    plan = [(sid, N, REPS[sid]) for sid in args.only.split(",")]
    if "S1" in args.only:
        plan.insert(1, ("S1", 1000, 10))
    print("scenario      n  reps  mean_mse  sd_mse  exact4")
    for sid, n, reps in plan:
        rows = [cached_cell(CACHE, sid, n, r, ACCEPT_HP) for r in range(reps)]
        mse = np.array([r["test_mse"] for r in rows])
        exact4 = sum(r["n_active"] == 4 and r.get("min_cosine", 0) >= 0.9 for r in rows)
        print(f"{sid:>8} {n:>6} {reps:>5} {mse.mean():9.4f} {mse.std(ddof=1):7.4f} "
              f"{exact4 if sid == 'S1' else '-':>7}", flush=True)


if __name__ == "__main__":
    main()
