"""Fit one S1 cell and write its interpretability report and ridge plots.

    python scripts/explain_s1.py --out runs/s1 [--n 10000] [--rep 0]
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from xnn.config import Hyperparams
from xnn.data import get_scenario
from xnn.experiments import match_directions, run_cell
from xnn.model import save_model
from xnn.report import explain, write_plots


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("runs/s1"))
    ap.add_argument("--n", type=int, default=10000)
    ap.add_argument("--rep", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    hp = Hyperparams(lambda1=1e-2, lambda2=1e-2, lambda3=1e-5, patience=2000)
    row = run_cell("S1", args.n, args.rep, hp, return_model=True)
    model = row["model"]
    args.out.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out / "model.json", hp)
    report = explain(model, row["train"].X)
    (args.out / "report.json").write_text(report.to_json())
    write_plots(report, args.out / "plots")
    D = get_scenario("S1").directions
    print(f"test MSE {row['test_mse']:.4f}, {row['n_active']} subnetworks")
    for c in report.components:
        cos = np.abs(D.T @ np.array(c.projection))
        print(f"  subnet {c.index}: IR {c.importance_ratio:.3f}, "
              f"best |cos| with a true direction {cos.max():.3f} (#{cos.argmax() + 1})")
    print("matched |cos|:", np.round(match_directions(D, model.W[:, model.active]), 3))


if __name__ == "__main__":
    main()
