"""Walkthrough: the three evaluation metrics end to end.

Runs a reduced pipeline (small dataset, three estimators) through the
library API, then reads back the curve CSVs and prints the fidelity, AUC
and DSC summaries exactly as the `report` stage tabulates them.

Run:  python3 demos/04_full_evaluation.py [out_dir]
"""

import csv
import os
import sys

from saliencybench.config import RunConfig
from saliencybench.pipeline import run_pipeline


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "demo_output/run"
    cfg = RunConfig({
        "out_dir": out_dir,
        "data.side": "32",
        "data.n_train": "400",
        "data.n_test": "60",
        "data.n_eval": "12",
        "model.epochs": "8",
        "estimators.list": "backprop,smoothgrad_sq,random",
        "metrics.percent_grid": "2,5,10,20,50",
    })
    print("Running the reduced pipeline into", out_dir)
    manifest = run_pipeline(cfg)
    print("Status:", manifest["status"],
          f"({len(manifest['artifacts'])} artifacts)")

    print("\nScore tables (rows sorted by the absolute-variant score):")
    for table in ("fidelity", "auc", "auc_trapezoid", "dsc_max"):
        path = os.path.join(out_dir, "report", table + ".txt")
        print()
        print(open(path).read().rstrip())

    example = os.path.join(out_dir, "curves",
                           "smoothgrad_sq__absolute__perturbation.csv")
    with open(example) as fh:
        rows = list(csv.DictReader(fh))
    print(f"\nPerturbation curve for smoothgrad_sq ({example}):")
    for row in rows[::8]:
        print(f"  masked {float(row['fraction']):>5.0%}  "
              f"MiF acc {float(row['acc_mif']):.3f}  "
              f"LiF acc {float(row['acc_lif']):.3f}")
    print("\nSVG plots for every curve are in", os.path.join(out_dir, "report"))


if __name__ == "__main__":
    main()
