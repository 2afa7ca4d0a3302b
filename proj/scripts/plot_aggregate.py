"""Plot loss gap and gradient norm from one or more aggregate.csv files.

usage: plot_aggregate.py OUT.png RUN_DIR [RUN_DIR ...]
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    k = [int(r["round"]) for r in rows]
    gap = [float(r["loss_gap_mean"]) for r in rows]
    w = [float(r["grad_norm_sq_mean"]) for r in rows]
    return k, gap, w


def main(argv):
    if len(argv) < 3:
        sys.exit(__doc__)
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    for run in argv[2:]:
        k, gap, w = load(Path(run) / "aggregate.csv")
        left.plot(k, gap, label=run)
        right.semilogy(k, w, label=run)
    left.set(xlabel="round", ylabel="f(x) - f_inf")
    right.set(xlabel="round", ylabel="||grad f(x)||^2")
    left.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(argv[1], dpi=120)


if __name__ == "__main__":
    main(sys.argv)
