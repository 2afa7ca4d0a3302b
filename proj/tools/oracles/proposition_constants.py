"""Reference values for the four algorithms' recursion constants.

Evaluates the closed-form constants in 50-digit arithmetic and writes
tests/data/proposition_constants_oracle.csv. Run from the repository root:

    python3 tools/oracles/proposition_constants.py
"""
import csv
import pathlib

from mpmath import mp, mpf, sqrt, inf

mp.dps = 50

L = mpf(1)
T = mpf(30)
SIGMA2 = mpf(1)
DELTA = mpf("0.5")
ALPHA = mpf("0.01")


def fedavg():
    b1 = sqrt(6) * L**2 * T
    b3 = sqrt(6) * L**2 * T * DELTA + (3 / sqrt(6)) * L * T * SIGMA2 + L * SIGMA2
    return b1, mpf("0.5"), b3, 1 / (sqrt(6) * L)


def fedprox():
    b1 = sqrt(6) * L**2
    b3 = sqrt(6) * L**2 * DELTA + L * (1 + 3 / sqrt(6)) * SIGMA2
    return b1, mpf("0.5"), b3, 1 / (sqrt(6) * L)


def ef_fedavg():
    q = (1 - ALPHA) * (1 + 2 / ALPHA)
    root = inf if q == 0 else sqrt(3 * ALPHA / (64 * q))
    alpha_hat = min(mpf(1) / 6, root) / L
    A = 4 * (1 + mpf("1.5") * L) * L**2 / ALPHA * alpha_hat
    c2 = 16 * q * A / 3 + 3 * L / 2
    c3 = 14 * q * A / 3 + 13 * L / 8
    return 2 * L * c2, mpf("0.25"), 2 * L * c2 * DELTA + c3 * SIGMA2, alpha_hat


def ef_fedprox():
    q = (1 - ALPHA) * (1 + 2 / ALPHA)
    c1 = q * (4 + 4 * L**2 / 3)
    c2 = q * (4 + mpf(4) / 3)
    c3 = q * (4 + mpf(2) / 3)
    gamma = min(1 / (6 * L), inf if c1 == 0 else sqrt(ALPHA / c1) / 2)
    A = 3 * L**2 * gamma / ALPHA
    b1 = 2 * L * (3 * L / 2 + A * c2)
    b3 = b1 * DELTA + (9 * L / 4 + A * c3) * SIGMA2
    return b1, mpf("0.25"), b3, gamma


def main():
    out = pathlib.Path(__file__).resolve().parents[2] / "tests" / "data" / "proposition_constants_oracle.csv"
    rows = [("fedavg", fedavg()), ("fedprox", fedprox()), ("ef_fedavg", ef_fedavg()),
            ("ef_fedprox", ef_fedprox())]
    with out.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["algorithm", "L", "T", "sigma2", "delta_inf", "contraction",
                    "b1", "b2", "b3", "step_cap"])
        for name, (b1, b2, b3, cap) in rows:
            w.writerow([name, "1", "30", "1", "0.5", "0.01"] +
                       [mp.nstr(v, 25) for v in (b1, b2, b3, cap)])


if __name__ == "__main__":
    main()
