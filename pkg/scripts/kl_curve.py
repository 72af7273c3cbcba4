"""Tabulate the KL-optimal amplitude ratio against correlation."""

import argparse
import math

import numpy as np

from spectraloss.loss import kl_optimum


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=19)
    args = ap.parse_args()
    print("rho,optimal_ratio,closed_form")
    for rho in np.linspace(0.05, 0.95, args.points):
        o = kl_optimum(rho)
        closed = 2.0 / (rho + math.sqrt(8.0 - 7.0 * rho * rho))
        print(f"{rho:.3f},{o.optimal_sigma_ratio:.6f},{closed:.6f}")
    print(f"# minimum at rho = 1/sqrt(7) = {1 / math.sqrt(7):.4f}")


if __name__ == "__main__":
    main()
