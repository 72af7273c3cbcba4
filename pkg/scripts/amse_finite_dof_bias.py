"""Compare SGD-trained AMSE gains with the finite-sample optimum per wavenumber.

Each per-sample power at wavenumber k rests on 2k+1 real degrees of freedom.
Pooling the batch (``--spectra batch``) multiplies that by the batch size.
"""

import argparse

from spectraloss.toy import SyntheticSpec, finite_sample_amse_optimum, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trunc", type=int, default=20)
    ap.add_argument("--rho", type=float, default=0.5)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--spectra", choices=["sample", "batch"], default="sample")
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    spec = SyntheticSpec(args.trunc, rho=args.rho, seed=args.seed)
    g = train(spec, "amse", steps=args.steps, batch=args.batch, spectra=args.spectra).final_gains
    pool = args.batch if args.spectra == "batch" else 1
    print("k,dof,trained_gain,oracle_gain")
    for k in range(0, args.trunc + 1, max(1, args.trunc // 10)):
        dof = (2 * k + 1) * pool
        print(f"{k},{dof},{g[k]:.4f},{finite_sample_amse_optimum(args.rho, dof, n_draws=20000):.4f}")
    print(f"# mean trained gain {g.mean():.4f}")


if __name__ == "__main__":
    main()
