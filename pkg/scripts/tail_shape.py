"""Exact Gaussian tails of scaled densities next to the bound shape beta (log log a)^4 / sqrt(log a)."""
import argparse
import math

from driftlab.tails import tail_shape_scan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.01, 0.03, 0.1, 0.3, 0.5])
    ap.add_argument("--max-log-alpha", type=int, default=20)
    args = ap.parse_args()
    alphas = [math.exp(k) for k in range(3, args.max_log_alpha + 1)]
    for r in tail_shape_scan(args.sigmas, alphas):
        print(f"sigma={r['sigma']}  beta={r['beta']:.3g}  max f={r['max_f']:.3g}  "
              f"strictly decreasing={r['strictly_decreasing']}  constant={r['constant']:.4g}")
        scan = r["scan"]
        for a, t, m, c in zip(scan.alphas, scan.tails, scan.markov_ratio, scan.shape_ratio):
            if t > 0:
                print(f"   log a={math.log(a):5.1f}  tail={t:.4e}  a*tail={m:.4e}  ratio/shape={c:.4e}")


if __name__ == "__main__":
    main()
