"""Frequencies of the two bad events along simulated paths against their bounds."""
import argparse
import math

from driftlab.density import GaussianMixture
from driftlab.follmer import Schedule, default_delta, simulate_paths
from driftlab.tails import bad_event_frequencies


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--log-alpha", type=float, default=5.0)
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()
    alpha = math.exp(args.log_alpha)
    d = GaussianMixture([0.5, 0.5], [[2.0], [-2.0]], [1.0, 1.0])
    b = simulate_paths(d, Schedule(), args.seed, args.paths, alpha=alpha, delta=default_delta(alpha, 1.0),
                       workers=args.workers)
    rows = bad_event_frequencies(b, alpha, lambdas=[0.5, 1, 2, 4], gammas=[0.5, 1, 2, 3, 4])
    print(f"{'event':<6}{'param':>8}{'freq':>10}{'upper95':>10}{'bound':>10}")
    for r in rows:
        print(f"{r['event']:<6}{r['param']:>8.3g}{r['freq']:>10.4f}{r['upper']:>10.4f}{r['bound']:>10.4f}")


if __name__ == "__main__":
    main()
