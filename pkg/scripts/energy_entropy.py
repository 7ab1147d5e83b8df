"""Half the mean drift energy against the exact entropy, for several step counts."""
import argparse
import math

from driftlab.density import GaussianMixture, entropy
from driftlab.follmer import Schedule, simulate_paths


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()
    densities = {
        "translate mu=1": GaussianMixture.translate([1.0]),
        "scaled sigma=0.5": GaussianMixture.scaled(0.5),
        "two-translate mixture": GaussianMixture([0.5, 0.5], [[1.0], [-1.0]], [1.0, 1.0]),
    }
    print(f"{'density':<24}{'steps':>7}{'energy/2':>12}{'entropy':>12}{'rel err':>10}")
    for name, d in densities.items():
        h = entropy(d)
        for n_steps in (64, 256, 1024):
            b = simulate_paths(d, Schedule("log-dense-terminal", n_steps, 1e-4), args.seed, args.paths,
                               workers=args.workers)
            half = 0.5 * b.energy.mean()
            print(f"{name:<24}{n_steps:>7}{half:>12.5f}{h:>12.5f}{abs(half - h) / h:>10.4f}")


if __name__ == "__main__":
    main()
