"""Both log-Sobolev gaps on the cube for random, product and indicator functions."""
import argparse

import numpy as np

from driftlab import cube as cb


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--count", type=int, default=100)
    args = ap.parse_args()
    families = {
        "random-positive": [cb.CubeFunction.random_positive(args.n, s) for s in range(args.count)],
        "product": [cb.CubeFunction.product(args.n, seed=s) for s in range(args.count)],
        "indicator": [cb.CubeFunction.indicator(args.n, s, p=0.3) for s in range(args.count)],
    }
    for name, fs in families.items():
        lsi = np.array([cb.lsi_gap(f) for f in fs])
        ent = np.array([cb.entropy_mu(f) for f in fs])
        line = f"{name:<16} min LSI gap {lsi.min():.3e}  max H/(2E) {np.max(ent / (lsi + ent)):.4f}"
        if name != "indicator":
            mod = np.array([cb.modified_lsi_gap(f) for f in fs])
            line += f"  min modified gap {mod.min():.3e}"
        print(line)


if __name__ == "__main__":
    main()
