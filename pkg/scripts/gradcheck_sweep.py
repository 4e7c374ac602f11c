"""Gradient certification across several seeds and sizes; prints the worst error per op.

    python scripts/gradcheck_sweep.py [--seeds 3] [--instances 20]
"""
import argparse
from collections import defaultdict

from wbcreid.gradcheck import TOLERANCE, Sizes, run_gradchecks

SIZES = [Sizes(2, 2, 1, 2), Sizes(4, 4, 2, 3), Sizes(3, 6, 3, 4)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--instances", type=int, default=20)
    args = ap.parse_args()

    worst = defaultdict(float)
    for seed in range(args.seeds):
        for sizes in SIZES:
            for r in run_gradchecks(seed, sizes, args.instances):
                worst[r.op] = max(worst[r.op], r.max_error)
    for op, err in worst.items():
        print(f"{op:28s} {err:.2e}  {'PASS' if err < TOLERANCE else 'FAIL'}")


if __name__ == "__main__":
    main()
