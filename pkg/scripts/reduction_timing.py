"""Time one reduced lower-level solve against the full-dimension solve.

    python3 scripts/reduction_timing.py --n 10 20 30 --k 5

The full program grows with N^2 per PSD block, so keep N modest.
"""
import argparse
import time

from drport.lower_level import solve_full_dual, solve_lower
from drport.model import Selection
from drport.synthetic import random_instance


def timed(fn, repeat):
    fn()
    start = time.perf_counter()
    for _ in range(repeat):
        value = fn()
    return (time.perf_counter() - start) / repeat, value


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[10, 20])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    print(f"{'N':>5} {'k':>3} {'reduced_s':>10} {'full_s':>10} {'ratio':>8} {'|df|':>9}")
    for n in args.n:
        inst = random_instance(n, args.k, args.seed)
        z = Selection.from_support(n, range(args.k))
        tr, fr = timed(lambda: solve_lower(inst, z).f_prime, args.repeat)
        tf, ff = timed(lambda: solve_full_dual(inst, z).f_prime, 1)
        print(f"{n:>5} {args.k:>3} {tr:>10.4f} {tf:>10.3f} {tf / tr:>8.1f} {abs(fr - ff):>9.1e}")


if __name__ == "__main__":
    main()
