"""Exact s-invariants of the plumbing family and the resulting component count.

    python scripts/separate_components.py [--k 2] [--q 1] [--p 0 1 2 3 4 5]
"""

import argparse

from pscmoduli.invariants import bp_order, separate_components


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--q", type=int, default=1)
    ap.add_argument("--p", type=int, nargs="+", default=list(range(6)))
    args = ap.parse_args()

    rep = separate_components(args.k, args.q, bp_order(args.k), args.p)
    for r in rep.reports:
        print(f"p = {r.p}: sigma = {r.signature}, s = {r.s_value}")
    print(rep.verdict)


if __name__ == "__main__":
    main()
