"""Tabulate the gluing point z_k and its slope k f'(z_k) as k decreases.

    python scripts/zk_trend.py [--n 4] [--m 3] [--alpha 2] [--k 0.3 0.1 0.05 0.01]
"""

import argparse

from pscmoduli.warp_profiles import cap_f_near_zero, shape_h_near_zero, solve_base_ivp, zk_for


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--alpha", type=float, default=2.0)
    ap.add_argument("--k", type=float, nargs="+", default=[0.5, 0.3, 0.1, 0.05, 0.01])
    args = ap.parse_args()

    f, h = solve_base_ivp()
    f_cap, h_sh = cap_f_near_zero(f), shape_h_near_zero(h, 0.2)
    print(f"{'k':>8} {'ln z_k':>12} {'slope':>10} {'method':>12}")
    for k in args.k:
        loc = zk_for(f_cap, h_sh, args.n, args.m, k, args.alpha)
        print(f"{k:8.4f} {loc.log_z:12.4f} {loc.slope:10.6f} {loc.method:>12}")


if __name__ == "__main__":
    main()
