"""Build and certify a single surgery stage, then print its key figures.

    python scripts/run_construction.py [--config configs/dim7_desk.cfg] [--grid-scale 1]
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

from pscmoduli.pipeline import load_config, plan_iterated_surgeries, run_stage

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "dim7_desk.cfg"))
    ap.add_argument("--grid-scale", type=float, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config, grid_scale=args.grid_scale)
    t0 = time.perf_counter()
    plan = plan_iterated_surgeries(replace(cfg, stages=1))
    sp, con = plan.stages[0], plan.constructions[0]
    rec = run_stage(sp, con, cfg, plan.c, plan.delta)
    print(f"c = {plan.c}, delta = {plan.delta}, k = {sp.k:.6g}, kappa = {sp.kappa:.6g}")
    for name, cert in rec.all_certificates().items():
        print(f"  {'PASS' if cert.passed else 'FAIL'}  {name}: min margin {cert.min_margin:.4g}")
    print(f"elapsed {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
