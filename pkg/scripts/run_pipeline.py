"""Run the full pipeline and print the verdict.

    python scripts/run_pipeline.py [--config configs/dim7_desk.cfg] [--out DIR]
"""

import argparse
from pathlib import Path

from pscmoduli.pipeline import load_config, run_pipeline

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "dim7_desk.cfg"))
    ap.add_argument("--out", default=None)
    ap.add_argument("--grid-scale", type=float, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config, out_dir=args.out, grid_scale=args.grid_scale)
    res = run_pipeline(cfg)
    rep = res.report
    if "summary" in rep:
        s = rep["summary"]
        print(f"{s['passed']}/{s['certificates']} certificates passed")
        for name in s["failed"]:
            print(f"  FAILED: {name}")
    if "error" in rep:
        print(f"error: {rep['error']}")
    print(f"verdict: {rep.get('verdict', 'none')}; exit code {res.exit_code}")
    return res.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
