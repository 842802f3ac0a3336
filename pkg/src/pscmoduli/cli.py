"""Command line: ``python -m pscmoduli <command> --config FILE [--out DIR]``.

Exit codes: 0 every certificate passed, 1 a certificate failed (or a stage
could not be built), 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .handles import HandleError, collar_monotonicity_check, make_boundary_product
from .invariants import InvariantError, separate_components, bp_order
from .pipeline import (SCHEMA, ConfigError, PipelineConfig, StageError, _build_handle,
                       _summary, flatten_certificates, load_config, load_graph,
                       plan_iterated_surgeries, run_invariants, run_pipeline, run_stage,
                       write_report, write_stage_csv)
from .profiles import ProfileError

COMMANDS = ("construct", "deform", "handle", "invariant", "pipeline", "verify")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pscmoduli", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="INI configuration file")
        s.add_argument("--out", help="output directory (overrides [output] out_dir)")
        s.add_argument("--grid-scale", type=float, default=None,
                       help="multiply every sampling resolution")
        s.add_argument("--seed", type=int, default=None,
                       help="seed for randomized test metrics")
        if name == "verify":
            s.add_argument("--report", required=True, help="pipeline report to re-check")
            s.add_argument("--rescale", type=float, default=2.0,
                           help="resolution factor for the re-check")
        if name == "invariant":
            s.add_argument("--report", help="pipeline report certifying the boundary product")
    return p


def _header(command: str, cfg: PipelineConfig) -> dict:
    return {"schema": SCHEMA, "version": __version__, "command": command,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "config": cfg.to_dict()}


def _finish(report: dict, certs: dict, cfg: PipelineConfig, command: str) -> int:
    report["certificate_list"] = flatten_certificates(certs)
    report["summary"] = _summary(certs)
    code = 0 if report["summary"]["all_passed"] else 1
    report["status"] = "ok" if code == 0 else "failed"
    report["exit_code"] = code
    path = write_report(report, cfg.out_dir, command)
    print(f"{command}: {report['summary']['passed']}/{report['summary']['certificates']} "
          f"certificates passed; report {path}")
    for name in report["summary"]["failed"]:
        print(f"  FAILED: {name}")
    return code


def _first_stage(cfg: PipelineConfig):
    single = replace(cfg, stages=1)
    plan = plan_iterated_surgeries(single)
    return plan, plan.stages[0], plan.constructions[0]


def cmd_construct(cfg: PipelineConfig) -> int:
    plan, sp, con = _first_stage(cfg)
    rec = run_stage(sp, con, cfg, plan.c, plan.delta)
    report = _header("construct", cfg)
    report["stage"] = {"plan": sp.to_dict(), "geometry": con.geometry.to_dict(),
                       "certificates": {k: v.to_dict() for k, v in rec.certificates.items()}}
    write_stage_csv(rec, Path(cfg.out_dir), cfg.scaled(256))
    certs = {k: v for k, v in rec.certificates.items()}
    return _finish(report, certs, cfg, "construct")


def cmd_deform(cfg: PipelineConfig) -> int:
    plan, sp, con = _first_stage(cfg)
    rec = run_stage(sp, con, cfg, plan.c, plan.delta)
    report = _header("deform", cfg)
    report["stage"] = rec.to_dict()
    return _finish(report, rec.all_certificates(), cfg, "deform")


def cmd_handle(cfg: PipelineConfig) -> int:
    plan, sp, con = _first_stage(cfg)
    rec = run_stage(sp, con, cfg, plan.c, plan.delta)
    hm = _build_handle(rec, cfg)
    mono = collar_monotonicity_check(hm, points=cfg.scaled(cfg.collar_points),
                                     r_points=cfg.scaled(cfg.chart_points))
    prod = make_boundary_product(hm, cfg.Lambda_hint, points=cfg.scaled(cfg.collar_points),
                                 r_points=cfg.scaled(cfg.chart_points))
    report = _header("handle", cfg)
    report["handle"] = hm.to_dict()
    report["collar_monotonicity"] = {k: v.to_dict() for k, v in mono.items()}
    report["boundary_product"] = prod.to_dict()
    certs = {f"handle: {k}": v for k, v in hm.certificates.items()}
    certs.update({f"collar monotonicity {k}": v for k, v in mono.items()})
    certs["boundary product: collar"] = prod.collar
    certs["boundary product: extension"] = prod.extension
    return _finish(report, certs, cfg, "handle")


def cmd_invariant(cfg: PipelineConfig, report_path: str | None) -> int:
    report = _header("invariant", cfg)
    certified = False
    if report_path is not None:
        prev = json.loads(Path(report_path).read_text())
        bp = prev.get("handles", {}).get("boundary_product", {})
        certified = bool(bp.get("passed"))
    graph = load_graph(cfg)
    sep = separate_components(cfg.k, cfg.q, bp_order(cfg.k, cfg.bp_override), cfg.p_list)
    report["separation"] = sep.to_dict()
    report["boundary_product_certified"] = certified
    if graph is not None:
        from .invariants import intersection_matrix, s_invariant, signature, fraction_str
        sig = signature(intersection_matrix(graph))
        report["graph"] = {"signature": sig, "s": fraction_str(s_invariant(sig, cfg.k))}
    report["verdict"] = sep.verdict
    report["status"] = "ok"
    report["exit_code"] = 0
    path = write_report(report, cfg.out_dir, "invariant")
    print(f"invariant: {sep.verdict}; report {path}")
    return 0


def cmd_pipeline(cfg: PipelineConfig) -> int:
    res = run_pipeline(cfg)
    s = res.report["summary"]
    print(f"pipeline: {s['passed']}/{s['certificates']} certificates passed; "
          f"{res.report.get('verdict', res.report.get('error', ''))}")
    for name in s["failed"]:
        print(f"  FAILED: {name}")
    return res.exit_code


def cmd_verify(cfg: PipelineConfig | None, report_path: str, rescale: float,
               out: str | None) -> int:
    """Re-run the pipeline of ``report_path`` at ``rescale`` times the resolution."""
    prev = json.loads(Path(report_path).read_text())
    if prev.get("schema") != SCHEMA:
        raise ConfigError(f"unsupported report schema {prev.get('schema')!r}")
    if cfg is None:
        d = dict(prev["config"])
        for key in ("p_list", "a_tensor_sq_max", "mixed_max"):
            d[key] = tuple(d[key])
        cfg = PipelineConfig(**d)
    cfg = replace(cfg, grid_scale=cfg.grid_scale * rescale,
                  out_dir=out or str(Path(report_path).parent / "verify"))
    res = run_pipeline(cfg, refine=False)
    new = {c["name"]: c for c in res.report.get("certificate_list", [])}
    problems = []
    for c in prev.get("certificate_list", []):
        if not c["passed"]:
            continue
        n = new.get(c["name"])
        if n is None or not n["passed"]:
            problems.append(f"{c['name']}: no longer passes")
            continue
        m0, m1 = c["min_margin"], n["min_margin"]
        if isinstance(m0, float) and isinstance(m1, float) and m0 > 0 and m1 < 0.5 * m0:
            problems.append(f"{c['name']}: margin {m1:.6g} below half of {m0:.6g}")
    report = {"schema": SCHEMA, "version": __version__, "command": "verify",
              "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
              "source_report": str(report_path), "rescale": rescale,
              "rechecked": sum(1 for c in prev.get("certificate_list", []) if c["passed"]),
              "problems": problems, "status": "ok" if not problems else "failed"}
    report["exit_code"] = 0 if not problems else 1
    path = write_report(report, cfg.out_dir, "verify")
    print(f"verify: {report['rechecked']} passing certificates re-checked at x{rescale}; "
          f"{len(problems)} problems; report {path}")
    for p in problems:
        print(f"  {p}")
    return report["exit_code"]


def cli_main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    overrides = {"grid_scale": args.grid_scale, "seed": args.seed, "out_dir": args.out}
    try:
        cfg = None
        if args.config is not None:
            cfg = load_config(args.config, **overrides)
        elif args.command != "verify":
            print("error: --config is required", file=sys.stderr)
            return 2
        if args.command == "verify":
            return cmd_verify(cfg, args.report, args.rescale, args.out)
        if args.command == "invariant":
            return cmd_invariant(cfg, args.report)
        return {"construct": cmd_construct, "deform": cmd_deform, "handle": cmd_handle,
                "pipeline": cmd_pipeline}[args.command](cfg)
    except (ConfigError, InvariantError, OSError, json.JSONDecodeError, KeyError,
            TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StageError, ProfileError, HandleError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
