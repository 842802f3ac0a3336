"""End-to-end workflow: iterated surgeries, deformation, handles, invariants.

Stages are planned from the last surgery backward so that each stage's
``k`` fits inside the ``kappa`` budget left by the stage after it; handles are
attached in depth-first order over the plumbing tree, the boundary is made
a product, and the s-invariants of the resulting family are reported.
"""

from __future__ import annotations

import configparser
import datetime as _dt
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .curvature import (DoublyWarpedMetric, PositivityCertificate, certify_positive,
                        certify_samples, min_ricci, scalar_doubly_warped)
from .deformation import (C_SAFETY, TAU_POINTS, DeformationReport, build_h_infinity,
                          deform_path, make_plan, uniform_constants)
from .handles import (CHART_POINTS, COLLAR_POINTS, JOIN_FRACTION, CollarDeformation,
                      DiscBundleStart, HandleModel, assemble_handle, disc_bundle_start,
                      handle_surgery_metric, collar_monotonicity_check, make_boundary_product,
                      sine_theta, synthesize_ambient)
from .curvature import DiscBundleModel
from .invariants import (PlumbingGraph, SeparationReport, bp_order, e8_graph,
                         intersection_matrix, load_plumbing, s_invariant,
                         separate_components, sigma_family, signature, fraction_str)
from .profiles import ProfileError
from .warp_profiles import (SurgeryConstruction, SurgeryParameters, construct_surgery_metric,
                            shape_h_near_zero, solve_base_ivp)

SCHEMA = 1


class ConfigError(ValueError):
    """The configuration is unreadable or inconsistent."""


class StageError(RuntimeError):
    """A stage could not be planned or constructed."""


# -- configuration --------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


@dataclass(frozen=True)
class PipelineConfig:
    """Run-level parameters.  ``n = 2k`` and ``m = 2k - 1``."""

    # [run]
    k: int = 2
    stages: int = 2
    root: int = 0
    seed: int = 0
    grid_scale: float = 1.0
    # [plumbing]
    plumbing_file: str | None = None
    p_list: tuple[int, ...] = (0, 1)
    q: int = 1
    bp_override: int | None = None
    # [surgery]
    alpha: float = 2.0
    N: float = 1.0
    R_over_N: float = 1.0
    later_R_over_N: float | None = None
    R_prime: float = 0.2
    slope_slack: float = 0.01
    blend_width: float = 0.02
    rho_fraction: float = 0.5
    r_max: float = 50.0
    ode_tol: float = 1e-10
    bend_factor: float = 4.0
    k_min: float = 1e-3
    chain_safety: float = 0.999
    a_inflation: float = 1.0
    # [deformation]
    c: float | None = None
    delta: float | None = None
    c_safety: float = C_SAFETY
    tau_points: int = TAU_POINTS
    samples_per_unit: int = 4096
    # [perturbation]
    a_tensor_sq_max: tuple[float, ...] = (0.0,)
    mixed_max: tuple[float, ...] = (0.0,)
    # [handles]
    join_fraction: float = JOIN_FRACTION
    eps_fraction: float = 0.1
    eps_prime_fraction: float = 0.5
    Lambda_hint: float = 1.0
    theta_N0: float = 1.0
    central_radius: float = 1.0
    collar_points: int = COLLAR_POINTS
    chart_points: int = CHART_POINTS
    # [output]
    out_dir: str = "out"
    source: str = ""

    SECTIONS = {
        "run": ("k", "stages", "root", "seed", "grid_scale"),
        "plumbing": ("plumbing_file", "p_list", "q", "bp_override"),
        "surgery": ("alpha", "N", "R_over_N", "later_R_over_N", "R_prime", "slope_slack",
                    "blend_width", "rho_fraction", "r_max", "ode_tol", "bend_factor",
                    "k_min", "chain_safety", "a_inflation"),
        "deformation": ("c", "delta", "c_safety", "tau_points", "samples_per_unit"),
        "perturbation": ("a_tensor_sq_max", "mixed_max"),
        "handles": ("join_fraction", "eps_fraction", "eps_prime_fraction", "Lambda_hint",
                    "theta_N0", "central_radius", "collar_points", "chart_points"),
        "output": ("out_dir",),
    }

    @property
    def n(self) -> int:
        return 2 * self.k

    @property
    def m(self) -> int:
        return 2 * self.k - 1

    def validate(self) -> None:
        if self.n != self.m + 1:
            raise ConfigError("the iteration needs n = m + 1")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.stages < 1:
            raise ConfigError("at least one stage is required")
        positive = ("alpha", "N", "R_over_N", "R_prime", "slope_slack", "blend_width",
                    "rho_fraction", "r_max", "ode_tol", "bend_factor", "k_min",
                    "chain_safety", "a_inflation", "c_safety", "grid_scale",
                    "join_fraction", "eps_fraction", "eps_prime_fraction", "Lambda_hint",
                    "theta_N0", "central_radius")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("tau_points", "samples_per_unit", "collar_points", "chart_points"):
            if getattr(self, name) < 3:
                raise ConfigError(f"{name} must be at least 3")
        if self.later_R_over_N is not None and not self.later_R_over_N > 0:
            raise ConfigError("later_R_over_N must be positive")
        if not self.p_list or len(set(self.p_list)) != len(self.p_list):
            raise ConfigError("p_list must be non-empty with distinct entries")
        if any(x < 0 for x in self.a_tensor_sq_max + self.mixed_max):
            raise ConfigError("perturbation bounds must be non-negative")

    def stage_bound(self, values: tuple[float, ...], i: int) -> float:
        return values[min(i, len(values) - 1)]

    def scaled(self, count: int) -> int:
        return max(3, int(round(count * self.grid_scale)))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("p_list", "a_tensor_sq_max", "mixed_max"):
            d[key] = list(d[key])
        return d


_CONVERTERS = {"p_list": _ints, "a_tensor_sq_max": _floats, "mixed_max": _floats}


def _convert(name: str, raw: str, default):
    raw = raw.strip()
    if name in _CONVERTERS:
        return _CONVERTERS[name](raw)
    if raw.lower() in ("", "none", "auto"):
        if name in ("plumbing_file", "later_R_over_N", "c", "delta", "bp_override"):
            return None
        raise ConfigError(f"{name} needs a value")
    kind = {f.name: f.type for f in fields(PipelineConfig)}[name]
    if "int" in kind and "float" not in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def load_config(path, **overrides) -> PipelineConfig:
    """Read an INI-style config; unknown sections or keys are errors.

    Relative ``plumbing_file`` paths are resolved against the config's folder.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in PipelineConfig.SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in PipelineConfig.SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                values[key] = _convert(key, raw, None)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    if values.get("plumbing_file"):
        pf = Path(values["plumbing_file"])
        if not pf.is_absolute():
            values["plumbing_file"] = str((path.parent / pf).resolve())
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = PipelineConfig(**values, source=str(path))
    cfg.validate()
    return cfg


def load_graph(cfg: PipelineConfig) -> PlumbingGraph | None:
    if cfg.plumbing_file is None:
        return None
    try:
        graph = load_plumbing(cfg.plumbing_file)
    except OSError as exc:
        raise ConfigError(f"cannot read plumbing file: {exc}") from exc
    if graph.k != cfg.k:
        raise ConfigError(f"plumbing k={graph.k} differs from run k={cfg.k}")
    return graph


# -- stage planning -------------------------------------------------------------

@dataclass(frozen=True)
class StagePlan:
    index: int
    k: float
    kappa: float
    R_over_N: float
    rescale_factor: float
    budget: float | None
    chain_margin: float | None
    kappa_deformed: float | None = None

    @property
    def chain_ok(self) -> bool:
        return self.chain_margin is None or self.chain_margin > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chain_ok"] = self.chain_ok
        return d


@dataclass
class Plan:
    stages: list
    constructions: list
    c: float
    delta: float
    c_choice: dict
    later_R_over_N: float
    later_R_over_N_overridden: bool
    base: tuple = field(repr=False, default=None)


def stage_slack(cfg: PipelineConfig, R_over_N: float) -> float:
    """Configured slope slack, capped at a quarter of ``1 - cos(R/N)`` so the
    straightening target stays below 1."""
    return min(cfg.slope_slack, (1 - math.cos(R_over_N)) / 4)


def stage_parameters(cfg: PipelineConfig, R_over_N: float, k_max: float = 1.0
                     ) -> SurgeryParameters:
    return SurgeryParameters(
        n=cfg.n, m=cfg.m, R=R_over_N * cfg.N, N=cfg.N, alpha=cfg.alpha, R_prime=cfg.R_prime,
        slope_slack=stage_slack(cfg, R_over_N), blend_width=cfg.blend_width,
        rho_fraction=cfg.rho_fraction, r_max=cfg.r_max, ode_tol=cfg.ode_tol,
        bend_factor=cfg.bend_factor, k_max=k_max, k_min=cfg.k_min)


def plan_iterated_surgeries(cfg: PipelineConfig) -> Plan:
    """Choose ``k_i`` from the last stage backward.

    The ``kappa`` of each finished stage is the budget of the stage before:
    ``k_{i-1} (1 + alpha) < kappa_i`` is enforced through ``k_max`` and then
    asserted.  Later stages use ``R/N = delta/4`` unless overridden.
    """
    base = solve_base_ivp(cfg.r_max, cfg.ode_tol)
    h_ref = shape_h_near_zero(base[1], cfg.R_prime)
    choice, delta = uniform_constants(cfg.n, cfg.m, h_ref, cfg.R_prime, cfg.c_safety)
    c = choice.c if cfg.c is None else cfg.c
    if cfg.delta is not None:
        delta = cfg.delta
    later = delta / 4 if cfg.later_R_over_N is None else cfg.later_R_over_N
    plans: list = [None] * cfg.stages
    cons: list = [None] * cfg.stages
    budget = None
    for i in reversed(range(cfg.stages)):
        ratio = cfg.R_over_N if i == 0 else later
        k_max = 1.0 if budget is None else min(1.0, cfg.chain_safety * budget / (1 + cfg.alpha))
        try:
            con = construct_surgery_metric(stage_parameters(cfg, ratio, k_max), base)
        except (ProfileError, ValueError) as exc:
            raise StageError(f"stage {i} (R/N={ratio:.6g}, k_max={k_max:.6g}): {exc}") from exc
        g = con.geometry
        margin = None if budget is None else budget - g.k * (1 + cfg.alpha)
        plans[i] = StagePlan(i, g.k, g.kappa, ratio, g.lam, budget, margin)
        cons[i] = con
        budget = g.kappa
    for p in plans:
        if not p.chain_ok:
            raise StageError(f"stage {p.index}: chain condition k(1+alpha) < kappa fails "
                             f"(margin {p.chain_margin:.3g})")
    return Plan(plans, cons, c, delta, choice.to_dict(), later, cfg.later_R_over_N is not None,
                base)


# -- stages ---------------------------------------------------------------------

@dataclass
class StageRecord:
    plan: StagePlan
    construction: SurgeryConstruction
    deformation: DeformationReport
    terminal_metric: DoublyWarpedMetric
    terminal_info: dict
    h_inf: object
    certificates: dict
    shrink_path: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.all_certificates().values())

    def all_certificates(self) -> dict:
        out = dict(self.certificates)
        for j, cert in enumerate(self.deformation.certificates()):
            out[f"deformation: {cert.quantity}"] = cert
        return out

    def to_dict(self) -> dict:
        g = self.construction.geometry
        return {"plan": self.plan.to_dict(), "geometry": g.to_dict(),
                "certificates": {k: v.to_dict() for k, v in self.certificates.items()},
                "deformation": self.deformation.to_dict(),
                "terminal": self.terminal_info, "shrink_path": self.shrink_path,
                "passed": self.passed}


def _boundary_cert(metric: DoublyWarpedMetric, R: float, N: float, rho: float, name: str
                   ) -> PositivityCertificate:
    a = metric.domain[1]
    hv = float(metric.h.value(a))
    pv, p1, _ = metric.psi.evaluate(a)
    err = np.array([hv - rho, pv - N * math.sin(R / N), p1 - math.cos(R / N)])
    cert = certify_samples(1e-8 - np.abs(err), [np.array([0.0, 1.0, 2.0])], name,
                           {"boundary": ["h - rho", "psi - N sin(R/N)", "psi' - cos(R/N)"]},
                           margin_floor=0.0, strict=False)
    cert.extra["errors"] = [float(e) for e in err]
    return cert


def run_stage(plan: StagePlan, con: SurgeryConstruction, cfg: PipelineConfig, c: float,
              delta: float, refine: bool = True) -> StageRecord:
    """Certify the construction, run the deformation and record the gluing data."""
    g = con.geometry
    G = con.metric
    per = cfg.scaled(cfg.samples_per_unit)
    a_s = G.domain[1]
    R2 = g.landmarks["R''"] * g.lam
    certs = {}
    certs["Ricci on [0, R'']"] = certify_positive(
        lambda r: min_ricci(G, r), [(0.0, R2)], [max(16, int(math.ceil(R2 * per)) + 1)],
        name="minimum Ricci curvature on [0, R'']", refine=refine, axis_names=["r"])
    certs["scalar on [0, a]"] = certify_positive(
        lambda r: scalar_doubly_warped(G, r), [(0.0, a_s)],
        [max(16, int(math.ceil(a_s * per)) + 1)], name="scalar curvature on [0, a]",
        refine=refine, axis_names=["r"])
    R = plan.R_over_N * cfg.N
    certs["boundary data"] = _boundary_cert(G, R, cfg.N, g.rho,
                                            "boundary matches the round ambient sphere")
    U = con.metric_unscaled
    dplan = make_plan(U.h, U.psi, c, delta, cfg.R_prime, g.landmarks["R''"], U.domain[1],
                      tau_points=cfg.scaled(cfg.tau_points), samples_per_unit=per)
    bound = cfg.stage_bound(cfg.a_tensor_sq_max, plan.index)
    report = deform_path(dplan, cfg.n, cfg.m, connection_bound=bound, refine=refine)
    h_inf = build_h_infinity(c, delta, cfg.R_prime, r_end=max(100.0, 2 * U.domain[1]))
    G_inf, info = handle_surgery_metric(con, h_inf)
    certs["boundary data after deformation"] = _boundary_cert(
        G_inf, R, cfg.N, info["rho"], "deformed metric matches the round ambient sphere")
    rho0, rho1 = g.rho, info["rho"]
    taus = np.linspace(0.0, 1.0, 9)
    shrink = [{"tau": float(t), "rho": float((1 - t) * rho0 + t * rho1)} for t in taus]
    vals = np.array([s["rho"] for s in shrink])
    certs["ambient shrink path"] = certify_samples(
        -np.diff(vals), [taus[1:]], "rho(tau) = (1-tau) rho + tau rho_inf non-increasing",
        {"tau": [0.0, 1.0, taus.size]}, margin_floor=0.0, strict=False)
    info = dict(info, kappa_deformed=info["kappa"])
    plan = StagePlan(**{**asdict(plan), "kappa_deformed": info["kappa"]})
    return StageRecord(plan, con, report, G_inf, info, h_inf, certs, shrink)


# -- handles --------------------------------------------------------------------

@dataclass
class HandleRecord:
    position: int
    node: str
    stage: int
    handle: HandleModel
    monotonicity: dict

    @property
    def passed(self) -> bool:
        return self.handle.passed and all(c.passed for c in self.monotonicity.values())

    def certificates(self) -> dict:
        out = {f"handle: {k}": v for k, v in self.handle.certificates.items()}
        out.update({f"collar monotonicity {k}": v for k, v in self.monotonicity.items()})
        return out

    def to_dict(self) -> dict:
        return {"position": self.position, "node": self.node, "stage": self.stage,
                "handle": self.handle.to_dict(),
                "collar_monotonicity": {k: v.to_dict() for k, v in self.monotonicity.items()},
                "passed": self.passed}


@dataclass
class HandleRun:
    order: list
    central: DiscBundleStart
    records: list
    product: CollarDeformation

    @property
    def passed(self) -> bool:
        return (self.central.passed and self.product.passed
                and all(r.passed for r in self.records))

    def to_dict(self) -> dict:
        return {"order": self.order, "central_disc_bundle": self.central.to_dict(),
                "handles": [r.to_dict() for r in self.records],
                "boundary_product": self.product.to_dict(), "passed": self.passed}


def _build_handle(rec: StageRecord, cfg: PipelineConfig) -> HandleModel:
    G = rec.terminal_metric
    a = G.domain[1]
    eps = cfg.eps_fraction * a
    phi = synthesize_ambient(float(G.h.value(a)), eps)
    lam = rec.terminal_info["lambda"]
    R = rec.plan.R_over_N * cfg.N
    i = rec.plan.index
    return assemble_handle(
        G, cfg.N, R, phi, epsilon_prime=cfg.eps_prime_fraction * eps,
        delta=rec.deformation.plan.delta * lam,
        a_tensor_sq_max=cfg.stage_bound(cfg.a_tensor_sq_max, i),
        mixed_max=cfg.stage_bound(cfg.mixed_max, i),
        samples_per_unit=cfg.scaled(cfg.samples_per_unit))


def run_handles(cfg: PipelineConfig, records: list, graph: PlumbingGraph | None,
                refine: bool = True) -> HandleRun:
    """Central disc bundle, then one handle per plumbing node in depth-first
    order (node ``j`` uses stage ``min(j, last)``), then the boundary product."""
    N0 = cfg.theta_N0
    s_max = min(cfg.central_radius, 0.999 * N0 * math.pi / 2)
    model = DiscBundleModel(sine_theta(N0, s_max), float(cfg.n - 1),
                            cfg.stage_bound(cfg.a_tensor_sq_max, 0),
                            cfg.stage_bound(cfg.mixed_max, 0), cfg.n, s_max)
    central = disc_bundle_start(model.theta, model)
    if graph is None:
        order = list(range(len(records)))
        labels = [f"stage{i}" for i in order]
    else:
        order = graph.dfs_order(cfg.root)
        labels = [graph.labels[i] if graph.labels else str(i) for i in order]
    built: dict = {}
    out = []
    for pos, (node, label) in enumerate(zip(order, labels)):
        st = min(pos, len(records) - 1)
        if st not in built:
            hm = _build_handle(records[st], cfg)
            mono = collar_monotonicity_check(hm, points=cfg.scaled(cfg.collar_points),
                                             r_points=cfg.scaled(cfg.chart_points))
            built[st] = (hm, mono)
        hm, mono = built[st]
        out.append(HandleRecord(pos, label, st, hm, mono))
    product = make_boundary_product(out[-1].handle, cfg.Lambda_hint,
                                    points=cfg.scaled(cfg.collar_points),
                                    r_points=cfg.scaled(cfg.chart_points), refine=refine)
    return HandleRun(order, central, out, product)


# -- invariants -----------------------------------------------------------------

@dataclass
class InvariantRun:
    separation: SeparationReport
    graph_signature: int | None
    graph_s: object
    graph_consistent: bool | None

    def to_dict(self) -> dict:
        return {"separation": self.separation.to_dict(),
                "graph_signature": self.graph_signature,
                "graph_s": None if self.graph_s is None else fraction_str(self.graph_s),
                "graph_matches_family_p0": self.graph_consistent}


def run_invariants(cfg: PipelineConfig, graph: PlumbingGraph | None,
                   product: CollarDeformation | None) -> InvariantRun:
    """Exact s-invariants; refuses unless the boundary product was certified."""
    if product is None or not product.passed:
        raise StageError("collar productization not certified: the s-invariant formula "
                         "does not apply")
    bp = bp_order(cfg.k, cfg.bp_override)
    sep = separate_components(cfg.k, cfg.q, bp, cfg.p_list)
    sig = s = consistent = None
    if graph is not None:
        sig = signature(intersection_matrix(graph))
        s = s_invariant(sig, cfg.k)
        consistent = sig == sigma_family(0, cfg.q, bp)
    return InvariantRun(sep, sig, s, consistent)


# -- the whole run --------------------------------------------------------------

@dataclass
class PipelineResult:
    config: PipelineConfig
    report: dict
    exit_code: int


def flatten_certificates(report_parts: dict) -> list[dict]:
    """``[{"name", "passed", "min_margin"}]`` in a fixed order."""
    return [{"name": name, "passed": bool(cert.passed),
             "min_margin": cert.min_margin, "stable": cert.stable}
            for name, cert in report_parts.items()]


def _summary(certs: dict) -> dict:
    failed = [name for name, c in certs.items() if not c.passed]
    return {"certificates": len(certs), "passed": len(certs) - len(failed),
            "failed": failed, "all_passed": not failed}


def run_pipeline(cfg: PipelineConfig, refine: bool = True, write: bool = True,
                 stages_only: bool = False) -> PipelineResult:
    """Plan, run every stage, attach handles, report invariants."""
    report = {"schema": SCHEMA, "version": __version__, "command": "pipeline",
              "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
              "config": cfg.to_dict()}
    certs: dict = {}
    graph = load_graph(cfg)
    try:
        plan = plan_iterated_surgeries(cfg)
    except StageError as exc:
        report.update(status="failed", error=str(exc), certificate_list=[],
                      summary={"certificates": 0, "passed": 0, "failed": [str(exc)],
                               "all_passed": False})
        return _finish(cfg, report, 1, write, [])
    report["plan"] = {"c": plan.c, "delta": plan.delta, "c_choice": plan.c_choice,
                      "later_R_over_N": plan.later_R_over_N,
                      "later_R_over_N_overridden": plan.later_R_over_N_overridden,
                      "stages": [p.to_dict() for p in plan.stages]}
    records = []
    for p, con in zip(plan.stages, plan.constructions):
        rec = run_stage(p, con, cfg, plan.c, plan.delta, refine)
        records.append(rec)
        certs.update({f"stage {p.index}: {k}": v for k, v in rec.all_certificates().items()})
    report["stages"] = [r.to_dict() for r in records]
    if not stages_only:
        hr = run_handles(cfg, records, graph, refine)
        certs["central disc bundle"] = _disc_cert(hr.central)
        for rec in hr.records:
            certs.update({f"handle {rec.position} ({rec.node}): {k}": v
                          for k, v in rec.certificates().items()})
        certs["boundary product: collar"] = hr.product.collar
        certs["boundary product: extension"] = hr.product.extension
        report["handles"] = hr.to_dict()
        try:
            inv = run_invariants(cfg, graph, hr.product)
            report["invariants"] = inv.to_dict()
            report["verdict"] = inv.separation.verdict
        except StageError as exc:
            report["invariants"] = {"refused": str(exc)}
            report["verdict"] = "no separation claim"
    report["certificate_list"] = flatten_certificates(certs)
    report["summary"] = _summary(certs)
    report["status"] = "ok" if report["summary"]["all_passed"] else "failed"
    return _finish(cfg, report, 0 if report["summary"]["all_passed"] else 1, write, records)


def _disc_cert(start: DiscBundleStart) -> PositivityCertificate:
    worst = min(start.certificates.values(), key=lambda c: c.min_margin)
    return PositivityCertificate("central disc bundle Ricci conditions on (0, R0]",
                                 {"R0": start.R0}, worst.min_margin, worst.argmin,
                                 "pass" if start.passed else "fail",
                                 extra={"R0": start.R0, "halvings": start.halvings})


def _finish(cfg, report, code, write, records) -> PipelineResult:
    report["exit_code"] = code
    if write:
        write_report(report, cfg.out_dir, "pipeline")
        out = Path(cfg.out_dir)
        for rec in records:
            write_stage_csv(rec, out, cfg.scaled(256))
    return PipelineResult(cfg, report, code)


# -- output ---------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def dump_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def write_report(report: dict, out_dir, name: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}_report.json"
    path.write_text(dump_report(report))
    return path


def comparable(report: dict) -> str:
    """The report text with the timestamp removed (for determinism checks)."""
    d = dict(report)
    d.pop("timestamp", None)
    return dump_report(d)


def write_stage_csv(rec: StageRecord, out: Path, samples_per_unit: int = 256) -> list[Path]:
    """``stage<i>_h.csv`` and ``stage<i>_psi.csv``: columns ``r, value, d1, d2``."""
    out.mkdir(parents=True, exist_ok=True)
    G = rec.construction.metric
    paths = []
    for name, prof in (("h", G.h), ("psi", G.psi)):
        p = out / f"stage{rec.plan.index}_{name}.csv"
        lo, hi = G.domain
        r = np.linspace(lo, hi, max(2, int((hi - lo) * samples_per_unit) + 1))
        prof.to_csv(p, r)
        paths.append(p)
    return paths
