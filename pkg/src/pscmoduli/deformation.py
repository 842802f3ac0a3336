"""Deformation of the surgery metric through positive scalar curvature.

The warping function ``h`` is moved linearly to ``h_inf`` (``sin r`` near
the pole, constant ``c`` beyond R') along ``h_tau = (1 - tau) h + tau h_inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curvature import (MARGIN_FLOOR, DoublyWarpedMetric, PositivityCertificate,
                        certify_positive, h_tau, min_ricci, scalar_tau_family)
from .profiles import ProfileError, SineSegment, WarpProfile, constant, signed_blend

TAU_POINTS = 64
SAMPLES_PER_UNIT = 4096
C_SAFETY = 0.9


@dataclass(frozen=True)
class DeformationPlan:
    h: WarpProfile
    h_inf: WarpProfile
    psi: WarpProfile
    c: float
    delta: float
    R_prime: float
    R_double_prime: float
    a: float
    tau_points: int = TAU_POINTS
    samples_per_unit: int = SAMPLES_PER_UNIT

    @property
    def tau_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.tau_points)

    @property
    def r_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.a, max(16, int(math.ceil(self.a * self.samples_per_unit)) + 1))


@dataclass(frozen=True)
class CChoice:
    c: float
    lam: float
    mu: float
    lhs: float
    rhs: float

    def to_dict(self) -> dict:
        return {"c": self.c, "lambda": self.lam, "mu": self.mu,
                "inequality_lhs": self.lhs, "inequality_rhs": self.rhs}


def feasible_c_interval(delta: float, R_prime: float) -> tuple[float, float]:
    """``(sin delta, sin delta + cos delta (R' - delta)]``."""
    return math.sin(delta), math.sin(delta) + math.cos(delta) * (R_prime - delta)


def build_h_infinity(c: float, delta: float, R_prime: float, r_end: float = 1e3) -> WarpProfile:
    """``sin r`` on ``[0, delta]``, strictly concave blend to ``c`` on
    ``[delta, R']``, constant ``c`` beyond."""
    lo, hi = feasible_c_interval(delta, R_prime)
    if not (0 < delta < R_prime) or not (lo < c <= hi):
        raise ProfileError(
            f"infeasible (c={c:.6g}, delta={delta:.6g}, R'={R_prime:.6g}); "
            f"c must lie in ({lo:.6g}, {hi:.6g}]")
    start = (math.sin(delta), math.cos(delta), -math.sin(delta))
    try:
        blend, _ = signed_blend(delta, R_prime, start, (c, 0.0, 0.0), -1, max_degree=20)
    except ProfileError as exc:
        raise ProfileError(
            f"no concave blend for c={c:.6g} on [{delta:.6g}, {R_prime:.6g}]; "
            f"c must lie in ({lo:.6g}, {hi:.6g}]: {exc}") from exc
    return WarpProfile((SineSegment(0.0, delta), blend,
                        constant(R_prime, max(r_end, R_prime + 1.0), c)), name="h_inf")


def shape_constants(h: WarpProfile, samples: int = 4097) -> tuple[float, float]:
    r = np.linspace(0.25, 0.5, samples)
    lam = max(float(np.max(np.abs(h.d2(r)))), float(h.d2(0.5)))
    return lam, float(h.value(0.25))


def c_inequality(c: float, lam: float, mu: float, n: int) -> tuple[float, float]:
    """``(c^2 lambda + c (n - 2 + mu lambda), (n - 2) mu)``."""
    return c * c * lam + c * (n - 2 + mu * lam), (n - 2) * mu


def choose_c(h: WarpProfile, n: int, safety: float = C_SAFETY,
             c_max: float | None = None) -> CChoice:
    """Largest ``c = 2^-j`` with ``c^2 lambda + c (n-2+mu lambda) < safety (n-2) mu``.

    ``c_max`` (e.g. just below R') caps the start of the halving search so
    that a concave ``h_inf`` exists.
    """
    lam, mu = shape_constants(h)
    c = 1.0
    while True:
        lhs, rhs = c_inequality(c, lam, mu, n)
        if lhs < safety * rhs and (c_max is None or c < c_max):
            return CChoice(c, lam, mu, lhs, rhs)
        c /= 2
        if c < 1e-12:
            raise ProfileError("no admissible c found")


def choose_delta(c: float, R_prime: float, step: float = 1e-3) -> float:
    """Largest ``delta`` on a ``step`` grid with ``sin delta < c``, ``delta < R'``
    and a strictly concave ``h_inf`` blend on ``[delta, R']``."""
    top = min(math.asin(min(c, 1.0)), R_prime)
    j = int(math.floor(top / step))
    while j > 0:
        d = j * step
        if math.sin(d) < c and d < R_prime:
            try:
                build_h_infinity(c, d, R_prime)
                return d
            except ProfileError:
                pass
        j -= 1
    raise ProfileError(f"no delta admits a concave h_inf for c={c:.6g}, R'={R_prime:.6g}")


def uniform_constants(n: int, m: int, h_reference: WarpProfile, R_prime: float,
                      safety: float = C_SAFETY) -> tuple[CChoice, float]:
    """One ``(c, delta)`` pair for every surgery stage.

    Depends only on ``n`` and ``h`` on ``[0, 1/2]``, which is the same for all
    stages (the near-zero shaping of h does not involve k).
    """
    del m
    choice = choose_c(h_reference, n, safety, c_max=R_prime)
    return choice, choose_delta(choice.c, R_prime)


def dagger(h: WarpProfile, c: float, n: int, tau, r):
    """``c h'' [(1-tau) h + tau c] + (n-2)(h - c) + (n-2) c (1-tau) h'^2``."""
    hv, h1, h2 = h.evaluate(np.asarray(r, dtype=float))
    tau = np.asarray(tau, dtype=float)
    return (c * h2 * ((1 - tau) * hv + tau * c) + (n - 2) * (hv - c)
            + (n - 2) * c * (1 - tau) * h1**2)


@dataclass
class DeformationReport:
    plan: DeformationPlan
    overall: PositivityCertificate
    regimes: dict
    dagger: PositivityCertificate
    monotone_ok: bool
    monotone_worst: float
    static: PositivityCertificate | None = None
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        certs = [self.overall, self.dagger, *self.regimes.values()]
        if self.static is not None:
            certs.append(self.static)
        return all(c.passed for c in certs) and self.monotone_ok

    def certificates(self) -> list[PositivityCertificate]:
        out = [self.overall, *self.regimes.values(), self.dagger]
        if self.static is not None:
            out.append(self.static)
        return out

    def to_dict(self) -> dict:
        return {"c": self.plan.c, "delta": self.plan.delta, "passed": self.passed,
                "overall": self.overall.to_dict(),
                "regimes": {k: v.to_dict() for k, v in self.regimes.items()},
                "dagger": self.dagger.to_dict(),
                "h_tau_log_derivative_monotone": self.monotone_ok,
                "monotone_worst_increase": self.monotone_worst,
                "static_region": None if self.static is None else self.static.to_dict(),
                **self.extras}


def _tau_r_cert(quantity, tau_n, r_lo, r_hi, r_n, name, floor=MARGIN_FLOOR, strict=True,
                refine=True):
    return certify_positive(quantity, [(0.0, 1.0), (r_lo, r_hi)], [tau_n, r_n], name=name,
                            margin_floor=floor, strict=strict, refine=refine,
                            axis_names=["tau", "r"])


def deform_path(plan: DeformationPlan, n: int, m: int, connection_bound: float = 0.0,
                refine: bool = True) -> DeformationReport:
    """Certify ``scal > 0`` along the whole path, overall and per regime.

    Regimes: ``r <= 1/4`` (``psi`` constant: ``-h_tau'' >= 0`` and
    ``h_tau' <= 1`` with the full scalar strictly positive), ``[1/4, R'']``
    (the dagger bracket and the scalar), ``r >= R''`` (every term of the
    scalar non-negative, non-strict floor 0).

    ``connection_bound`` models the connection's contribution on
    ``(delta/2, delta)``; there the path does not depend on ``tau`` so the
    bound enters only the static certificate of the ``tau = 0`` metric on
    ``[0, delta]`` and leaves every path certificate unchanged.
    """
    h, hi, psi = plan.h, plan.h_inf, plan.psi
    per = plan.samples_per_unit
    tn = plan.tau_points
    scal = lambda t, r: scalar_tau_family(h, hi, psi, n, m, t, r)
    count = lambda lo, up: max(16, int(math.ceil((up - lo) * per)) + 1)

    d = plan.delta
    a = plan.a
    overall = _tau_r_cert(scal, tn, 0.0, a, count(0.0, a), "scalar along deformation path",
                          refine=refine)

    def inner_signs(t, r):
        _, h1, h2 = h_tau(h, hi, t, r)
        return np.minimum(-h2, 1 - h1)

    def outer(t, r):
        hv, h1, h2 = h_tau(h, hi, t, r)
        p, p1, p2 = psi.evaluate(r)
        terms = [-h2 / hv, -p2 / p, (1 - h1**2) / hv**2, (1 - p1**2) / p**2, -h1 * p1 / (hv * p)]
        return np.minimum.reduce([np.broadcast_to(x, np.broadcast(t, r).shape) for x in terms])

    R2 = plan.R_double_prime
    regimes = {
        "inner r<=1/4": _tau_r_cert(scal, tn, 0.0, 0.25, count(0.0, 0.25),
                                    "inner regime: scal", refine=refine),
        "inner r<=1/4 signs": _tau_r_cert(inner_signs, tn, 0.0, 0.25, count(0.0, 0.25),
                                          "inner regime: -h_tau'' >= 0 and h_tau' <= 1",
                                          floor=-1e-12, strict=False, refine=refine),
        "middle 1/4<=r<=R''": _tau_r_cert(scal, tn, 0.25, R2, count(0.25, R2),
                                          "middle regime: scal", refine=refine),
        "outer r>=R''": _tau_r_cert(outer, tn, R2, a, count(R2, a),
                                    "outer regime: term-wise non-negativity", floor=0.0,
                                    strict=False, refine=refine),
    }
    dag = _tau_r_cert(lambda t, r: dagger(h, plan.c, n, t, r), tn, 0.25, R2, count(0.25, R2),
                      "dagger bracket", refine=refine)
    # h_tau'/h_tau nonincreasing in tau on [1/4, R'']
    r = np.linspace(0.25, R2, count(0.25, R2))
    T, Rr = np.meshgrid(plan.tau_grid, r, indexing="ij")
    hv, h1, _ = h_tau(h, hi, T, Rr)
    inc = np.diff(h1 / hv, axis=0)
    worst = float(inc.max())
    static = None
    if d > 0:
        G0 = DoublyWarpedMetric(n, m, h, psi, (0.0, a))
        lo = d / 2

        def static_q(r):
            from .curvature import scalar_doubly_warped
            return np.minimum(scalar_doubly_warped(G0, r), min_ricci(G0, r)) - \
                connection_bound * ((r > lo) & (r < d))

        static = certify_positive(static_q, [(0.0, d)], [count(0.0, d)],
                                  name="static region r<=delta (tau-independent), "
                                       "Ricci and scalar minus connection bound",
                                  refine=refine, axis_names=["r"])
    return DeformationReport(plan, overall, regimes, dag, worst <= 1e-12, worst, static)


def make_plan(h: WarpProfile, psi: WarpProfile, c: float, delta: float, R_prime: float,
              R_double_prime: float, a: float, tau_points: int = TAU_POINTS,
              samples_per_unit: int = SAMPLES_PER_UNIT) -> DeformationPlan:
    h_inf = build_h_infinity(c, delta, R_prime, r_end=max(a, R_prime) + 1.0)
    return DeformationPlan(h, h_inf, psi, c, delta, R_prime, R_double_prime, a,
                           tau_points, samples_per_unit)
