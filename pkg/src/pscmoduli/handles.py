"""Handle attachment: tube curve, cap profile, collars and boundary products.

Coordinates: ``s`` runs along the handle axis (``s = 0`` is the centre of
the ``D^n`` cap, ``s = b`` is where the ambient boundary begins) and ``t`` is
the radial coordinate of the ``D^{m+1}`` factor.  The handle region is

    ds^2 + dt^2 + A(s)^2 ds^2_{n-1} + N^2 sin^2(t/N) ds^2_m,

cut out by the tube curve ``gamma(r) = (gamma_s(r), gamma_t(r))`` whose
induced metric is the surgery metric ``dr^2 + h^2 ds^2_{n-1} + psi^2 ds^2_m``.
The ambient manifold occupies ``s > b`` with sphere radius
``phi(b - s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline

from .curvature import (MARGIN_FLOOR, CoordinateMetricPath, DiscBundleModel,
                        DoublyWarpedMetric, PositivityCertificate, certify_positive,
                        certify_samples, collar_scalar, collar_H, ricci_disc_bundle,
                        scalar_from_derivatives)
from .fd_oracle import sphere_chart_metric
from .profiles import (SMOOTHSTEP, FunctionSegment, SineSegment, WarpProfile, constant,
                       from_second_derivative, sample_grid, signed_blend)
from .warp_profiles import (SurgeryConstruction, boundary_adjust_and_rescale, compute_kappa,
                            psi_of, wellposedness_margin)

SAMPLES_PER_UNIT = 4096
JOIN_FRACTION = 0.05
CHART_POINTS = 257
COLLAR_POINTS = 257
LAMBDA_CAP = 1e9
ANGLE = 1.1


class HandleError(ValueError):
    """A handle could not be assembled."""


# -- tube curve -----------------------------------------------------------------

def _slope_data(psi: WarpProfile, N: float, r):
    """``sin phi = gamma_t'``, ``cos phi = gamma_s'`` and ``(sin phi)'``."""
    p, p1, p2 = psi.evaluate(np.asarray(r, dtype=float))
    q = 1 - (p / N) ** 2
    if np.any(q <= 0):
        raise HandleError("psi reaches N: tube curve undefined")
    sin_phi = p1 / np.sqrt(q)
    dsin = (p2 * q + p1**2 * p / N**2) / q**1.5
    cos_sq = 1 - sin_phi**2
    return sin_phi, np.sqrt(np.maximum(cos_sq, 0.0)), dsin, cos_sq


@dataclass(frozen=True)
class TubeCurve:
    """``gamma(r) = (gamma_s(r), gamma_t(r))`` for ``r`` in ``[0, a]``."""

    gamma_s: WarpProfile
    gamma_t: WarpProfile
    psi: WarpProfile
    N: float
    a: float
    b: float
    _spline: Callable = field(repr=False, default=None)

    def angle_data(self, r):
        """``(sin phi, cos phi, phi_r)``; ``phi_r`` is ``+inf`` where ``cos phi = 0``."""
        s, c, ds, _ = _slope_data(self.psi, self.N, r)
        with np.errstate(divide="ignore", invalid="ignore"):
            phi_r = np.where(c > 0, ds / np.where(c > 0, c, 1.0), np.inf)
        return s, c, phi_r

    def describe(self) -> dict:
        return {"a": self.a, "b": self.b, "N": self.N,
                "gamma_t(0)": float(self.gamma_t.value(0.0)),
                "gamma_t(a)": float(self.gamma_t.value(self.a))}


def check_tube_wellposed(psi: WarpProfile, N: float, a: float,
                         samples_per_unit: int = SAMPLES_PER_UNIT,
                         end_tol: float = 1e-8) -> PositivityCertificate:
    """``sqrt(1 - (psi/N)^2) - psi' >= 0`` on ``[0, a]``, zero only at ``a``.

    Non-strict certificate (floor 0 up to round-off); ``extra["interior_min"]``
    records the minimum away from ``a`` which must be strictly positive.
    """
    r = sample_grid(0.0, a, samples_per_unit)
    marg = wellposedness_margin(psi, N, r)
    cert = certify_samples(marg, [r], "tube curve well-posedness "
                           "sqrt(1-(psi/N)^2) - psi'",
                           {"r": [0.0, a, r.size]}, margin_floor=-1e-12, strict=False)
    inner = r < a - end_tol
    imin = float(marg[inner].min())
    cert.extra["interior_min"] = imin
    cert.extra["interior_argmin"] = float(r[inner][np.argmin(marg[inner])])
    if not imin > 0:
        cert.verdict = "fail"
        cert.note = (f"margin vanishes at r={cert.extra['interior_argmin']:.6g} "
                     f"before the boundary")
    return cert


def tube_curve(psi: WarpProfile, N: float, a: float,
               samples_per_unit: int = SAMPLES_PER_UNIT, tol: float = 1e-10) -> TubeCurve:
    """Build ``gamma_t = N arcsin(psi/N)`` and ``gamma_s = int sqrt(1 - gamma_t'^2)``.

    ``gamma_s`` is integrated by Gauss-Legendre panels between grid points
    (adaptive quadrature on the last panels, where the integrand has a
    square-root end point) and interpolated by a cubic Hermite spline whose
    slopes are the exact integrand.
    """
    grid = sample_grid(0.0, a, samples_per_unit)
    bps = [x for x in psi.breakpoints if 0 < x < a]
    grid = np.unique(np.concatenate([grid, bps]))
    sin_phi, cos_phi, _, cos_sq = _slope_data(psi, N, grid)
    bad = cos_sq < -1e-12
    if np.any(bad):
        i = int(np.argmax(bad))
        raise HandleError(f"tube curve ill-posed: gamma_t' = {sin_phi[i]:.12g} > 1 "
                          f"at r={grid[i]:.6g}")

    def integrand(r):
        return _slope_data(psi, N, r)[1]

    x, wts = np.polynomial.legendre.leggauss(8)
    lo, hi = grid[:-1], grid[1:]
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    nodes = mid[:, None] + half[:, None] * x[None, :]
    panel = half * (integrand(nodes.ravel()).reshape(nodes.shape) @ wts)
    tail = 16
    for j in range(max(0, panel.size - tail), panel.size):
        panel[j] = quad(lambda r: float(integrand(np.array([r]))[0]), lo[j], hi[j],
                        epsabs=tol * 1e-3, epsrel=tol * 1e-3, limit=200)[0]
    S = np.concatenate([[0.0], np.cumsum(panel)])
    spline = CubicHermiteSpline(grid, S, cos_phi)
    b = float(S[-1])

    def gs(r):
        s, c, ds, _ = _slope_data(psi, N, r)
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.where(c > 0, -s * ds / np.where(c > 0, c, 1.0), -np.inf)
        return spline(r), c, d2

    def gt(r):
        p = psi.value(np.asarray(r, dtype=float))
        s, _, ds, _ = _slope_data(psi, N, r)
        return N * np.arcsin(p / N), s, ds

    return TubeCurve(WarpProfile((FunctionSegment(0.0, a, gs, "gamma_s"),), name="gamma_s"),
                     WarpProfile((FunctionSegment(0.0, a, gt, "gamma_t"),), name="gamma_t"),
                     psi, N, a, b, spline)


def iota(tube: TubeCurve, s, tol: float = 1e-13):
    """Inverse of ``gamma_s``: the ``r`` with ``gamma_s(r) = s``.

    The knot values bracket ``s``; safeguarded Newton on the local cubic
    piece of the spline finishes, with bisection where Newton stalls (near
    ``a``, where ``gamma_s'`` vanishes).  ``iota(b) = a`` and ``iota(0) = 0`` exactly.
    """
    s_in = np.asarray(s, dtype=float)
    s = s_in.ravel()
    if np.any(s < -tol) or np.any(s > tube.b + tol):
        raise HandleError(f"iota defined on [0, {tube.b:.6g}] only")
    sp = tube._spline
    knots, S = sp.x, sp(sp.x)
    j = np.clip(np.searchsorted(S, s, side="right") - 1, 0, knots.size - 2)
    c = sp.c[:, j]
    width = knots[j + 1] - knots[j]
    target = s - c[3]
    cubic = lambda u, k: ((c[0][k] * u + c[1][k]) * u + c[2][k]) * u
    slope = lambda u: (3 * c[0] * u + 2 * c[1]) * u + c[2]
    u = np.clip(target / np.maximum(S[j + 1] - S[j], 1e-300) * width, 0, width)
    for _ in range(8):
        with np.errstate(divide="ignore", invalid="ignore"):
            step = (cubic(u, slice(None)) - target) / slope(u)
        u = np.clip(np.where(np.isfinite(step), u - step, u), 0, width)
    slow = np.nonzero(np.abs(cubic(u, slice(None)) - target) > 1e-15 * max(tube.b, 1.0))[0]
    lo, hi = np.zeros(slow.size), width[slow]
    for _ in range(60):
        mid = (lo + hi) / 2
        below = cubic(mid, slow) < target[slow]
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    u[slow] = (lo + hi) / 2
    r = knots[j] + u
    r = np.where(s >= tube.b, tube.a, np.where(s <= 0, 0.0, r))
    return float(r[0]) if s_in.ndim == 0 else r.reshape(s_in.shape)


# -- ambient and cap ------------------------------------------------------------

def ambient_phi(value: float, slope: float, curvature: float, eps: float) -> WarpProfile:
    """Concave increasing ``phi(s) = value + slope s + curvature s^2 / 2`` on ``[-eps, 0]``.

    ``s`` is the ambient collar coordinate (``s = 0`` on the boundary).
    """
    if not (value > 0 and curvature < 0 and slope > 0 and eps > 0):
        raise HandleError("ambient phi must be positive, increasing and concave")
    if value - slope * eps + 0.5 * curvature * eps**2 <= 0:
        raise HandleError(f"ambient phi not positive on [-{eps:.6g}, 0]")

    def fn(s):
        return value + slope * s + 0.5 * curvature * s**2, slope + curvature * s, curvature

    return WarpProfile((FunctionSegment(-eps, 0.0, fn, "ambient quadratic"),), name="phi")


def synthesize_ambient(value: float, eps: float, slope_rel: float = 0.2,
                       curvature_rel: float = 1.0) -> WarpProfile:
    """Model ambient ``phi`` with ``phi(0) = value``, ``phi'(0) = slope_rel value/eps``
    and ``phi'' = -curvature_rel value/eps^2``.

    A boundary slope small against the curvature keeps the concave join to
    the cap comfortably feasible.
    """
    return ambient_phi(value, slope_rel * value / eps, -curvature_rel * value / eps**2, eps)


def cap_profile(h_inf: WarpProfile, tube: TubeCurve, phi: WarpProfile,
                join_window: float | None = None) -> tuple[WarpProfile, float]:
    """Sphere radius ``A(s)`` over the handle axis ``s`` in ``[0, b + eps]``.

    ``A = h_inf o iota`` on ``[0, b]``; on ``[b, b + J]`` a strictly concave C^2
    blend takes the value/slope/curvature of ``h_inf(a)`` at ``s = b`` to those
    of the ambient ``s -> phi(b - s)`` at ``b + J``; beyond, ``A`` is the
    ambient profile.  The blend lies on the ambient side of the join so the
    handle's own boundary data stay untouched.  Returns ``(A, J)``.
    """
    b, a = tube.b, tube.a
    eps = -phi.domain[0]
    J = JOIN_FRACTION * b if join_window is None else join_window
    if not 0 < J < eps:
        raise HandleError(f"join window {J:.6g} must lie in (0, eps={eps:.6g})")
    c0, c1, c2 = h_inf.evaluate(a)
    if abs(c1) > 1e-12 or abs(c2) > 1e-12:
        raise HandleError("h_inf is not constant at the boundary")
    if not math.isclose(c0, phi.value(0.0), rel_tol=1e-10):
        raise HandleError(f"h_inf(a)={c0:.12g} differs from phi(0)={phi.value(0.0):.12g}")

    def composite(s):
        r = iota(tube, np.clip(s, 0.0, b))
        hv, h1, h2 = h_inf.evaluate(r)
        sp, cp, dsin, _ = _slope_data(tube.psi, tube.N, r)
        flat = (h1 == 0) & (h2 == 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            dcos = np.where(cp > 0, -sp * dsin / np.where(cp > 0, cp, 1.0), 0.0)
            d1 = np.where(flat, 0.0, h1 / cp)
            d2 = np.where(flat, 0.0, h2 / cp**2 - h1 * dcos / cp**3)
        return hv, d1, d2

    def ambient(s):
        v, d1, d2 = phi.evaluate(b - s)
        return v, -d1, d2

    end = ambient(b + J)
    blend, _ = signed_blend(b, b + J, (c0, 0.0, 0.0), [float(e) for e in end], -1,
                            max_degree=20)
    segs = (FunctionSegment(0.0, b, composite, "h_inf o iota"), blend,
            FunctionSegment(b + J, b + eps, ambient, "ambient phi(b - s)"))
    return WarpProfile(segs, name="cap"), J


def handle_scalar(A: WarpProfile, n: int, m: int, N: float, s):
    """Scalar curvature of ``ds^2 + dt^2 + A^2 ds^2_{n-1} + N^2 sin^2(t/N) ds^2_m``."""
    v, d1, d2 = A.evaluate(np.asarray(s, dtype=float))
    return (-2 * (n - 1) * d2 / v + (n - 1) * (n - 2) * (1 - d1**2) / v**2
            + m * (m + 1) / N**2)


# -- collar near the new boundary -----------------------------------------------

@dataclass(frozen=True)
class CollarChart:
    """Parallel curves ``gamma(r) + w nu(r)`` of the tube curve.

    ``nu = (-sin phi, cos phi)`` is the outward unit normal, so ``w < 0``
    points into the manifold.  On a level set ``w`` the induced metric is

        (1 - w phi_r)^2 dr^2 + A(s)^2 ds^2_{n-1} + N^2 sin^2(t/N) ds^2_m

    with ``s = gamma_s - w sin phi`` and ``t = gamma_t + w cos phi``.  The chart
    covers ``r`` in ``[r_lo, r_hi]``: it stays away from the pole ``r = 0``
    of the ``S^{n-1}`` factor and from the boundary point ``r = a``, where
    the tube curve has unbounded curvature.
    """

    tube: TubeCurve
    A: WarpProfile
    n: int
    m: int
    r_lo: float
    r_hi: float

    @property
    def dim(self) -> int:
        return self.n + self.m

    def position(self, r, w):
        sp, cp, phi_r = self.tube.angle_data(r)
        s = self.tube.gamma_s.value(r) - w * sp
        t = self.tube.gamma_t.value(r) + w * cp
        return s, t, sp, cp, phi_r

    def diagonal(self, w, r):
        """``(g_rr, A^2, N^2 sin^2(t/N))`` on the level set ``w``."""
        w, r = np.broadcast_arrays(np.asarray(w, float), np.asarray(r, float))
        s, t, _, _, phi_r = self.position(r, w)
        N = self.tube.N
        return ((1 - w * phi_r) ** 2, self.A.value(s) ** 2, (N * np.sin(t / N)) ** 2)

    def metric(self, w, x):
        x = np.asarray(x, dtype=float)
        grr, a2, b2 = self.diagonal(w, x[..., 0])
        n, m = self.n, self.m
        th = [x[..., i] for i in range(1, n - 1)]
        ph = [x[..., i] for i in range(n, n + m - 1)]
        diag = [grr] + sphere_chart_metric(a2, th) + sphere_chart_metric(b2, ph)
        diag = np.broadcast_arrays(*diag)
        out = np.zeros(diag[0].shape + (len(diag), len(diag)))
        for i, d in enumerate(diag):
            out[..., i, i] = d
        return out

    def intrinsic_scalar(self, w, x):
        """Scalar curvature of the level set: a doubly warped metric in its
        arclength ``rho`` with ``ds/drho = cos phi`` and ``dt/drho = sin phi``."""
        r = np.asarray(x, dtype=float)[..., 0]
        w, r = np.broadcast_arrays(np.asarray(w, float), r)
        s, t, sp, cp, phi_r = self.position(r, w)
        kappa = phi_r / (1 - w * phi_r)
        a0, a1, a2 = self.A.evaluate(s)
        N = self.tube.N
        b0, b1, b2 = N * np.sin(t / N), np.cos(t / N), -np.sin(t / N) / N
        return scalar_from_derivatives(self.n, self.m,
                                       a0, a1 * cp, a2 * cp**2 - a1 * sp * kappa,
                                       b0, b1 * sp, b2 * sp**2 + b1 * cp * kappa)

    def points(self, r):
        r = np.asarray(r, dtype=float)
        x = np.full(r.shape + (self.dim,), ANGLE)
        x[..., 0] = r
        return x

    def max_phi_r(self, samples: int = CHART_POINTS * 8) -> float:
        r = np.linspace(self.r_lo, self.r_hi, samples)
        return float(np.max(self.tube.angle_data(r)[2]))


def collar_chart(tube: TubeCurve, A: WarpProfile, n: int, m: int,
                 r_lo: float | None = None, r_hi: float | None = None) -> CollarChart:
    """Default chart ``r`` in ``[a/50, a - a/50]``."""
    a = tube.a
    return CollarChart(tube, A, n, m, a / 50 if r_lo is None else r_lo,
                       a - a / 50 if r_hi is None else r_hi)


def collar_path(chart: CollarChart, eps_prime: float, points: int = COLLAR_POINTS,
                eta: Callable | None = None) -> CoordinateMetricPath:
    """Metric path ``w -> g(w)`` on ``[-eps', 0]``."""
    return CoordinateMetricPath(np.linspace(-eps_prime, 0.0, points), chart.metric, eta,
                                chart.intrinsic_scalar, chart.dim)


def _interior_cert(quantity, path: CoordinateMetricPath, chart: CollarChart, name: str,
                   r_points: int = CHART_POINTS, floor: float = MARGIN_FLOOR,
                   strict: bool = True, refine: bool = True) -> PositivityCertificate:
    """Certificate over the interior ``w`` of ``path.w_grid`` times the chart."""
    wg = path.w_grid
    k = path.w_step()
    dom = [(float(wg[1]), float(wg[-2])), (chart.r_lo, chart.r_hi)]
    return certify_positive(quantity, dom, [wg.size - 2, r_points], name=name,
                            margin_floor=floor, strict=strict, refine=refine,
                            axis_names=["w", "r"])


def _chart_of(handle, eps_prime):
    if isinstance(handle, CollarChart):
        if eps_prime is None:
            raise HandleError("epsilon' is required with a bare chart")
        return handle, eps_prime
    return handle.chart, handle.epsilon_prime if eps_prime is None else eps_prime


def collar_monotonicity_check(handle, eps_prime: float | None = None,
                              points: int = COLLAR_POINTS, r_points: int = CHART_POINTS) -> dict:
    """``d g_ii / dw >= 0`` component by component, plus the trace condition.

    Returns certificates keyed ``"r"``, ``"S^{n-1}"``, ``"S^m"``, ``"all"``
    (the literal hypothesis: every component) and ``"trace"``
    (``sum_i dg_ii/dw / g_ii >= 0``, all that the boundary-product step uses).
    ``handle`` is a :class:`HandleModel` or a bare :class:`CollarChart`.
    """
    chart, eps_prime = _chart_of(handle, eps_prime)
    path = collar_path(chart, eps_prime, points)
    k = path.w_step()

    def comp(i):
        def q(w, r):
            gm = chart.diagonal(w - k, r)[i]
            gp = chart.diagonal(w + k, r)[i]
            return (gp - gm) / (2 * k)
        return q

    def trace(w, r):
        lo, mid, hi = chart.diagonal(w - k, r), chart.diagonal(w, r), chart.diagonal(w + k, r)
        mult = (1, chart.n - 1, chart.m)
        return sum(c * (p - q) / (2 * k) / g for c, p, q, g in zip(mult, hi, lo, mid))

    out = {}
    for key, i in (("r", 0), ("S^{n-1}", 1), ("S^m", 2)):
        out[key] = _interior_cert(comp(i), path, chart, f"d g_{key} / dw >= 0",
                                  r_points, floor=0.0, strict=False)
    worst = min(out.values(), key=lambda c: c.min_margin)
    out["all"] = PositivityCertificate(
        "every diagonal component non-decreasing in w", worst.grid, worst.min_margin,
        worst.argmin, "pass" if all(c.passed for c in out.values()) else "fail",
        0.0, False, note=f"worst component: {worst.quantity}")
    out["trace"] = _interior_cert(trace, path, chart, "sum_i (dg_ii/dw) / g_ii >= 0",
                                  r_points, floor=0.0, strict=False)
    return out


# -- boundary product (lapse and extension) -------------------------------------

def beta_lapse(eps_prime: float, Lambda: float) -> WarpProfile:
    """``beta = 1`` on ``[-eps', -eps'/2]``, quintic smoothstep rise, ``Lambda`` on
    ``[-eps'/4, 0]``."""
    lo, hi = -eps_prime / 2, -eps_prime / 4
    # d^2/dw^2 of S((w - lo) / width) is S''(t) / width^2
    width = hi - lo
    rise = from_second_derivative(
        lo, hi, 1.0, 0.0, Polynomial((Lambda - 1) / width**2 * SMOOTHSTEP.deriv(2).coef))
    return WarpProfile((constant(-eps_prime, lo, 1.0), rise, constant(hi, 0.0, Lambda)),
                       name="beta")


def _lapse(beta: WarpProfile) -> Callable:
    def eta(w):
        v, d1, _ = beta.evaluate(np.asarray(w, dtype=float))
        return v, d1
    return eta


def extension_warp(L: float) -> Callable:
    """``omega(w) = int_0^w (1 - S(u/L)) du``: slope 1 at 0, frozen at ``L/2``
    (bit-exactly) for ``w >= L``."""
    S_int = SMOOTHSTEP.integ()

    def omega(w):
        w = np.asarray(w, float)
        u = np.clip(w / L, 0.0, 1.0)
        val = np.where(w >= L, L / 2, np.where(w <= 0, w, w - L * S_int(u)))
        return val

    return omega


@dataclass
class CollarDeformation:
    """``eta^2 dw^2 + g(w)`` on ``[-eps', 0]`` followed by ``Lambda^2 dw^2 + h(w)``
    on ``[0, 1]`` with ``h(w) = g(omega(w))`` frozen for ``w >= L``."""

    Lambda: float
    eps_prime: float
    L: float
    C: float
    doublings: int
    collar: PositivityCertificate
    extension: PositivityCertificate
    product_exact: bool
    beta: WarpProfile | None = None
    extension_path: CoordinateMetricPath | None = None

    @property
    def coordinate_rescale(self) -> float:
        """``w -> Lambda w`` turns ``Lambda^2 dw^2 + h(1)`` into ``dw^2 + h(1)``."""
        return self.Lambda

    @property
    def passed(self) -> bool:
        return self.collar.passed and self.extension.passed and self.product_exact

    def to_dict(self) -> dict:
        return {"Lambda": self.Lambda, "eps_prime": self.eps_prime, "L": self.L,
                "C": self.C, "doublings": self.doublings, "passed": self.passed,
                "collar": self.collar.to_dict(), "extension": self.extension.to_dict(),
                "product_exact": self.product_exact,
                "coordinate_rescale": self.coordinate_rescale}


def _extension_path(chart: CollarChart, L: float, points: int, Lambda: float):
    omega = extension_warp(L)
    return CoordinateMetricPath(
        np.linspace(0.0, 1.0, points),
        lambda w, x: chart.metric(omega(w), x),
        lambda w: (Lambda, 0.0),
        lambda w, x: chart.intrinsic_scalar(omega(w), x), chart.dim)


def make_boundary_product(handle, Lambda_hint: float = 1.0, eps_prime: float | None = None,
                          points: int = COLLAR_POINTS, r_points: int = CHART_POINTS,
                          extension_points: int = 513, refine: bool = True
                          ) -> CollarDeformation:
    """Make the metric a product near the boundary keeping ``scal > 0``.

    ``Lambda`` doubles from ``Lambda_hint`` until ``scal(g) - C / Lambda^2 > 0`` on
    the sampled collar and extension, where ``C = max(-H, 0)``; the lapse
    ``beta`` then carries ``dw^2`` to ``Lambda^2 dw^2``.  The extension
    offsets stay below half the focal distance of the chart.
    """
    chart, eps_prime = _chart_of(handle, eps_prime)
    L = min(1.0, 0.5 / max(chart.max_phi_r(), 1e-12))
    r = np.linspace(chart.r_lo, chart.r_hi, r_points)
    x = chart.points(r)
    ext = _extension_path(chart, L, extension_points, 1.0)
    col = collar_path(chart, eps_prime, points)

    def worst(path, wg):
        W = wg[:, None]
        g, dg, ddg = path.w_derivatives(W, x[None])
        H = collar_H(g, dg, ddg)
        return float(np.min(path.scal_g(W, x[None]))), float(max(np.max(-H), 0.0))

    s1, c1 = worst(col, col.w_grid[1:-1])
    s2, c2 = worst(ext, ext.w_grid[1:-1])
    scal_min, C = min(s1, s2), max(c1, c2)
    if not scal_min > 0:
        raise HandleError(f"scal(g(w)) not positive on the collar (min {scal_min:.6g})")
    Lambda, doublings = Lambda_hint, 0
    while not scal_min - C / Lambda**2 > 0:
        Lambda *= 2
        doublings += 1
        if Lambda > LAMBDA_CAP:
            raise HandleError("Lambda exceeded its cap")
    beta = beta_lapse(eps_prime, Lambda)
    col = collar_path(chart, eps_prime, points, _lapse(beta))
    ext = _extension_path(chart, L, extension_points, Lambda)

    def q(path):
        return lambda w, r: collar_scalar(path, w, chart.points(r))

    collar = _interior_cert(q(col), col, chart, "scalar curvature of beta^2 dw^2 + g(w)",
                            r_points, refine=refine)
    extension = _interior_cert(q(ext), ext, chart,
                               "scalar curvature of Lambda^2 dw^2 + h(w)", r_points,
                               refine=refine)
    h_end = chart.metric(extension_warp(L)(1.0), x)
    product = all(np.array_equal(chart.metric(extension_warp(L)(w), x), h_end)
                  for w in np.linspace(L, 1.0, 9))
    return CollarDeformation(Lambda, eps_prime, L, C, doublings, collar, extension, product,
                             beta=beta, extension_path=ext)


# -- starting disc bundle -------------------------------------------------------

def sine_theta(N0: float, s_max: float) -> WarpProfile:
    """Fibre radius ``theta(s) = N0 sin(s / N0)``."""
    return WarpProfile((SineSegment(0.0, s_max, amplitude=N0, scale=N0),), name="theta")


@dataclass
class DiscBundleStart:
    R0: float
    halvings: int
    certificates: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.certificates.values())

    def to_dict(self) -> dict:
        return {"R0": self.R0, "halvings": self.halvings, "passed": self.passed,
                "certificates": {k: v.to_dict() for k, v in self.certificates.items()}}


def _disc_certs(model: DiscBundleModel, R0: float, points: int) -> dict:
    s = np.linspace(R0 / points, R0, points)
    ric_s, ric_x, ric_u, mixed = ricci_disc_bundle(model, s)
    grid = {"s": [float(s[0]), R0, points]}
    ric_x = np.broadcast_to(ric_x, s.shape)
    _, t1, _ = model.theta.evaluate(s)
    det = ric_x * ric_u - (model.theta.value(s) * model.mixed_max) ** 2
    return {
        "theta increasing": certify_samples(t1, [s], "theta' > 0", grid),
        "Ric(d_s)": certify_samples(ric_s, [s], "-(n-1) theta''/theta > 0", grid),
        "Ric(X)": certify_samples(ric_x, [s], "base Ricci - 2 theta^2 |A|^2 > 0", grid),
        "Ric(U)": certify_samples(ric_u, [s], "(n-2)(1-theta'^2)/theta^2 - theta''/theta > 0",
                                  grid),
        "determinant": certify_samples(det, [s], "Ric(X) Ric(U) - (theta |dA|)^2 > 0", grid),
    }


def disc_bundle_start(theta: WarpProfile, model: DiscBundleModel, points: int = 1025,
                      max_halvings: int = 40) -> DiscBundleStart:
    """Largest ``R0 = s_max / 2^j`` such that every Ricci condition of the disc
    bundle model holds on ``(0, R0]``."""
    if theta is not model.theta:
        model = DiscBundleModel(theta, model.base_ricci_min, model.a_tensor_sq_max,
                                model.mixed_max, model.n, model.s_max)
    R0 = model.s_max
    for j in range(max_halvings + 1):
        certs = _disc_certs(model, R0, points)
        if all(c.passed for c in certs.values()):
            return DiscBundleStart(R0, j, certs)
        R0 /= 2
    raise HandleError("no positive R0 satisfies the disc bundle Ricci conditions; "
                      "reduce the A-tensor bounds (a_tensor_sq_max, mixed_max)")


# -- the assembled handle -------------------------------------------------------

def handle_surgery_metric(construction: SurgeryConstruction, h_inf: WarpProfile,
                          rho_fraction: float | None = None) -> tuple[DoublyWarpedMetric, dict]:
    """End point of the deformation (``h`` replaced by ``h_inf``), boundary
    adjusted and rescaled so that ``h = rho``, ``psi = N sin(R/N)`` and
    ``psi' = cos(R/N)`` at the boundary."""
    p, g = construction.params, construction.geometry
    frac = p.rho_fraction if rho_fraction is None else rho_fraction
    L = g.landmarks
    f_str = construction.intermediates["f_straight"]
    psi = psi_of(f_str, g.k, g.alpha)
    kappa = compute_kappa(h_inf, psi, L["R''"])
    rho = frac * kappa * p.N * math.sin(p.R / p.N)
    metric, a, lam, _ = boundary_adjust_and_rescale(
        f_str, h_inf, g.k, g.alpha, L["R'''"], L["R''"], rho, p.R, p.N, p.slope_slack,
        p.n, p.m)
    return metric, {"kappa": kappa, "rho": rho, "a_unscaled": a, "lambda": lam,
                    "a": metric.domain[1]}


@dataclass
class HandleModel:
    metric: DoublyWarpedMetric
    tube: TubeCurve
    cap: WarpProfile
    phi: WarpProfile
    N: float
    R: float
    epsilon: float
    epsilon_prime: float
    join_window: float
    chart: CollarChart
    collar: CoordinateMetricPath
    certificates: dict
    disc_start: DiscBundleStart | None = None
    notes: list = field(default_factory=list)

    def iota(self, s):
        return iota(self.tube, s)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.certificates.values())

    def to_dict(self) -> dict:
        return {"tube": self.tube.describe(), "N": self.N, "R": self.R,
                "epsilon": self.epsilon, "epsilon_prime": self.epsilon_prime,
                "join_window": self.join_window,
                "chart_r": [self.chart.r_lo, self.chart.r_hi], "passed": self.passed,
                "certificates": {k: v.to_dict() for k, v in self.certificates.items()},
                "disc_start": None if self.disc_start is None else self.disc_start.to_dict(),
                "notes": list(self.notes)}


def _max_error_cert(err, pts, name, grid, tol) -> PositivityCertificate:
    cert = certify_samples(tol - np.abs(err), [pts], name, grid, margin_floor=0.0,
                           strict=False)
    cert.extra["max_error"] = float(np.max(np.abs(err)))
    return cert


def assemble_handle(metric: DoublyWarpedMetric, N: float, R: float, phi: WarpProfile,
                    epsilon_prime: float | None = None, join_window: float | None = None,
                    delta: float | None = None, a_tensor_sq_max: float = 0.0,
                    mixed_max: float = 0.0, samples_per_unit: int = SAMPLES_PER_UNIT,
                    chart_r: tuple[float, float] | None = None) -> HandleModel:
    """Handle over the surgery metric ``metric`` (already deformed and rescaled).

    ``delta`` (in the rescaled units) marks the region ``s < delta`` where
    ``A = sin``; on ``(delta/2, delta)`` a disc-bundle model with the given
    A-tensor bounds checks Ricci positivity of the non-flat region.
    """
    n, m = metric.n, metric.m
    a = metric.domain[1]
    psi, h = metric.psi, metric.h
    certs = {}
    certs["tube well-posed"] = wp = check_tube_wellposed(psi, N, a, samples_per_unit)
    if not wp.passed:
        raise HandleError(f"tube curve ill-posed: {wp.note or wp.argmin}")
    tube = tube_curve(psi, N, a, samples_per_unit)
    r = sample_grid(0.0, a, samples_per_unit)
    _, c1, _ = tube.gamma_s.evaluate(r)
    _, t1, _ = tube.gamma_t.evaluate(r)
    certs["unit speed"] = _max_error_cert(c1**2 + t1**2 - 1, r, "|gamma_s'^2 + gamma_t'^2 - 1|",
                                          {"r": [0.0, a, r.size]}, 1e-8)
    end = float(tube.gamma_t.value(a)) - R
    certs["gamma_t(a) = R"] = _max_error_cert(np.array([end]), np.array([a]),
                                              "|gamma_t(a) - R|", {"r": [a]}, 1e-8)
    A, J = cap_profile(h, tube, phi, join_window)
    eps = -phi.domain[0]
    s = sample_grid(0.0, tube.b + eps, samples_per_unit)
    certs["cap concave"] = certify_samples(-A.d2(s), [s], "-A''(s) >= 0", {"s": [0.0, s[-1],
                                           s.size]}, margin_floor=-1e-12, strict=False)
    s_in = s[s > 0]
    certs["interior scalar"] = certify_samples(
        handle_scalar(A, n, m, N, s_in), [s_in], "scalar curvature of the solid tube and cap",
        {"s": [float(s_in[0]), float(s_in[-1]), s_in.size]})
    gs = tube.gamma_s.value(r)
    certs["boundary agreement"] = _max_error_cert(
        A.value(gs) - h.value(r), r, "|A(gamma_s(r)) - h(r)|", {"r": [0.0, a, r.size]}, 1e-8)
    disc = None
    if delta is not None:
        sb = np.linspace(delta / 2, delta, 257)
        av, a1, a2 = A.evaluate(sb)
        base = float(np.min(np.minimum(-(n - 1) * a2 / av,
                                       -a2 / av + (n - 2) * (1 - a1**2) / av**2)))
        t_top = float(tube.gamma_t.value(0.0))
        model = DiscBundleModel(sine_theta(N, t_top), base, a_tensor_sq_max, mixed_max,
                                m + 1, t_top)
        disc = disc_bundle_start(model.theta, model)
        ok = disc.R0 >= t_top
        certs["non-flat region Ricci"] = PositivityCertificate(
            "disc-bundle Ricci conditions up to the fibre radius gamma_t(0)",
            {"s": [delta / 2, delta], "t": [0.0, t_top]}, disc.R0 - t_top, [disc.R0],
            "pass" if ok else "fail", 0.0, False,
            extra={"R0": disc.R0, "fibre_radius": t_top, "base_ricci_min": base})
    if epsilon_prime is None:
        epsilon_prime = eps / 2
    if not 0 < epsilon_prime <= eps or epsilon_prime >= tube.gamma_t.value(0.0):
        raise HandleError(f"epsilon' = {epsilon_prime:.6g} must lie in (0, min(eps, "
                          f"gamma_t(0)))")
    chart = collar_chart(tube, A, n, m, *(chart_r or (None, None)))
    collar = collar_path(chart, epsilon_prime)
    notes = [f"collar chart r in [{chart.r_lo:.6g}, {chart.r_hi:.6g}] of [0, {a:.6g}]"]
    return HandleModel(metric, tube, A, phi, N, R, eps, epsilon_prime, J, chart, collar,
                       certs, disc, notes)
