"""Construction of the surgery scaling functions f, h and psi = k (f + alpha).

The pipeline of operations is

    solve_base_ivp -> cap_f_near_zero -> shape_h_near_zero -> find_zk
    -> straighten_f -> flatten_h -> compute_kappa -> solve_boundary_radius
    -> boundary_adjust_and_rescale

and :func:`construct_surgery_metric` runs it end to end from a
:class:`SurgeryParameters` record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.special import erfi

from .curvature import DoublyWarpedMetric, min_ricci, ricci_doubly_warped
from .profiles import (BUMP, SMOOTHSTEP, OdeSegment, Polynomial, ProfileError,
                       SineSegment, WarpProfile, affine, constant,
                       from_second_derivative, signed_blend)

BLEND_WIDTH = 0.02
SLOPE_SLACK = 0.01
R_MAX = 50.0
SAMPLES_PER_UNIT = 4096


# -- parameter records ---------------------------------------------------------

@dataclass(frozen=True)
class SurgeryParameters:
    """Inputs of a single surgery-metric construction."""

    n: int = 4
    m: int = 3
    R: float = 1.0
    N: float = 1.0
    alpha: float = 2.0
    R_prime: float = 0.2
    slope_slack: float = SLOPE_SLACK
    blend_width: float = BLEND_WIDTH
    rho_fraction: float = 0.5
    k: float | None = None
    r_max: float = R_MAX
    ode_tol: float = 1e-10
    bend_factor: float = 4.0
    k_max: float = 1.0
    k_min: float = 1e-3

    def validate(self) -> None:
        if not (self.n >= self.m + 1 >= 3):
            raise ValueError(f"need n >= m + 1 >= 3, got n={self.n}, m={self.m}")
        if not (0 < self.R < self.N * math.pi / 2):
            raise ValueError(f"need 0 < R < N pi/2, got R={self.R}, N={self.N}")
        if not (0 < self.R_prime < 0.25):
            raise ValueError(f"need 0 < R' < 1/4, got {self.R_prime}")
        if self.slope_slack <= 0:
            raise ValueError("slope_slack must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not (0 < self.rho_fraction < 1):
            raise ValueError("rho_fraction must lie in (0, 1)")
        if self.k is not None and not (0 < self.k <= 1):
            raise ValueError("k must lie in (0, 1]")
        if not (0 < self.k_min < self.k_max <= 1):
            raise ValueError("need 0 < k_min < k_max <= 1")

    @property
    def target_slope(self) -> float:
        return math.cos(self.R / self.N) + self.slope_slack


@dataclass
class SurgeryGeometry:
    """Parameters and landmark radii of a finished construction.

    Landmarks are stored in the pre-rescale radius; ``lam`` converts them.
    """

    n: int
    m: int
    R: float
    N: float
    rho: float
    alpha: float
    k: float
    c: float | None
    delta: float | None
    landmarks: dict
    slope_slack: float
    kappa: float
    lam: float
    cap_offset: float = 0.0
    notes: list = field(default_factory=list)

    def check(self) -> list[str]:
        """Names of violated ordering/parameter invariants (empty if fine)."""
        bad = []
        L = self.landmarks
        if not (self.n >= self.m + 1 >= 3):
            bad.append("n >= m + 1 >= 3")
        if not (0 < self.R < self.N * math.pi / 2):
            bad.append("0 < R < N pi / 2")
        chain = [("R'", L["R'"]), ("1/4", 0.25), ("R'''", L["R'''"]),
                 ("R''", L["R''"]), ("a", L["a"])]
        if self.delta is not None:
            chain.insert(0, ("delta", self.delta))
        for (na, va), (nb, vb) in zip(chain, chain[1:]):
            if not va < vb:
                bad.append(f"{na} < {nb}")
        if L.get("z_k") is not None and not L["R''"] < L["z_k"] * (1 + 1e-12):
            # z_k refers to the unmodified profiles; R'' must not pass it
            bad.append("R'' < z_k")
        if not self.rho / self.N < self.kappa * math.sin(self.R / self.N):
            bad.append("rho / N < kappa sin(R/N)")
        return bad

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "R": self.R, "N": self.N, "rho": self.rho,
                "alpha": self.alpha, "k": self.k, "c": self.c, "delta": self.delta,
                "slope_slack": self.slope_slack, "kappa": self.kappa,
                "rescale": self.lam, "cap_offset": self.cap_offset,
                "landmarks": dict(self.landmarks),
                "landmarks_rescaled": {k: (None if v is None or not math.isfinite(v)
                                           else v * self.lam)
                                       for k, v in self.landmarks.items()},
                "notes": list(self.notes)}


# -- base IVP -------------------------------------------------------------------

@dataclass(frozen=True)
class BaseSolution:
    f: WarpProfile
    h: WarpProfile
    solution: object
    r_max: float


def solve_base_ivp(r_max: float = R_MAX, tol: float = 1e-10) -> tuple[WarpProfile, WarpProfile]:
    """Dense solution of ``f'' = 1/f, f(0) = 1, f'(0) = 0`` and ``h = f'``."""
    return solve_base_ivp_full(r_max, tol)[:2]


def solve_base_ivp_full(r_max: float = R_MAX, tol: float = 1e-10):
    if r_max <= 0 or tol <= 0:
        raise ValueError("r_max and tol must be positive")
    # the solver's local tolerance is tightened so the global error meets tol
    local = min(tol * 1e-2, 1e-12)
    sol = solve_ivp(lambda r, y: (y[1], 1.0 / y[0]), (0.0, r_max), (1.0, 0.0),
                    method="DOP853", rtol=local, atol=local, dense_output=True)
    if not sol.success:
        reached = float(sol.t[-1]) if sol.t.size else 0.0
        raise ProfileError(f"base IVP integration failed at r={reached:.6g}: {sol.message}")
    dense = sol.sol
    f = WarpProfile((OdeSegment(0.0, r_max, solution=dense, component="f"),), name="f")
    h = WarpProfile((OdeSegment(0.0, r_max, solution=dense, component="h"),), name="h")
    return f, h, dense


def ivp_radius_of_log(u):
    """Exact inverse of the IVP: the radius at which ``ln f = u``."""
    u = np.asarray(u, dtype=float)
    return math.sqrt(math.pi / 2) * erfi(np.sqrt(u))


def log_ivp_radius_of_log(u: float) -> float:
    """``ln r(u)``; uses the erfi asymptotic series once erfi overflows."""
    r = float(ivp_radius_of_log(u))
    if math.isfinite(r) and r > 0:
        return math.log(r)
    x2 = u
    series = 1 + 1 / (2 * x2) + 3 / (4 * x2**2) + 15 / (8 * x2**3)
    return u - 0.5 * math.log(u) - 0.5 * math.log(2.0) + math.log(series)


# -- near-zero modifications ------------------------------------------------------

def _ode_tail(profile: WarpProfile) -> OdeSegment:
    seg = profile.segments[-1]
    if not isinstance(seg, OdeSegment):
        raise ProfileError("expected a profile ending in the IVP dense output")
    return seg


def convexity_gap(f: WarpProfile) -> float:
    """Amount by which ``f(1/2)`` exceeds what a convex function equal to 1 on
    ``[0, 1/4]`` with the same slope at 1/2 can reach."""
    v, d, _ = f.evaluate(0.5)
    return float(v - (1.0 + 0.25 * d))


def cap_f_near_zero(f: WarpProfile, offset: float | None = None,
                    degree: int = 8) -> WarpProfile:
    """Make ``f`` identically 1 on ``[0, 1/4]`` with ``f'' >= 0`` on ``[0, 1/2]``.

    A convex function that is constant on ``[0, 1/4]`` cannot reach the IVP
    value at 1/2 with the IVP slope (see :func:`convexity_gap`), so for
    ``r >= 1/2`` the output is ``f - C`` with unchanged derivatives, and ``C``
    is recorded on the tail segment.  By default the blend is the convex one
    with the smallest peak curvature (large ``f''`` there would spoil
    ``Ric(d/dr)``) and ``C`` is whatever that blend leaves; an explicit
    ``offset`` instead fixes ``C`` and maximises the convexity margin.
    """
    tail = _ode_tail(f)
    v, d1, d2 = f.evaluate(0.5)
    start = (1.0, 0.0, 0.0)
    try:
        if offset is None:
            blend, _ = signed_blend(0.25, 0.5, start, (v, d1, d2), +1, degree=degree,
                                    objective="peak", match_value=False)
            C = v - float(blend.evaluate(np.array([0.5]))[0][0])
        else:
            if offset < convexity_gap(f):
                raise ProfileError(f"offset {offset:.6g} below the convexity gap "
                                   f"{convexity_gap(f):.6g}")
            blend, _ = signed_blend(0.25, 0.5, start, (v - offset, d1, d2), +1,
                                    degree=degree, max_degree=30)
            C = offset
    except ProfileError as exc:
        raise ProfileError(f"no convex cap on [1/4, 1/2]: {exc}") from exc
    segs = (constant(0.0, 0.25, 1.0), blend,
            OdeSegment(0.5, tail.hi, solution=tail.solution, component="f", offset=C))
    return WarpProfile(segs, name="f")


def cap_offset(f: WarpProfile) -> float:
    seg = f.segments[-1]
    return getattr(seg, "offset", 0.0)


def shape_h_near_zero(h: WarpProfile, R_prime: float) -> WarpProfile:
    """``h = sin r`` on ``[0, R']``, strictly concave blend up to 1/2, input beyond."""
    if not 0 < R_prime < 0.25:
        raise ValueError(f"need 0 < R' < 1/4, got {R_prime}")
    tail = _ode_tail(h)
    start = (math.sin(R_prime), math.cos(R_prime), -math.sin(R_prime))
    try:
        blend, _ = signed_blend(R_prime, 0.5, start, h.evaluate(0.5), -1)
    except ProfileError as exc:
        raise ProfileError(f"cannot keep h'' < 0 on [{R_prime}, 0.5]: {exc}") from exc
    segs = (SineSegment(0.0, R_prime), blend,
            OdeSegment(0.5, tail.hi, solution=tail.solution, component="h"))
    return WarpProfile(segs, name="h")


def psi_of(f: WarpProfile, k: float, alpha: float) -> WarpProfile:
    """``psi = k (f + alpha)``."""
    return f.affine(k, k * alpha, name="psi")


# -- z_k ------------------------------------------------------------------------

@dataclass(frozen=True)
class ZkLocation:
    """First zero of the minimal Ricci eigenvalue beyond 1/4.

    ``z`` may be ``inf`` when the zero lies beyond float range; ``log_z`` is
    always finite.  ``method`` is ``"scan"`` (dense scan plus bisection of the
    profiles) or ``"continuation"`` (exact IVP inversion in ``u = ln f``).
    """

    z: float
    log_z: float
    log_f: float
    slope: float
    residual: float
    method: str

    def __float__(self):
        return self.z


def _continuation_zk(n: int, m: int, k: float, alpha_eff: float) -> tuple[float, float]:
    """Root in ``u = ln F`` of ``(m-1)(1-2k^2 u) = n k^2 (1 + alpha e^-u)``,
    the normalised ``Ric(U) psi^2`` beyond the modified zone."""
    g = lambda u: (m - 1) * (1 - 2 * k * k * u) - n * k * k * (1 + alpha_eff * math.exp(-u))
    hi = 1 / (2 * k * k)
    lo = math.log(1.5)
    if g(lo) <= 0:
        raise ProfileError("continuation bracket invalid; zero lies in the scanned range")
    return brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500), g(hi)


def find_zk(metric: DoublyWarpedMetric, r_max: float | None = None, step: float = 1e-3,
            continuation: bool = True, alpha: float | None = None,
            k: float | None = None) -> ZkLocation:
    """Locate ``z_k``: dense sign scan at ``step`` then bisection to 1e-10.

    Beyond ``r_max`` the profiles coincide with the IVP (shifted by the cap
    offset), where the closed-form inverse of the IVP lets the search
    continue in ``u = ln f`` — this handles small k where z_k overflows.
    That continuation needs ``alpha`` and ``k`` (psi = k (f + alpha)).
    """
    lo = 0.25
    hi = metric.domain[1] if r_max is None else r_max
    r = np.arange(lo + step, hi + step / 2, step)
    vals = min_ricci(metric, r)
    neg = np.nonzero(vals <= 0)[0]
    if neg.size:
        i = int(neg[0])
        if i == 0:
            raise ProfileError("minimal Ricci is already non-positive just beyond 1/4")
        fn = lambda x: float(min_ricci(metric, np.array([x]))[0])
        z = brentq(fn, r[i - 1], r[i], xtol=1e-10, rtol=1e-15)
        slope = float(metric.psi.d1(z))
        log_f = (math.log(float(metric.psi.value(z)) / k - alpha)
                 if k is not None and alpha is not None else math.nan)
        return ZkLocation(z, math.log(z), log_f, slope, fn(z), "scan")
    if not continuation or alpha is None or k is None:
        raise ProfileError(f"no Ricci zero found on (1/4, {hi}]; increase r_max")
    C = cap_offset_of_psi(metric.psi, k, alpha)
    u, _ = _continuation_zk(metric.n, metric.m, k, alpha - C)
    log_z = log_ivp_radius_of_log(u)
    if log_z <= math.log(hi):
        raise ProfileError("continuation root falls inside the scanned range")
    z = math.exp(log_z) if log_z < 700 else math.inf
    slope = k * math.sqrt(2 * u)
    return ZkLocation(z, log_z, u, slope, 0.0, "continuation")


def cap_offset_of_psi(psi: WarpProfile, k: float, alpha: float) -> float:
    del k, alpha  # psi = k (f + alpha) keeps f's raw segments
    return cap_offset(psi)


def base_metric(f_cap: WarpProfile, h_shaped: WarpProfile, n: int, m: int,
                k: float, alpha: float) -> DoublyWarpedMetric:
    return DoublyWarpedMetric(n, m, h_shaped, psi_of(f_cap, k, alpha), h_shaped.domain)


def zk_for(f_cap: WarpProfile, h_shaped: WarpProfile, n: int, m: int, k: float,
           alpha: float, r_max: float | None = None) -> ZkLocation:
    G = base_metric(f_cap, h_shaped, n, m, k, alpha)
    return find_zk(G, r_max=r_max, alpha=alpha, k=k)


# -- straightening f -------------------------------------------------------------

def _straighten_gain(f: WarpProfile, r, width: float):
    _, d1, d2 = f.evaluate(r)
    return d1 + 0.5 * d2 * width


def straighten_f(f: WarpProfile, z_k: float, target_slope: float, k: float,
                 width: float = BLEND_WIDTH, start_min: float = 0.5
                 ) -> tuple[WarpProfile, float]:
    """Drop ``f''`` smoothly to zero so that ``k f' = target_slope`` beyond R'''.

    On ``[r_s, r_s + w]`` the second derivative is ``f''(r_s) (1 - S)``
    (``S`` the quintic smoothstep), adding ``f''(r_s) w / 2`` of slope; ``r_s``
    is solved so the final slope is exactly ``target_slope / k``.
    """
    goal = target_slope / k
    hi = min(z_k, f.domain[1] - width)
    if not hi > start_min:
        raise ProfileError("z_k lies inside the cap zone; choose a smaller k")
    g = lambda r: float(_straighten_gain(f, r, width)) - goal
    if g(hi) < 0:
        raise ProfileError(
            f"slope k f' cannot reach {target_slope:.6g} before z_k={z_k:.6g}; choose a smaller k")
    if g(start_min) > 0:
        raise ProfileError(
            f"k f' already exceeds {target_slope:.6g} at r={start_min}; choose a smaller k")
    rs = brentq(g, start_min, hi, xtol=1e-14, rtol=1e-15)
    v, d1, d2 = f.evaluate(rs)
    q = d2 * (1 - SMOOTHSTEP)
    blend = from_second_derivative(rs, rs + width, v, d1, q)
    R3 = rs + width
    end_v, end_d, _ = blend.evaluate(np.array([R3]))
    tail = affine(R3, f.domain[1], float(end_v[0]), goal)
    out = f.splice([blend, tail])
    return out, R3


# -- flattening h -----------------------------------------------------------------

@dataclass(frozen=True)
class BendPlan:
    """The two-phase bend of h: ramp-in, hold at ``-B``, ramp-out."""

    start: float
    ramp_in: float
    hold: float
    ramp_out: float
    B: float

    @property
    def phase2_start(self) -> float:
        return self.start + self.ramp_in + self.hold

    @property
    def end(self) -> float:
        return self.phase2_start + self.ramp_out


def phase1_margin(h: WarpProfile, psi: WarpProfile, m: int, r):
    """``|h''| - m h' psi' / psi`` (positive in phase 1)."""
    _, h1, h2 = h.evaluate(r)
    p, p1, _ = psi.evaluate(r)
    return np.abs(h2) - m * h1 * p1 / p


def phase2_margin(h: WarpProfile, psi: WarpProfile, n: int, m: int, r):
    """``(m-1)(1-psi'^2)/psi^2 - 2(n-1) h' psi' / (h psi)`` (positive in phase 2)."""
    hv, h1, _ = h.evaluate(r)
    p, p1, _ = psi.evaluate(r)
    return (m - 1) * (1 - p1**2) / p**2 - 2 * (n - 1) * h1 * p1 / (hv * p)


def _phase2_threshold(hv, p, p1, n, m):
    """Largest ``h'`` for which the phase-2 inequality holds."""
    return (m - 1) * (1 - p1**2) * hv / (2 * (n - 1) * p * p1)


def flatten_h(h: WarpProfile, f: WarpProfile, R_triple_prime: float, n: int, m: int,
              k: float = 1.0, alpha: float = 0.0, width: float = BLEND_WIDTH,
              bend_factor: float = 4.0, max_tries: int = 30
              ) -> tuple[WarpProfile, float, BendPlan]:
    """Bend ``h`` to a constant beyond the returned R''.

    Phase 1 holds ``h'' = -B`` with ``B`` a multiple of ``m h' psi'/psi`` so
    ``|h''| > m h' psi' / psi``; once ``h'`` is below the phase-2 threshold
    the curvature ramps out to zero and ``h' = 0`` at R''.  ``psi`` is
    ``k (f + alpha)``.
    """
    psi = psi_of(f, k, alpha)
    r0 = R_triple_prime
    hv0, h10, h20 = h.evaluate(r0)
    p0, p10, _ = psi.evaluate(r0)
    if h10 <= 0:
        raise ProfileError(f"h' is not positive at R'''={r0}")
    B = max(bend_factor * m * h10 * p10 / p0, 2 * abs(h20))
    w_in = min(width, 0.5 * h10 / ((abs(h20) + B) / 2))
    budget = h10 - w_in * (abs(h20) + B) / 2
    # phase-2 threshold evaluated where the ramp-out will start; iterate
    est_end = r0 + w_in + budget / B
    trace = []
    for _ in range(max_tries):
        hv_e = hv0 + h10 * (est_end - r0)
        p_e, p1_e, _ = psi.evaluate(est_end)
        thr = _phase2_threshold(hv_e, p_e, p1_e, n, m)
        w_out = min(width, thr / B)
        hold = (budget - B * w_out / 2) / B
        trace.append({"B": B, "threshold": float(thr), "ramp_out": w_out, "hold": hold})
        if hold < 0:
            raise ProfileError(f"phase-2 criterion not reachable before h' = 0: {trace}")
        plan = BendPlan(r0, w_in, hold, w_out, B)
        out = _bend_profile(h, plan)
        new_end = plan.end
        if abs(new_end - est_end) < 1e-12:
            break
        est_end = new_end
    return out, plan.end, plan


def _bend_profile(h: WarpProfile, plan: BendPlan) -> WarpProfile:
    r0 = plan.start
    v, d1, d2 = h.evaluate(r0)
    B = plan.B
    seg1 = from_second_derivative(r0, r0 + plan.ramp_in, v, d1,
                                  d2 * (1 - SMOOTHSTEP) - B * SMOOTHSTEP)
    segs = [seg1]
    x = r0 + plan.ramp_in
    ev, ed, _ = (float(t[0]) for t in seg1.evaluate(np.array([x])))
    if plan.hold > 0:
        seg2 = from_second_derivative(x, x + plan.hold, ev, ed, Polynomial([-B]))
        segs.append(seg2)
        x += plan.hold
        ev, ed, _ = (float(t[0]) for t in seg2.evaluate(np.array([x])))
    seg3 = from_second_derivative(x, x + plan.ramp_out, ev, ed, -B * (1 - SMOOTHSTEP))
    segs.append(seg3)
    x += plan.ramp_out
    cv, cd, _ = (float(t[0]) for t in seg3.evaluate(np.array([x])))
    if abs(cd) > 1e-9 * max(1.0, abs(B)):
        raise ProfileError(f"bend did not close: h'(R'')={cd:.3g}")
    # snap the tiny closing residual into the ramp-out so h' = 0 exactly
    seg3 = _close_slope(seg3, cd)
    cv = float(seg3.evaluate(np.array([x]))[0][0])
    segs[-1] = seg3
    segs.append(constant(x, max(x + 1.0, h.domain[1]), cv))
    return _join(h, r0, segs)


def _close_slope(seg, residual):
    """Subtract a residual end slope with a curvature correction vanishing at both ends."""
    L = seg.hi - seg.lo
    # correction to the second derivative: -residual * BUMP(t) / L (integral = residual)
    corr = _local_bump(L) * (-residual / L)
    poly = seg.poly + corr.integ(2)
    return type(seg)(seg.lo, seg.hi, origin=seg.origin, poly=poly)


def _local_bump(L: float) -> Polynomial:
    coef = np.asarray(BUMP.coef, dtype=float)
    return Polynomial(coef / L ** np.arange(coef.size))


def _join(h: WarpProfile, r0: float, segs) -> WarpProfile:
    head = h.truncated(r0)
    return WarpProfile(tuple(head.segments) + tuple(segs), name="h")


# -- kappa, boundary radius, adjustment and rescale -----------------------------

def compute_kappa(h: WarpProfile, psi: WarpProfile, R_double_prime: float) -> float:
    return float(h.value(R_double_prime) / psi.value(R_double_prime))


def solve_boundary_radius(h: WarpProfile, psi: WarpProfile, rho: float, N: float,
                          lo: float, r_max: float | None = None, xtol: float = 1e-12) -> float:
    """Root ``a > lo`` of ``h(a) / psi(a) = rho / N`` by bisection.

    ``lo`` is R'' (``h`` is constant beyond it and ``psi`` increases, so the
    quotient is strictly decreasing and the root unique).  The search
    interval doubles past ``r_max`` since the affine tails extend.
    """
    target = rho / N
    kappa = float(h.value(lo) / psi.value(lo))
    if not target < kappa:
        raise ProfileError(f"rho/N = {target:.6g} must be below kappa = {kappa:.6g}")
    q = lambda r: float(h.value(r) / psi.value(r)) - target
    hi = max(r_max or 2 * lo, lo * (1 + 1e-9) + 1e-9)
    for _ in range(200):
        if q(hi) < 0:
            break
        hi = lo + 2 * (hi - lo)
    else:
        raise ProfileError("boundary radius not bracketed")
    return brentq(q, lo, hi, xtol=xtol, rtol=1e-15, maxiter=500)


@dataclass
class SurgeryConstruction:
    """Everything produced by :func:`construct_surgery_metric`."""

    params: SurgeryParameters
    geometry: SurgeryGeometry
    metric: DoublyWarpedMetric          # final, rescaled
    metric_unscaled: DoublyWarpedMetric  # same metric before the global rescale
    f_final: WarpProfile                # pre-rescale f
    h_final: WarpProfile                # pre-rescale h
    bend: BendPlan
    zk: ZkLocation
    intermediates: dict = field(default_factory=dict)

    @property
    def psi(self) -> WarpProfile:
        return self.metric.psi

    @property
    def h(self) -> WarpProfile:
        return self.metric.h


def boundary_adjust_and_rescale(f: WarpProfile, h: WarpProfile, k: float, alpha: float,
                                R3: float, R2: float, rho: float, R: float, N: float,
                                slope_slack: float, n: int, m: int
                                ) -> tuple[DoublyWarpedMetric, float, float, WarpProfile]:
    """Concave-down adjustment of ``psi`` on ``[R''', a]`` and global rescale.

    ``psi'' = -(slack / W) BUMP((r - R''')/W)`` with ``W = a - R'''`` lowers the
    slope from ``cos(R/N) + slack`` to exactly ``cos(R/N)`` with vanishing
    curvature at both ends.  ``a`` solves ``h(a)/psi_adj(a) = rho/(N sin(R/N))``
    so that after the rescale by ``rho / h(a)`` the boundary data are
    ``h = rho``, ``psi = N sin(R/N)``, ``psi' = cos(R/N)``.

    Returns ``(metric, a, lam, f_adjusted)``.
    """
    c = math.cos(R / N)
    s = math.sin(R / N)
    psi = psi_of(f, k, alpha)
    p3 = float(psi.value(R3))
    # along the adjusted family the boundary value of psi is affine in a
    terminal = WarpProfile((affine(R3, R3 + 1.0, p3, c + slope_slack / 2),), name="psi_end")
    a = solve_boundary_radius(h, terminal, rho, N * s, lo=R2)
    W = a - R3
    f3v, f3d, _ = f.evaluate(R3)
    q = Polynomial(BUMP.coef * (-slope_slack / (k * W)))
    adj = from_second_derivative(R3, a, f3v, f3d, q)
    av, ad, _ = (float(t[0]) for t in adj.evaluate(np.array([a])))
    tail = affine(a, a + 1.0, av, ad)
    f_adj = f.truncated(R3)
    f_adj = WarpProfile(tuple(f_adj.segments) + (adj, tail), name="f")
    psi_adj = psi_of(f_adj, k, alpha)
    hc = float(h.value(a))
    lam = rho / hc
    h_fin = h.truncated(a).rescaled(lam, name="h")
    psi_fin = psi_adj.truncated(a).rescaled(lam, name="psi")
    metric = DoublyWarpedMetric(n, m, h_fin, psi_fin, (0.0, lam * a))
    _check_wellposed(psi_fin, N, lam * a)
    return metric, a, lam, f_adj


def wellposedness_margin(psi: WarpProfile, N: float, r):
    """``sqrt(1 - (psi/N)^2) - psi'``; the tube curve needs this >= 0."""
    p, p1, _ = psi.evaluate(r)
    inside = 1 - (p / N) ** 2
    with np.errstate(invalid="ignore"):
        return np.where(inside >= 0, np.sqrt(np.maximum(inside, 0)) - p1, -np.inf)


def _check_wellposed(psi: WarpProfile, N: float, a: float, tol: float = 1e-9) -> None:
    r = np.linspace(0.0, a, 20001)
    marg = wellposedness_margin(psi, N, r)
    i = int(np.argmin(marg))
    if marg[i] < -tol:
        raise ProfileError(
            f"boundary adjustment violates psi' <= sqrt(1 - (psi/N)^2) at r={r[i]:.6g} "
            f"(margin {marg[i]:.3g})")


# -- k selection and the full construction ------------------------------------

def select_k(f_cap: WarpProfile, h_shaped: WarpProfile, n: int, m: int, alpha: float,
             target_slope: float, headroom: float, width: float = BLEND_WIDTH,
             tol: float = 1e-6, r_max: float | None = None, k_max: float = 1.0,
             k_min: float = 1e-3) -> tuple[float, ZkLocation]:
    """Largest ``k <= k_max`` (halving, then bisection to ``tol``) such that
    ``k f'(z_k) >= target_slope + headroom`` and the straightening can start
    beyond the cap zone."""

    def ok(k):
        try:
            loc = zk_for(f_cap, h_shaped, n, m, k, alpha, r_max=r_max)
        except ProfileError:
            return False, None
        if loc.slope < target_slope + headroom:
            return False, loc
        early = float(_straighten_gain(f_cap, 0.5, width)) * k
        last = min(loc.z, f_cap.domain[1] - width)
        late = float(_straighten_gain(f_cap, last, width)) * k
        return early < target_slope <= late, loc

    hi = k_max
    good, loc = ok(hi)
    if good:
        return hi, loc
    lo = k_max / 2
    while True:
        good, loc = ok(lo)
        if good:
            break
        hi = lo
        lo /= 2
        if lo < k_min:
            raise ProfileError(f"no admissible k in [{k_min:.3g}, {k_max:.6g}] for target "
                               f"slope {target_slope:.6g}")
    best = (lo, loc)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        good, loc = ok(mid)
        if good:
            lo, best = mid, (mid, loc)
        else:
            hi = mid
    return best


def construct_surgery_metric(params: SurgeryParameters,
                             base: tuple | None = None) -> SurgeryConstruction:
    """Run the full chain of profile modifications for one surgery."""
    params.validate()
    n, m, alpha = params.n, params.m, params.alpha
    if base is None:
        f0, h0 = solve_base_ivp(params.r_max, params.ode_tol)
    else:
        f0, h0 = base
    f_cap = cap_f_near_zero(f0)
    h_sh = shape_h_near_zero(h0, params.R_prime)
    target = params.target_slope
    if target >= 1:
        raise ProfileError(f"target slope {target:.6g} must be below 1")
    if params.k is None:
        k, zk = select_k(f_cap, h_sh, n, m, alpha, target, params.slope_slack,
                         params.blend_width, r_max=params.r_max, k_max=params.k_max,
                         k_min=params.k_min)
    else:
        k = params.k
        zk = zk_for(f_cap, h_sh, n, m, k, alpha, r_max=params.r_max)
    f_str, R3 = straighten_f(f_cap, zk.z, target, k, params.blend_width)
    h_fl, R2, bend = flatten_h(h_sh, f_str, R3, n, m, k, alpha, params.blend_width,
                               params.bend_factor)
    psi_str = psi_of(f_str, k, alpha)
    kappa = compute_kappa(h_fl, psi_str, R2)
    s = math.sin(params.R / params.N)
    rho = params.rho_fraction * kappa * params.N * s
    metric, a, lam, f_adj = boundary_adjust_and_rescale(
        f_str, h_fl, k, alpha, R3, R2, rho, params.R, params.N, params.slope_slack, n, m)
    geom = SurgeryGeometry(
        n=n, m=m, R=params.R, N=params.N, rho=rho, alpha=alpha, k=k, c=None, delta=None,
        landmarks={"R'": params.R_prime, "R'''": R3, "R''": R2,
                   "z_k": zk.z, "a": a},
        slope_slack=params.slope_slack, kappa=kappa, lam=lam, cap_offset=cap_offset(f_cap))
    unscaled = DoublyWarpedMetric(n, m, h_fl.truncated(a), psi_of(f_adj, k, alpha).truncated(a),
                                  (0.0, a))
    return SurgeryConstruction(params, geom, metric, unscaled, f_adj, h_fl, bend, zk,
                               {"f_cap": f_cap, "h_shaped": h_sh, "f_straight": f_str})


def ricci_components_final(con: SurgeryConstruction, r):
    return ricci_doubly_warped(con.metric, r)
