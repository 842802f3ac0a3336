"""Curvature formulas for doubly warped products, disc bundles and collars,
plus grid positivity certificates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .profiles import SineSegment, WarpProfile

MARGIN_FLOOR = 1e-10


class CurvatureError(ValueError):
    pass


@dataclass(frozen=True)
class DoublyWarpedMetric:
    """``dr^2 + h(r)^2 ds^2_{n-1} + psi(r)^2 ds^2_m`` on ``[0, a]``."""

    n: int
    m: int
    h: WarpProfile
    psi: WarpProfile
    domain: tuple[float, float]

    def rescaled(self, lam: float) -> "DoublyWarpedMetric":
        """``lam^2 G`` written again in arclength, ``r~ = lam r``."""
        return DoublyWarpedMetric(self.n, self.m, self.h.rescaled(lam),
                                  self.psi.rescaled(lam),
                                  (lam * self.domain[0], lam * self.domain[1]))


def _pole_scale(h: WarpProfile) -> float:
    seg = h.segments[0]
    if not isinstance(seg, SineSegment):
        raise CurvatureError("pole limit needs a sine-type cap at r = 0")
    # value_scale * A sin(x / s) with x = r / arg_scale
    if not np.isclose(h.value_scale * seg.amplitude, h.arg_scale * seg.scale):
        raise CurvatureError("sine cap is not smooth at the pole (h'(0) != 1)")
    return h.arg_scale * seg.scale


def _warp_ratios(h: WarpProfile, r: np.ndarray, pole: str):
    """``-h''/h``, ``(1 - h'^2)/h^2`` and ``h'/h`` with the sine-cap pole handled."""
    hv, h1, h2 = h.evaluate(r)
    hv, h1, h2 = map(np.asarray, (hv, h1, h2))
    with np.errstate(divide="ignore", invalid="ignore"):
        a = -h2 / hv
        b = (1.0 - h1**2) / hv**2
        c = h1 / hv
    lo = h.segments[0]
    if isinstance(lo, SineSegment):
        # on the sine cap both ratios are exactly 1/N^2 (no cancellation)
        on_cap = r <= h.arg_scale * lo.hi
        if np.any(on_cap):
            N = _pole_scale(h)
            a = np.where(on_cap, 1.0 / N**2, a)
            b = np.where(on_cap, 1.0 / N**2, b)
    at_pole = hv == 0.0
    if np.any(at_pole) and pole != "limit":
        raise CurvatureError("evaluation at the pole h = 0 with pole='exclude'")
    return a, b, c, at_pole


def ricci_doubly_warped(metric: DoublyWarpedMetric, r, pole: str = "limit"):
    """Ricci eigenvalues ``(Ric(d/dr), Ric(X), Ric(U))`` at ``r``.

    Mixed components vanish identically for this metric.
    """
    n, m = metric.n, metric.m
    r = np.asarray(r, dtype=float)
    a, b, hp_h, at_pole = _warp_ratios(metric.h, r, pole)
    p, p1, p2 = map(np.asarray, metric.psi.evaluate(r))
    with np.errstate(invalid="ignore"):
        mixed = hp_h * p1 / p
    if np.any(at_pole):
        # h'/h ~ 1/r and psi' ~ psi''(0) r
        mixed = np.where(at_pole, p2 / p, mixed)
    ric_r = (n - 1) * a - m * p2 / p
    ric_x = a + (n - 2) * b - m * mixed
    ric_u = -p2 / p + (m - 1) * (1.0 - p1**2) / p**2 - (n - 1) * mixed
    return ric_r, ric_x, ric_u


def min_ricci(metric: DoublyWarpedMetric, r, pole: str = "limit"):
    return np.minimum.reduce(ricci_doubly_warped(metric, r, pole))


def scalar_doubly_warped(metric: DoublyWarpedMetric, r, pole: str = "limit"):
    ric_r, ric_x, ric_u = ricci_doubly_warped(metric, r, pole)
    return ric_r + (metric.n - 1) * ric_x + metric.m * ric_u


def scalar_from_derivatives(n: int, m: int, h, h1, h2, p, p1, p2):
    """Five-term scalar curvature of ``dr^2 + h^2 ds^2_{n-1} + p^2 ds^2_m``."""
    return (-2 * (n - 1) * h2 / h - 2 * m * p2 / p
            + (n - 1) * (n - 2) * (1 - h1**2) / h**2
            + m * (m - 1) * (1 - p1**2) / p**2
            - 2 * (n - 1) * m * h1 * p1 / (h * p))


def h_tau(h: WarpProfile, h_inf: WarpProfile, tau, r):
    hv, h1, h2 = h.evaluate(r)
    gv, g1, g2 = h_inf.evaluate(r)
    tau = np.asarray(tau, dtype=float)
    return ((1 - tau) * hv + tau * gv, (1 - tau) * h1 + tau * g1,
            (1 - tau) * h2 + tau * g2)


def scalar_tau_family(h: WarpProfile, h_inf: WarpProfile, psi: WarpProfile,
                      n: int, m: int, tau, r, pole: str = "limit"):
    """Scalar curvature of ``dr^2 + h_tau^2 ds^2_{n-1} + psi^2 ds^2_m`` with
    ``h_tau = (1 - tau) h + tau h_inf``; broadcasts over ``tau`` and ``r``."""
    r = np.asarray(r, dtype=float)
    tau = np.asarray(tau, dtype=float)
    hv, h1, h2 = h_tau(h, h_inf, tau, r)
    p, p1, p2 = psi.evaluate(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = scalar_from_derivatives(n, m, hv, h1, h2, p, p1, p2)
    bad = ~np.isfinite(out)
    if np.any(bad):
        if pole != "limit":
            raise CurvatureError("scalar evaluated at the pole with pole='exclude'")
        # both profiles agree with sin r near the pole, where the path is constant
        G = DoublyWarpedMetric(n, m, h, psi, h.domain)
        lim = scalar_doubly_warped(G, np.broadcast_to(r, out.shape)[bad])
        out = np.array(out, dtype=float)
        out[bad] = lim
    return out


# -- disc bundles ------------------------------------------------

@dataclass(frozen=True)
class DiscBundleModel:
    """Disc bundle ``ds^2 + g_s`` with fibre radius ``theta(s)``.

    The connection enters only through scalar bounds: ``a_tensor_sq_max``
    bounds both ``2 <A_X, A_X>`` and ``<AV, AV>``, ``mixed_max`` bounds
    ``|<(delta A) X, V>|``.
    """

    theta: WarpProfile
    base_ricci_min: float
    a_tensor_sq_max: float
    mixed_max: float
    n: int
    s_max: float


def ricci_disc_bundle(model: DiscBundleModel, s):
    """``(Ric_s, Ric_X lower bound, Ric_U lower bound, mixed_ok)`` at ``s``."""
    th, t1, t2 = map(np.asarray, model.theta.evaluate(np.asarray(s, dtype=float)))
    n = model.n
    ric_s = -(n - 1) * t2 / th
    ric_x = model.base_ricci_min - 2 * th**2 * model.a_tensor_sq_max
    ric_u = (n - 2) * (1 - t1**2) / th**2 - t2 / th
    mixed_ok = ric_x * ric_u > (th * model.mixed_max) ** 2
    return ric_s, ric_x, ric_u, mixed_ok


# -- collars ---------------------------------------------------------

def collar_H(g, dg, ddg):
    """``H(w)`` from the metric matrix and its first two w-derivatives.

    Arrays have shape ``(..., d, d)``; the double sums are taken literally.
    """
    g = np.asarray(g, dtype=float)
    ginv = np.linalg.inv(g)
    d = g.shape[-1]
    # M[..., j, i] = sum_{k,p} g^{kp} dg_{jp} g_{ki}
    M = dg @ (np.swapaxes(ginv, -1, -2) @ g)
    diag = np.diagonal(g, axis1=-2, axis2=-1)
    ddiag = np.diagonal(dg, axis1=-2, axis2=-1)
    H = np.zeros(g.shape[:-2])
    for i in range(d):
        for j in range(i + 1, d):
            num = dg[..., i, j] * M[..., j, i] - ddiag[..., j] * M[..., i, i]
            H = H + 0.5 * num / (diag[..., i] * diag[..., j] - g[..., i, j] ** 2)
    Q = np.einsum("...ip,...ip->...i", dg @ ginv, dg)
    H = H + np.sum((Q - 2 * np.diagonal(ddg, axis1=-2, axis2=-1)) / (2 * diag), axis=-1)
    return H


def collar_trace_H(g, dg, ddg):
    """Invariant form ``-tr(g^-1 g'') + 3/4 tr((g^-1 g')^2) - 1/4 (tr g^-1 g')^2``."""
    ginv = np.linalg.inv(g)
    A = ginv @ dg
    return (-np.trace(ginv @ ddg, axis1=-2, axis2=-1)
            + 0.75 * np.trace(A @ A, axis1=-2, axis2=-1)
            - 0.25 * np.trace(A, axis1=-2, axis2=-1) ** 2)


@dataclass(frozen=True)
class CoordinateMetricPath:
    """A path of metrics ``g(w)`` on a chart, with lapse ``eta(w)``.

    ``metric(w, x)`` returns matrices of shape ``(..., d, d)``; ``x`` is an
    array of chart points of shape ``(..., d)``.  ``intrinsic_scalar``, when
    given, is a closed form for ``scal(g(w))``; otherwise the FD oracle is used.
    """

    w_grid: np.ndarray
    metric: Callable
    eta: Callable = None  # w -> (eta, eta')
    intrinsic_scalar: Callable = None
    dim: int = 0
    fd_step: float = 1e-4

    def __post_init__(self):
        if np.any(np.diff(self.w_grid) <= 0):
            raise CurvatureError("w_grid must be strictly increasing")

    def w_step(self) -> float:
        return float(np.min(np.diff(self.w_grid)))

    def w_derivatives(self, w, x, step: float | None = None):
        """``g``, ``dg/dw`` and ``d^2 g/dw^2`` by centred differences."""
        k = self.w_step() if step is None else step
        gm, g0, gp = self.metric(w - k, x), self.metric(w, x), self.metric(w + k, x)
        return g0, (gp - gm) / (2 * k), (gp - 2 * g0 + gm) / k**2

    def scal_g(self, w, x):
        if self.intrinsic_scalar is not None:
            return self.intrinsic_scalar(w, x)
        from .fd_oracle import fd_curvature_oracle
        x = np.atleast_2d(x)
        oracle = fd_curvature_oracle(lambda y: self.metric(w, y), step=self.fd_step)
        return np.array([oracle(xi)["scalar"] for xi in x])


def collar_scalar(path: CoordinateMetricPath, w, x, step: float | None = None,
                  h_form: str = "double-sum"):
    """Scalar curvature of ``eta^2(w) dw^2 + g(w)`` at ``(w, x)``.

    ``h_form="double-sum"`` uses :func:`collar_H`, which is exact for
    diagonal ``g``; ``"trace"`` uses the invariant :func:`collar_trace_H`,
    exact for any ``g``.
    """
    g, dg, ddg = path.w_derivatives(w, x, step)
    if np.any(np.linalg.eigvalsh(g) <= 0):
        raise CurvatureError(f"g(w) is not positive definite at w={w}")
    if h_form == "double-sum":
        H = collar_H(g, dg, ddg)
    elif h_form == "trace":
        H = collar_trace_H(g, dg, ddg)
    else:
        raise ValueError(f"unknown h_form {h_form!r}")
    eta, deta = (1.0, 0.0) if path.eta is None else path.eta(w)
    trace_term = np.sum(np.diagonal(dg, axis1=-2, axis2=-1)
                        / np.diagonal(g, axis1=-2, axis2=-1), axis=-1)
    return path.scal_g(w, x) + H / eta**2 + deta / eta**3 * trace_term


# -- certificates -----------------------------------------------------------------

@dataclass
class PositivityCertificate:
    quantity: str
    grid: dict
    min_margin: float
    argmin: list
    verdict: str
    margin_floor: float = MARGIN_FLOOR
    strict: bool = True
    refined_min_margin: float | None = None
    stable: bool | None = None
    note: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        d = {"quantity": self.quantity, "grid": self.grid,
             "min_margin": _num(self.min_margin), "argmin": [_num(a) for a in self.argmin],
             "verdict": self.verdict, "margin_floor": self.margin_floor,
             "strict": self.strict, "refined_min_margin": _num(self.refined_min_margin),
             "stable": self.stable}
        if self.note:
            d["note"] = self.note
        if self.extra:
            d["extra"] = self.extra
        return d


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else str(x)


def _axes(domain, resolution):
    return [np.linspace(lo, hi, int(n)) for (lo, hi), n in zip(domain, resolution)]


def _grid_min(quantity, axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    vals = np.asarray(quantity(*mesh), dtype=float)
    vals = np.broadcast_to(vals, mesh[0].shape)
    if np.any(np.isnan(vals)):
        idx = np.unravel_index(np.argmax(np.isnan(vals)), vals.shape)
        return float("nan"), [float(ax[i]) for ax, i in zip(axes, idx)]
    idx = np.unravel_index(np.argmin(vals), vals.shape)
    return float(vals[idx]), [float(ax[i]) for ax, i in zip(axes, idx)]


def certify_positive(quantity: Callable, domain: Sequence[tuple[float, float]],
                     resolution: Sequence[int], name: str = "quantity",
                     margin_floor: float = MARGIN_FLOOR, strict: bool = True,
                     refine: bool = True, min_resolution: int = 2,
                     axis_names: Sequence[str] | None = None) -> PositivityCertificate:
    """Evaluate ``quantity`` on a tensor grid and record its minimum.

    Strict certificates pass iff ``min > margin_floor``; non-strict ones pass
    iff ``min >= margin_floor`` (use a zero or slightly negative floor).  With
    ``refine`` the grid is re-evaluated at twice the resolution; a passing
    certificate whose positive margin more than halves is flagged unstable.
    """
    if any(int(n) < min_resolution for n in resolution):
        raise CurvatureError(f"resolution {resolution} below minimum {min_resolution}")
    axes = _axes(domain, resolution)
    margin, argmin = _grid_min(quantity, axes)
    ok = (margin > margin_floor) if strict else (margin >= margin_floor)
    grid = {"axes": list(axis_names or [f"x{i}" for i in range(len(axes))]),
            "domain": [[float(lo), float(hi)] for lo, hi in domain],
            "resolution": [int(n) for n in resolution]}
    cert = PositivityCertificate(name, grid, margin, argmin,
                                 "pass" if ok and np.isfinite(margin) else "fail",
                                 margin_floor, strict)
    if np.isnan(margin):
        cert.note = f"NaN encountered at {argmin}"
    if refine:
        refined, _ = _grid_min(quantity, _axes(domain, [2 * int(n) - 1 for n in resolution]))
        cert.refined_min_margin = refined
        cert.stable = bool(stability_ok(margin, refined, margin_floor, strict))
    return cert


def stability_ok(margin: float, refined: float, floor: float, strict: bool) -> bool:
    if not np.isfinite(refined):
        return False
    if margin > 0:
        return refined >= 0.5 * margin
    return refined >= floor if not strict else refined > floor


def certify_samples(values: np.ndarray, points: Sequence[np.ndarray], name: str,
                    grid: dict, margin_floor: float = MARGIN_FLOOR,
                    strict: bool = True) -> PositivityCertificate:
    """Certificate from precomputed samples (used where grids are irregular)."""
    values = np.asarray(values, dtype=float)
    if np.any(np.isnan(values)):
        i = int(np.argmax(np.isnan(values)))
        return PositivityCertificate(name, grid, float("nan"), [float(p[i]) for p in points],
                                     "fail", margin_floor, strict,
                                     note="NaN encountered")
    i = int(np.argmin(values))
    m = float(values[i])
    ok = (m > margin_floor) if strict else (m >= margin_floor)
    return PositivityCertificate(name, grid, m, [float(p[i]) for p in points],
                                 "pass" if ok else "fail", margin_floor, strict)
