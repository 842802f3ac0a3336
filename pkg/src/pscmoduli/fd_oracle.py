"""Independent curvature oracle from pure finite differences of ``g_ij``.

Used to cross-check the closed-form curvature formulas.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .curvature import CurvatureError


def _richardson(d_h, d_h2, order: int = 2):
    return (2**order * d_h2 - d_h) / (2**order - 1)


def metric_derivatives(g: Callable, x, step: float = 1e-4):
    """``g``, ``dg[e, i, j] = d_e g_ij`` and ``ddg[e, f, i, j]`` at ``x``.

    Central differences at steps ``h`` and ``h/2`` combined by Richardson
    extrapolation (fourth-order accurate).
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    g0 = np.asarray(g(x), dtype=float)
    E = np.eye(d)

    def first(h):
        return np.array([(g(x + h * E[e]) - g(x - h * E[e])) / (2 * h) for e in range(d)])

    def second(h):
        out = np.empty((d, d) + g0.shape)
        for e in range(d):
            out[e, e] = (g(x + h * E[e]) - 2 * g0 + g(x - h * E[e])) / h**2
            for f in range(e + 1, d):
                pp = g(x + h * (E[e] + E[f]))
                pm = g(x + h * (E[e] - E[f]))
                mp = g(x + h * (-E[e] + E[f]))
                mm = g(x - h * (E[e] + E[f]))
                out[e, f] = out[f, e] = (pp - pm - mp + mm) / (4 * h**2)
        return out

    dg = _richardson(first(step), first(step / 2))
    ddg = _richardson(second(step), second(step / 2))
    return g0, dg, ddg


def christoffel(g0, dg):
    """``Gamma[a, b, c] = Gamma^a_{bc}``."""
    ginv = _safe_inv(g0)
    # T[d, b, c] = d_b g_cd + d_c g_bd - d_d g_bc
    T = np.einsum("bcd->dbc", dg) + np.einsum("cbd->dbc", dg) - dg
    return 0.5 * np.einsum("ad,dbc->abc", ginv, T)


def _safe_inv(g0, cond_max: float = 1e12):
    if not np.allclose(g0, g0.T, atol=1e-12 * max(1.0, np.abs(g0).max())):
        raise CurvatureError("metric components are not symmetric")
    c = np.linalg.cond(g0)
    if not np.isfinite(c) or c > cond_max:
        raise CurvatureError(f"ill-conditioned metric (condition number {c:.3g})")
    return np.linalg.inv(g0)


def curvature_at(g: Callable, x, step: float = 1e-4) -> dict:
    """Christoffel symbols, Ricci tensor and scalar curvature at ``x``."""
    g0, dg, ddg = metric_derivatives(g, x, step)
    ginv = _safe_inv(g0)
    Gam = christoffel(g0, dg)
    # derivative of the inverse metric: d_e g^{ad} = -g^{ap} d_e g_pq g^{qd}
    dginv = -np.einsum("ap,epq,qd->ead", ginv, dg, ginv)
    T = np.einsum("bcd->dbc", dg) + np.einsum("cbd->dbc", dg) - dg
    dT = (np.einsum("ebcd->edbc", ddg) + np.einsum("ecbd->edbc", ddg) - ddg)
    # dGam[e, a, b, c] = d_e Gamma^a_{bc}
    dGam = 0.5 * (np.einsum("ead,dbc->eabc", dginv, T) + np.einsum("ad,edbc->eabc", ginv, dT))
    ricci = (np.einsum("aabd->bd", dGam) - np.einsum("daab->bd", dGam)
             + np.einsum("aae,ebd->bd", Gam, Gam) - np.einsum("ade,eab->bd", Gam, Gam))
    ricci = 0.5 * (ricci + ricci.T)
    return {"metric": g0, "christoffel": Gam, "ricci": ricci,
            "scalar": float(np.einsum("bd,bd->", ginv, ricci))}


def fd_curvature_oracle(g: Callable, step: float = 1e-4) -> Callable:
    """Return ``x -> curvature_at(g, x, step)``."""
    return lambda x: curvature_at(g, x, step)


def sphere_chart_metric(radius_sq: np.ndarray, angles: np.ndarray) -> list[np.ndarray]:
    """Diagonal entries of ``radius^2 ds^2_q`` in standard spherical angles."""
    out = []
    w = 1.0
    for i in range(len(angles) + 1):
        out.append(radius_sq * w)
        if i < len(angles):
            w = w * np.sin(angles[i]) ** 2
    return out


def doubly_warped_chart(n: int, m: int, h, psi) -> Callable:
    """Chart ``(r, theta_1..theta_{n-1}, phi_1..phi_m)`` for
    ``dr^2 + h^2 ds^2_{n-1} + psi^2 ds^2_m``; ``h`` and ``psi`` are callables
    of ``r`` (values only).  Evaluate away from angular coordinate poles."""

    def g(x):
        r = x[0]
        th = x[1:n]
        ph = x[n:]
        diag = [1.0]
        diag += sphere_chart_metric(np.asarray(h(r)) ** 2, th[:-1])
        diag += sphere_chart_metric(np.asarray(psi(r)) ** 2, ph[:-1])
        return np.diag(np.array(diag, dtype=float))

    g.dim = n + m
    return g


def doubly_warped_ricci_fd(n: int, m: int, h, psi, r: float, step: float = 1e-4,
                           angle: float = 1.1) -> tuple[float, float, float, float]:
    """FD ``(Ric_r, Ric_X, Ric_U, scal)`` of the doubly warped metric at ``r``."""
    g = doubly_warped_chart(n, m, h, psi)
    x = np.concatenate([[r], np.full(n + m - 1, angle)])
    res = curvature_at(g, x, step)
    Ric, g0 = res["ricci"], res["metric"]
    return (Ric[0, 0] / g0[0, 0], Ric[1, 1] / g0[1, 1], Ric[n, n] / g0[n, n],
            res["scalar"])
