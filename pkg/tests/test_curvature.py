"""Closed-form curvature against the finite-difference oracle, and certificates."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pscmoduli.curvature import (CoordinateMetricPath, DoublyWarpedMetric, collar_H,
                                 collar_scalar, collar_trace_H, certify_positive, min_ricci,
                                 ricci_doubly_warped, scalar_doubly_warped, scalar_tau_family)
from pscmoduli.fd_oracle import (curvature_at, doubly_warped_chart, doubly_warped_ricci_fd,
                                 sphere_chart_metric)
from pscmoduli.profiles import FunctionSegment, SineSegment, WarpProfile, constant

ANGLE = 1.1


def smooth_profile(c0, amp, freq, phase, lo=0.0, hi=3.0):
    """``c0 (1 + amp sin(freq r + phase))``, positive for ``amp < 1``."""
    def fn(r):
        s, c = np.sin(freq * r + phase), np.cos(freq * r + phase)
        return c0 * (1 + amp * s), c0 * amp * freq * c, -c0 * amp * freq**2 * s
    return WarpProfile((FunctionSegment(lo, hi, fn, "random"),))


def random_metric(rng, n, m):
    h = smooth_profile(rng.uniform(0.5, 2), rng.uniform(0, 0.5), rng.uniform(0.2, 2),
                       rng.uniform(0, 6))
    p = smooth_profile(rng.uniform(0.5, 2), rng.uniform(0, 0.5), rng.uniform(0.2, 2),
                       rng.uniform(0, 6))
    return DoublyWarpedMetric(n, m, h, p, (0.0, 3.0))


def fd_components(G, r):
    return doubly_warped_ricci_fd(G.n, G.m, G.h.value, G.psi.value, r, angle=ANGLE)


@pytest.mark.parametrize("n", [3, 4, 7])
def test_fd_oracle_round_sphere(n):
    """The oracle itself on dr^2 + sin^2 r ds^2_{n-1}, at its own accuracy."""
    def g(x):
        diag = [1.0] + sphere_chart_metric(np.sin(x[0]) ** 2, x[1:-1])
        return np.diag(diag)
    for r in (0.3, 0.9, 1.5, 2.4):
        x = np.concatenate([[r], np.full(n - 1, ANGLE)])
        res = curvature_at(g, x)
        ric = res["ricci"] @ np.linalg.inv(res["metric"])
        np.testing.assert_allclose(ric, (n - 1) * np.eye(n), atol=1e-5)


@pytest.mark.parametrize("n", [3, 4, 7])
def test_round_sphere_closed_form_with_constant_second_factor(n):
    """With psi constant and m >= 2 the closed form on the h-factor gives n - 1."""
    h = WarpProfile((SineSegment(0.0, 3.0),))
    p = WarpProfile((constant(0.0, 3.0, 1.0),))
    G = DoublyWarpedMetric(n, 2, h, p, (0.0, 3.0))
    r = np.linspace(0.0, 3.0, 301)
    ric_r, ric_x, _ = ricci_doubly_warped(G, r)
    np.testing.assert_allclose(ric_r, n - 1, atol=1e-12)
    np.testing.assert_allclose(ric_x, n - 1, atol=1e-12)


def test_formulas_match_fd_oracle_on_100_random_profiles():
    rng = np.random.default_rng(20240611)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(2, 4))
        G = random_metric(rng, n, m)
        r = float(rng.uniform(0.3, 2.7))
        rr, rx, ru = (float(x) for x in ricci_doubly_warped(G, r))
        fr, fx, fu, fs = fd_components(G, r)
        s = float(scalar_doubly_warped(G, r))
        for a, b in ((rr, fr), (rx, fx), (ru, fu), (s, fs)):
            worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    assert worst < 1e-5


@settings(max_examples=20, deadline=None)
@given(c=st.floats(0.5, 2), amp=st.floats(0, 0.5), freq=st.floats(0.2, 2),
       phase=st.floats(0, 6), r=st.floats(0.3, 2.7))
def test_ricci_formula_matches_fd_property(c, amp, freq, phase, r):
    G = DoublyWarpedMetric(3, 2, smooth_profile(c, amp, freq, phase),
                           smooth_profile(1.0, 0.3, 1.0, 0.5), (0.0, 3.0))
    closed = [float(x) for x in ricci_doubly_warped(G, r)]
    fd = fd_components(G, r)[:3]
    np.testing.assert_allclose(closed, fd, atol=1e-5, rtol=1e-5)


def test_pole_limit_is_the_round_value():
    h = WarpProfile((SineSegment(0.0, 1.0),))
    p = WarpProfile((constant(0.0, 1.0, 2.0),))
    G = DoublyWarpedMetric(4, 3, h, p, (0.0, 1.0))
    at0 = [float(x) for x in ricci_doubly_warped(G, 0.0)]
    near = [float(x) for x in ricci_doubly_warped(G, 1e-6)]
    np.testing.assert_allclose(at0, near, atol=1e-6)


def test_tau_family_endpoints(desk_construction):
    from pscmoduli.deformation import build_h_infinity
    U = desk_construction.metric_unscaled
    hi = build_h_infinity(0.125, 0.117, 0.2, r_end=U.domain[1] + 1)
    r = np.linspace(0.01, U.domain[1], 101)
    s0 = scalar_tau_family(U.h, hi, U.psi, 4, 3, 0.0, r)
    np.testing.assert_allclose(s0, scalar_doubly_warped(U, r), rtol=1e-12)
    s1 = scalar_tau_family(U.h, hi, U.psi, 4, 3, 1.0, r)
    np.testing.assert_allclose(s1, scalar_doubly_warped(DoublyWarpedMetric(4, 3, hi, U.psi,
                                                                           U.domain), r),
                               rtol=1e-12)


# -- collar scalar ---------------------------------------------------------------

def warped_path(G, eta=None):
    """``g(w)`` = the doubly warped slices with ``w`` playing ``r``; chart (angles)."""
    n, m = G.n, G.m

    def metric(w, x):
        x = np.asarray(x, dtype=float)
        w = np.broadcast_to(np.asarray(w, float), x.shape[:-1])
        a2 = G.h.value(w) ** 2
        b2 = G.psi.value(w) ** 2
        th = [x[..., i] for i in range(0, n - 2)]
        ph = [x[..., i] for i in range(n - 1, n + m - 2)]
        diag = np.broadcast_arrays(*(sphere_chart_metric(a2, th) + sphere_chart_metric(b2, ph)))
        out = np.zeros(diag[0].shape + (len(diag), len(diag)))
        for i, d in enumerate(diag):
            out[..., i, i] = d
        return out

    def scal(w, x):
        # a product of round spheres of radii h(w) and psi(w)
        val = (n - 1) * (n - 2) / G.h.value(w) ** 2 + m * (m - 1) / G.psi.value(w) ** 2
        return np.broadcast_to(val, np.shape(x)[:-1])

    return CoordinateMetricPath(np.linspace(0.5, 2.5, 201), metric, eta, scal, n + m - 1)


@pytest.mark.parametrize("seed", range(5))
def test_collar_scalar_with_unit_lapse_is_the_warped_scalar(seed):
    rng = np.random.default_rng(seed)
    G = random_metric(rng, 3, 2)
    path = warped_path(G)
    x = np.full(G.n + G.m - 1, ANGLE)
    for w in (0.8, 1.3, 2.0):
        got = float(collar_scalar(path, w, x, step=1e-4))
        assert got == pytest.approx(float(scalar_doubly_warped(G, w)), rel=1e-5, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_collar_scalar_with_lapse_matches_fd(seed):
    """``eta(w)^2 dw^2 + g(w)`` against the FD oracle on the full chart."""
    rng = np.random.default_rng(100 + seed)
    G = random_metric(rng, 3, 2)
    A, B = rng.uniform(0.5, 1.5), rng.uniform(-0.3, 0.3)
    eta = lambda w: (A + B * np.sin(w), B * np.cos(w))
    path = warped_path(G, eta)
    d = G.n + G.m - 1

    def full(y):
        w = y[0]
        out = np.zeros((d + 1, d + 1))
        out[0, 0] = eta(w)[0] ** 2
        out[1:, 1:] = path.metric(w, y[1:])
        return out

    for w in (0.9, 1.6):
        x = np.full(d, ANGLE)
        got = float(collar_scalar(path, w, x, step=1e-4))
        ref = curvature_at(full, np.concatenate([[w], x]))["scalar"]
        assert got == pytest.approx(ref, rel=1e-5, abs=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.3, 3.0), min_size=4, max_size=4),
       st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4),
       st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4))
def test_double_sum_H_equals_trace_form_for_diagonal_metrics(g, dg, ddg):
    G, D, DD = np.diag(g), np.diag(dg), np.diag(ddg)
    assert float(collar_H(G, D, DD)) == pytest.approx(float(collar_trace_H(G, D, DD)),
                                                       rel=1e-9, abs=1e-9)


# -- certificates --------------------------------------------------------------

def test_certificate_records_minimum_and_argmin():
    c = certify_positive(lambda x: (x - 0.3) ** 2 + 0.1, [(0.0, 1.0)], [101], name="q")
    assert c.passed and c.min_margin == pytest.approx(0.1)
    assert c.argmin[0] == pytest.approx(0.3)
    assert c.stable
    d = c.to_dict()
    assert d["verdict"] == "pass" and d["grid"]["resolution"] == [101]


def test_certificate_fails_on_negative_and_nan():
    assert not certify_positive(lambda x: x - 0.5, [(0.0, 1.0)], [11]).passed
    c = certify_positive(lambda x: np.where(x > 0.5, np.nan, 1.0), [(0.0, 1.0)], [11])
    assert not c.passed and "NaN" in c.note


def test_non_strict_certificate_accepts_zero():
    c = certify_positive(lambda x: 0.0 * x, [(0.0, 1.0)], [11], margin_floor=0.0, strict=False)
    assert c.passed
    assert not certify_positive(lambda x: 0.0 * x, [(0.0, 1.0)], [11], margin_floor=0.0).passed


def test_min_ricci_is_componentwise_minimum():
    rng = np.random.default_rng(3)
    G = random_metric(rng, 4, 3)
    r = np.linspace(0.5, 2.5, 11)
    np.testing.assert_allclose(min_ricci(G, r), np.minimum.reduce(ricci_doubly_warped(G, r)))
    assert math.isfinite(float(scalar_doubly_warped(G, 1.0)))


def test_doubly_warped_chart_dimension():
    h = smooth_profile(1, 0.1, 1, 0)
    g = doubly_warped_chart(4, 3, h.value, h.value)
    assert g.dim == 7
    assert g(np.full(7, ANGLE)).shape == (7, 7)
