"""The linear path h -> h_inf and its certificates."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pscmoduli.deformation import (build_h_infinity, c_inequality, choose_c, choose_delta,
                                   feasible_c_interval, shape_constants, uniform_constants)
from pscmoduli.profiles import ProfileError
from pscmoduli.warp_profiles import shape_h_near_zero, solve_base_ivp


@pytest.fixture(scope="module")
def h_ref():
    return shape_h_near_zero(solve_base_ivp()[1], 0.2)


def test_choose_c_satisfies_the_inequality(h_ref):
    ch = choose_c(h_ref, 4)
    lam, mu = shape_constants(h_ref)
    lhs, rhs = c_inequality(ch.c, lam, mu, 4)
    assert lhs < 0.9 * rhs
    # c is a power of two and the next one up fails (or breaks the cap)
    assert math.log2(ch.c) == int(math.log2(ch.c))
    lhs2, rhs2 = c_inequality(2 * ch.c, lam, mu, 4)
    assert lhs2 >= 0.9 * rhs2 or 2 * ch.c >= 1


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.01, 10), mu=st.floats(0.1, 1), n=st.integers(3, 8))
def test_c_inequality_is_monotone_in_c(lam, mu, n):
    vals = [c_inequality(c, lam, mu, n)[0] for c in (0.01, 0.1, 0.5, 1.0)]
    assert vals == sorted(vals)
    assert c_inequality(1.0, lam, mu, n)[1] == (n - 2) * mu


def test_uniform_constants_feasible(h_ref):
    ch, delta = uniform_constants(4, 3, h_ref, 0.2)
    assert math.sin(delta) < ch.c
    lo, hi = feasible_c_interval(delta, 0.2)
    assert lo < ch.c <= hi


@settings(max_examples=15, deadline=None)
@given(frac=st.floats(0.2, 0.9))
def test_h_infinity_shape(frac):
    R_prime, delta = 0.2, 0.08
    lo, hi = feasible_c_interval(delta, R_prime)
    c = lo + frac * (hi - lo)
    hi_prof = build_h_infinity(c, delta, R_prime, r_end=2.0)
    r = np.linspace(0, delta, 101)
    np.testing.assert_allclose(hi_prof.value(r), np.sin(r), atol=1e-15)
    r = np.linspace(delta, R_prime, 401)[1:-1]
    assert np.all(hi_prof.d2(r) < 0)
    r = np.linspace(R_prime, 2.0, 101)
    np.testing.assert_allclose(hi_prof.value(r), c, atol=1e-12)
    assert hi_prof.max_junction_error() < 1e-9


def test_h_infinity_rejects_infeasible_c():
    lo, hi = feasible_c_interval(0.1, 0.2)
    with pytest.raises(ProfileError, match="must lie in"):
        build_h_infinity(hi * 1.01, 0.1, 0.2)
    with pytest.raises(ProfileError):
        build_h_infinity(lo, 0.1, 0.2)


def test_choose_delta_rejects_impossible_c():
    with pytest.raises(ProfileError):
        choose_delta(1e-6, 0.2, step=1e-3)


def test_desk_deformation_report(desk_stage):
    rep = desk_stage.deformation
    assert rep.passed
    assert set(rep.regimes) == {"inner r<=1/4", "inner r<=1/4 signs", "middle 1/4<=r<=R''",
                                "outer r>=R''"}
    assert rep.overall.grid["resolution"][0] == 64
    assert rep.overall.min_margin > 0 and rep.dagger.min_margin > 0
    assert rep.monotone_ok
    assert rep.static is not None and rep.static.passed
    d = rep.to_dict()
    assert d["passed"] and d["c"] == desk_stage.deformation.plan.c


def test_deformation_endpoint_keeps_boundary_data(desk_stage):
    cert = desk_stage.certificates["boundary data after deformation"]
    assert cert.passed
    assert max(abs(e) for e in cert.extra["errors"]) < 1e-8
