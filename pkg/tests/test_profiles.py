"""Piecewise profiles and sign-constrained blends."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pscmoduli.profiles import (ProfileError, SineSegment, WarpProfile, affine, constant,
                                sample_grid, signed_blend)


def test_sine_profile_derivatives():
    p = WarpProfile((SineSegment(0.0, 1.0),))
    r = np.linspace(0, 1, 11)
    v, d1, d2 = p.evaluate(r)
    np.testing.assert_allclose(v, np.sin(r), atol=1e-15)
    np.testing.assert_allclose(d1, np.cos(r), atol=1e-15)
    np.testing.assert_allclose(d2, -np.sin(r), atol=1e-15)


def test_scalar_evaluation_returns_floats():
    p = WarpProfile((constant(0.0, 1.0, 2.0),))
    assert p.evaluate(0.5) == (2.0, 0.0, 0.0)


def test_segments_must_tile():
    with pytest.raises(ProfileError):
        WarpProfile((constant(0.0, 1.0, 1.0), constant(1.5, 2.0, 1.0)))
    with pytest.raises(ProfileError):
        WarpProfile(())


def test_rescaled_profile_is_lambda_h_of_r_over_lambda():
    p = WarpProfile((SineSegment(0.0, 1.0),))
    q = p.rescaled(3.0)
    assert q.domain == (0.0, 3.0)
    v, d1, d2 = q.evaluate(1.5)
    assert v == pytest.approx(3 * math.sin(0.5))
    assert d1 == pytest.approx(math.cos(0.5))
    assert d2 == pytest.approx(-math.sin(0.5) / 3)


def test_junction_errors_detect_c2_breaks():
    good = WarpProfile((constant(0.0, 1.0, 1.0), affine(1.0, 2.0, 1.0, 0.0)))
    assert good.max_junction_error() < 1e-14
    bad = WarpProfile((constant(0.0, 1.0, 1.0), affine(1.0, 2.0, 1.0, 0.5)))
    assert bad.max_junction_error() == pytest.approx(0.5)


def test_sample_grid_density():
    g = sample_grid(0.0, 2.0, 100)
    assert g.size == 201 and g[0] == 0.0 and g[-1] == 2.0
    assert sample_grid(0.0, 1e-3, 100).size == 16


@settings(max_examples=25, deadline=None)
@given(v0=st.floats(0.5, 2.0), d0=st.floats(0.2, 1.0), drop=st.floats(0.6, 1.4),
       width=st.floats(0.05, 1.0))
def test_concave_blend_matches_ends_and_is_concave(v0, d0, drop, width):
    """Blend from (v0, d0, 0) to a flat end that a concave function can reach."""
    d1 = 0.0
    # the gain d0 * width / 2 is what the symmetric concave ramp delivers
    v1 = v0 + d0 * width * (1 - 0.5 * drop)
    seg, tau = signed_blend(0.0, width, (v0, d0, 0.0), (v1, d1, 0.0), -1, max_degree=20)
    assert tau > 0
    prof = WarpProfile((seg,))
    r = np.linspace(0, width, 401)
    _, _, d2 = prof.evaluate(r)
    assert np.all(d2[1:-1] < 0)
    end = prof.evaluate(width)
    assert end[0] == pytest.approx(v1, abs=1e-9)
    assert end[1] == pytest.approx(d1, abs=1e-9)
    start = prof.evaluate(0.0)
    assert start[0] == pytest.approx(v0, abs=1e-12) and start[1] == pytest.approx(d0, abs=1e-12)


def test_infeasible_blend_raises():
    # a concave function with slope 1 at 0 cannot gain more than width
    with pytest.raises(ProfileError):
        signed_blend(0.0, 1.0, (0.0, 1.0, 0.0), (2.0, 0.0, 0.0), -1, max_degree=8)
