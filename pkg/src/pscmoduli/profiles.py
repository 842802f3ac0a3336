"""Piecewise C^2 scalar profiles with exact value / first / second derivative.

A :class:`WarpProfile` is an ordered tuple of segments tiling an interval.
Each segment evaluates ``(value, d1, d2)`` at global radius ``r``; clipping a
segment only changes its interval, never its formula.  Profiles may carry an
affine value map and an argument rescale, which is how ``psi = k (f + alpha)``
and the global rescale ``r -> lambda r`` are expressed without copying data.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import linprog

KINDS = (
    "analytic-sine",
    "affine",
    "constant",
    "ode-dense-output",
    "polynomial-blend",
    "derived",
)

SMOOTHSTEP = Polynomial([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])
# integral over [0, 1] is 1
BUMP = Polynomial([0.0, 0.0, 30.0, -60.0, 30.0])


class ProfileError(ValueError):
    """A profile construction could not satisfy its shape requirements."""


@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float

    kind = "abstract"

    def evaluate(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def clip(self, lo: float, hi: float) -> "Segment":
        return dataclasses.replace(self, lo=lo, hi=hi)

    def describe(self) -> dict:
        return {"kind": self.kind, "interval": [self.lo, self.hi]}


@dataclass(frozen=True)
class SineSegment(Segment):
    """``amplitude * sin(r / scale)``."""

    amplitude: float = 1.0
    scale: float = 1.0
    kind = "analytic-sine"

    def evaluate(self, r):
        x = r / self.scale
        a = self.amplitude
        return (a * np.sin(x), a / self.scale * np.cos(x),
                -a / self.scale**2 * np.sin(x))


@dataclass(frozen=True)
class AffineSegment(Segment):
    origin: float = 0.0
    value: float = 0.0
    slope: float = 0.0

    @property
    def kind(self):  # type: ignore[override]
        return "constant" if self.slope == 0.0 else "affine"

    def evaluate(self, r):
        v = self.value + self.slope * (r - self.origin)
        return v, np.full_like(r, self.slope), np.zeros_like(r)


@dataclass(frozen=True)
class PolySegment(Segment):
    """Polynomial in the local variable ``u = r - origin``."""

    origin: float = 0.0
    poly: Polynomial = field(default_factory=lambda: Polynomial([0.0]))
    kind = "polynomial-blend"

    def evaluate(self, r):
        u = r - self.origin
        p1 = self.poly.deriv()
        return self.poly(u), p1(u), p1.deriv()(u)

    def describe(self):
        d = super().describe()
        d["origin"] = self.origin
        d["coefficients"] = [float(c) for c in self.poly.coef]
        return d


@dataclass(frozen=True)
class OdeSegment(Segment):
    """Dense output of ``f'' = 1/f``; ``component`` selects f or h = f'.

    ``offset`` is subtracted from the f value (derivatives are unchanged).
    """

    solution: object = None
    component: str = "f"
    offset: float = 0.0
    kind = "ode-dense-output"

    def evaluate(self, r):
        y = np.atleast_2d(self.solution(np.atleast_1d(r)))
        f, fp = y[0].reshape(np.shape(r)), y[1].reshape(np.shape(r))
        if self.component == "f":
            return f - self.offset, fp, 1.0 / f
        return fp, 1.0 / f, -fp / f**2

    def describe(self):
        d = super().describe()
        d["component"] = self.component
        if self.offset:
            d["offset"] = self.offset
        return d


@dataclass(frozen=True)
class FunctionSegment(Segment):
    """Any vectorised callable returning ``(value, d1, d2)``."""

    func: Callable = None
    label: str = ""
    kind = "derived"

    def evaluate(self, r):
        v, d1, d2 = self.func(r)
        return (np.broadcast_to(v, np.shape(r)).astype(float),
                np.broadcast_to(d1, np.shape(r)).astype(float),
                np.broadcast_to(d2, np.shape(r)).astype(float))

    def describe(self):
        d = super().describe()
        d["label"] = self.label
        return d


@dataclass(frozen=True)
class WarpProfile:
    """Piecewise C^2 function ``value_scale * raw(r / arg_scale) + value_shift``.

    Outside the tiled interval the first / last segment formula is used, so
    evaluation is defined on the whole domain even at round-off distance
    beyond the endpoints.
    """

    segments: tuple[Segment, ...]
    name: str = ""
    value_scale: float = 1.0
    value_shift: float = 0.0
    arg_scale: float = 1.0

    def __post_init__(self):
        if not self.segments:
            raise ProfileError("profile needs at least one segment")
        for a, b in zip(self.segments, self.segments[1:]):
            if not np.isclose(a.hi, b.lo, rtol=0, atol=1e-12 * max(1.0, abs(a.hi))):
                raise ProfileError(f"segments do not tile: {a.hi} != {b.lo}")

    @property
    def domain(self) -> tuple[float, float]:
        return (self.arg_scale * self.segments[0].lo,
                self.arg_scale * self.segments[-1].hi)

    @property
    def breakpoints(self) -> list[float]:
        return [self.arg_scale * s.hi for s in self.segments[:-1]]

    def evaluate(self, r) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        r = np.asarray(r, dtype=float)
        x = np.atleast_1d(r / self.arg_scale)
        edges = np.array([s.hi for s in self.segments[:-1]])
        idx = np.searchsorted(edges, x, side="right")
        v = np.empty_like(x)
        d1 = np.empty_like(x)
        d2 = np.empty_like(x)
        for i in np.unique(idx):
            sel = idx == i
            a, b, c = self.segments[i].evaluate(x[sel])
            v[sel], d1[sel], d2[sel] = a, b, c
        s, k = self.value_scale, self.arg_scale
        out = (s * v + self.value_shift, s * d1 / k, s * d2 / k**2)
        if r.ndim == 0:
            return tuple(float(o[0]) for o in out)
        return out

    __call__ = evaluate

    def value(self, r):
        return self.evaluate(r)[0]

    def d1(self, r):
        return self.evaluate(r)[1]

    def d2(self, r):
        return self.evaluate(r)[2]

    # -- transforms ---------------------------------------------------------
    def affine(self, scale: float, shift: float = 0.0, name: str = "") -> "WarpProfile":
        """Profile of ``scale * self + shift``."""
        return dataclasses.replace(
            self, name=name or self.name, value_scale=scale * self.value_scale,
            value_shift=scale * self.value_shift + shift)

    def rescaled(self, lam: float, name: str = "") -> "WarpProfile":
        """Profile of ``r~ -> lam * self(r~ / lam)`` (global metric rescale)."""
        return dataclasses.replace(
            self, name=name or self.name, value_scale=lam * self.value_scale,
            value_shift=lam * self.value_shift, arg_scale=lam * self.arg_scale)

    def splice(self, new: Sequence[Segment], name: str = "") -> "WarpProfile":
        """Replace the raw interval covered by ``new`` with ``new``.

        Only defined for untransformed profiles; modifications are made before
        any affine map or rescale is attached.
        """
        if (self.value_scale, self.value_shift, self.arg_scale) != (1.0, 0.0, 1.0):
            raise ProfileError("splice requires an untransformed profile")
        lo, hi = new[0].lo, new[-1].hi
        out: list[Segment] = []
        for s in self.segments:
            if s.hi <= lo:
                out.append(s)
            elif s.lo < lo:
                out.append(s.clip(s.lo, lo))
        out.extend(new)
        for s in self.segments:
            if s.lo >= hi:
                out.append(s)
            elif s.hi > hi:
                out.append(s.clip(hi, s.hi))
        return WarpProfile(tuple(out), name=name or self.name)

    def truncated(self, hi: float) -> "WarpProfile":
        """Drop raw segments beyond ``hi`` and clip the last one to end there."""
        out = [s for s in self.segments if s.lo < hi]
        out[-1] = out[-1].clip(out[-1].lo, hi)
        return dataclasses.replace(self, segments=tuple(out))

    # -- audits and export --------------------------------------------------
    def junction_errors(self) -> list[dict]:
        """Value / d1 / d2 jumps at every internal junction (raw coordinates)."""
        rows = []
        for a, b in zip(self.segments, self.segments[1:]):
            x = np.array([b.lo])
            left = np.array(a.evaluate(x)).ravel()
            right = np.array(b.evaluate(x)).ravel()
            scale = np.maximum(1.0, np.abs(left))
            rows.append({"r": float(b.lo * self.arg_scale),
                         "jumps": (np.abs(left - right) / scale).tolist(),
                         "kinds": [a.kind, b.kind]})
        return rows

    def max_junction_error(self) -> float:
        errs = [max(row["jumps"]) for row in self.junction_errors()]
        return max(errs, default=0.0)

    def describe(self) -> dict:
        return {"name": self.name, "domain": list(self.domain),
                "value_scale": self.value_scale, "value_shift": self.value_shift,
                "arg_scale": self.arg_scale,
                "segments": [s.describe() for s in self.segments]}

    def to_csv(self, path, r: np.ndarray | None = None, samples_per_unit: int = 256):
        """Write ``r, value, d1, d2`` rows with 17 significant digits."""
        if r is None:
            lo, hi = self.domain
            r = np.linspace(lo, hi, max(2, int((hi - lo) * samples_per_unit) + 1))
        v, d1, d2 = self.evaluate(np.asarray(r, dtype=float))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "value", "d1", "d2"])
            for row in zip(r, v, d1, d2):
                w.writerow([f"{x:.17g}" for x in row])


def constant(lo: float, hi: float, value: float) -> AffineSegment:
    return AffineSegment(lo, hi, origin=lo, value=value, slope=0.0)


def affine(lo: float, hi: float, value: float, slope: float) -> AffineSegment:
    return AffineSegment(lo, hi, origin=lo, value=value, slope=slope)


def _in_local(q_t: Polynomial, width: float) -> Polynomial:
    """Re-express a polynomial in ``t in [0,1]`` as one in ``u = t * width``."""
    coef = np.asarray(q_t.coef, dtype=float)
    return Polynomial(coef / width ** np.arange(coef.size))


def from_second_derivative(x0: float, x1: float, v0: float, d0: float,
                           q_t: Polynomial) -> PolySegment:
    """Segment on ``[x0, x1]`` whose second derivative is ``q_t((r-x0)/(x1-x0))``."""
    width = x1 - x0
    if width <= 0:
        raise ProfileError(f"empty blend window [{x0}, {x1}]")
    q = _in_local(q_t, width)
    poly = q.integ(2) + Polynomial([v0, d0])
    return PolySegment(x0, x1, origin=x0, poly=poly)


def _bernstein(i: int, d: int) -> Polynomial:
    return comb(d, i) * Polynomial([0.0, 1.0]) ** i * Polynomial([1.0, -1.0]) ** (d - i)


def bernstein_poly(coef: Sequence[float]) -> Polynomial:
    d = len(coef) - 1
    return sum((c * _bernstein(i, d) for i, c in enumerate(coef)), Polynomial([0.0]))


def signed_blend(x0: float, x1: float, start: Sequence[float], end: Sequence[float],
                 sign: int, degree: int = 5, max_degree: int = 15,
                 objective: str = "margin", match_value: bool = True
                 ) -> tuple[PolySegment, float]:
    """Lowest-degree :func:`signed_blend_of_degree` (from ``degree`` upward)
    whose second derivative has the requested sign."""
    last = None
    for d in range(degree, max_degree + 1):
        try:
            return signed_blend_of_degree(x0, x1, start, end, sign, d, objective, match_value)
        except ProfileError as exc:
            last = exc
    raise last


def signed_blend_of_degree(x0: float, x1: float, start: Sequence[float],
                           end: Sequence[float], sign: int, degree: int,
                           objective: str = "margin", match_value: bool = True
                           ) -> tuple[PolySegment, float]:
    """C^2 blend on ``[x0, x1]`` whose second derivative has a fixed sign.

    The second derivative is a Bernstein polynomial of ``degree`` in
    ``t = (r - x0)/(x1 - x0)``; its end coefficients are the prescribed end
    curvatures and its interior coefficients satisfy ``sign * c_i >= tau``,
    which certifies ``sign * f'' > 0`` on the open window whenever ``tau > 0``
    (and ``>= 0`` when ``tau = 0`` and ``objective == "peak"``).  The slope
    condition and (if ``match_value``) the value condition at ``x1`` are
    linear in the coefficients.

    ``objective="margin"`` maximises ``tau``; ``objective="peak"`` minimises
    ``max |c_i|`` with ``tau = 0`` (the gentlest blend of that sign); the end
    value is then left free.  Returns the segment and the achieved figure
    (``tau`` or the peak bound).  Raises :class:`ProfileError` when infeasible.
    """
    v0, d0, s0 = start
    v1, d1, s1 = end
    L = x1 - x0
    if L <= 0:
        raise ProfileError(f"empty blend window [{x0}, {x1}]")
    if degree < 2:
        raise ProfileError("blend degree must be at least 2")
    nb = degree + 1
    idx = np.arange(nb)
    a_eq = [np.full(nb, 1.0 / nb)]
    b_eq = [(d1 - d0) / L]
    if match_value:
        a_eq.append((nb - idx) / (nb * (nb + 1.0)))
        b_eq.append((v1 - v0 - d0 * L) / L**2)
    for j, val in ((0, s0), (degree, s1)):
        e = np.zeros(nb)
        e[j] = 1.0
        a_eq.append(e)
        b_eq.append(val)
    A_eq = np.hstack([np.array(a_eq), np.zeros((len(a_eq), 1))])
    interior = np.eye(nb)[1:-1]
    cost = np.zeros(nb + 1)
    scale = 1.0 + abs(s0) + abs(s1) + abs(b_eq[0]) + (abs(b_eq[1]) if match_value else 0.0)
    if objective == "margin":
        # sign * c_i >= tau, maximise tau
        A_ub = np.hstack([-sign * interior, np.ones((nb - 2, 1))])
        b_ub = np.zeros(nb - 2)
        cost[-1] = -1.0
        bounds = [(-1e4 * scale, 1e4 * scale)] * nb + [(None, 10 * scale)]
    elif objective == "peak":
        # sign * c_i >= 0 and sign * c_i <= P, minimise P
        A_ub = np.vstack([np.hstack([-sign * interior, np.zeros((nb - 2, 1))]),
                          np.hstack([sign * np.eye(nb), -np.ones((nb, 1))])])
        b_ub = np.zeros(A_ub.shape[0])
        cost[-1] = 1.0
        bounds = [(None, None)] * nb + [(0, None)]
    else:
        raise ValueError(f"unknown blend objective {objective!r}")
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise ProfileError(
            f"no blend with sign {sign:+d} on [{x0:.6g}, {x1:.6g}] at degree {degree} "
            f"({res.message})")
    figure = float(res.x[-1])
    if objective == "margin" and figure <= 0:
        raise ProfileError(
            f"no blend with sign {sign:+d} on [{x0:.6g}, {x1:.6g}] at degree {degree}; "
            f"best coefficient margin {figure:.3g}")
    coef = np.array(res.x[:-1])
    coef[0], coef[-1] = s0, s1
    return from_second_derivative(x0, x1, v0, d0, bernstein_poly(coef)), figure


def sample_grid(lo: float, hi: float, per_unit: int, minimum: int = 16) -> np.ndarray:
    n = max(minimum, int(np.ceil((hi - lo) * per_unit)) + 1)
    return np.linspace(lo, hi, n)
