"""Convex polytope algebra in halfspace representation.

Polytopes are intersections of halfspaces ``a . x <= b``.  On top of the
basic representation this module provides the probabilistic "augmented set"
of a polytope under diagonal Gaussian noise, LP-backed emptiness tests,
hyperplane splitting, Chebyshev centers and unsafe-overlap queries.  All
values are immutable after construction; operations are pure.

Redundant halfspaces are kept, never pruned: every operation here is correct
regardless of redundancy.  Emptiness is decided by LP feasibility; boundary
contact counts as a non-empty intersection, which errs on the conservative
side for the callers that merge far-apart regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linprog

# Boundary-tie tolerance: intersections this shallow count as non-empty.
EPS_GEO = 1e-9
# Margin used where a decision needs points strictly inside/outside a face,
# comfortably above the LP solver's own resolution.
STRICT_MARGIN = 1e-7


class GeometryError(Exception):
    pass


class EmptyPolytopeError(GeometryError):
    pass


class DegenerateSplitError(GeometryError):
    """A hyperplane failed to cut the interior of a polytope."""


@dataclass(frozen=True, eq=False)
class Halfspace:
    """The region ``a . x <= b``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        if not np.any(a != 0.0):
            raise GeometryError("halfspace normal must be nonzero")
        if not np.all(np.isfinite(a)) or not np.isfinite(self.b):
            raise GeometryError("halfspace data must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))


@dataclass(frozen=True, eq=False)
class Hyperplane:
    """The set ``normal . x = offset``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float).reshape(-1)
        if not np.any(normal != 0.0):
            raise GeometryError("hyperplane normal must be nonzero")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))


class Polytope:
    """Convex polytope ``{x : A x <= b}``.

    ``A`` is (k, n), ``b`` is (k,).  Chebyshev data and the bounding box are
    computed lazily and memoized; the halfspace data itself never changes.
    """

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise GeometryError("A and b row counts differ")
        if A.shape[0] == 0:
            raise GeometryError("polytope needs at least one halfspace")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)):
            raise GeometryError("polytope data must be finite")
        if np.any(np.all(A == 0.0, axis=1)):
            raise GeometryError("zero halfspace normal")
        self.A = A
        self.b = b
        self._cheb = None
        self._bbox = None

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def num_halfspaces(self):
        return self.A.shape[0]

    @classmethod
    def from_halfspaces(cls, halfspaces):
        hs = list(halfspaces)
        return cls(np.array([h.a for h in hs]), np.array([h.b for h in hs]))

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise GeometryError("box needs lo < hi per axis")
        n = len(lo)
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    def halfspaces(self):
        return [Halfspace(self.A[i].copy(), float(self.b[i])) for i in range(self.num_halfspaces)]

    def with_extra(self, a, b):
        """New polytope with one more halfspace ``a . x <= b`` appended."""
        return Polytope(np.vstack([self.A, np.asarray(a, dtype=float)]),
                        np.append(self.b, float(b)))

    def contains(self, x, tol=EPS_GEO):
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(self.A @ x - self.b <= tol))

    def contains_many(self, points, tol=EPS_GEO):
        """Vectorized membership for an (N, n) array of points."""
        points = np.asarray(points, dtype=float)
        return np.all(points @ self.A.T - self.b <= tol, axis=1)

    def is_empty(self):
        lp = linprog.LinearProgram(self.dim)
        for i in range(self.num_halfspaces):
            lp.add(self.A[i], "<=", self.b[i], f"h{i}")
        return isinstance(linprog.solve(lp), linprog.Infeasible)

    def bounding_box(self):
        """Tight axis-aligned (lo, hi) via 2n support LPs; memoized."""
        if self._bbox is None:
            n = self.dim
            lo = np.empty(n)
            hi = np.empty(n)
            for d in range(n):
                e = np.zeros(n)
                e[d] = 1.0
                lo[d] = self.extreme(e, "min")
                hi[d] = self.extreme(e, "max")
            self._bbox = (lo, hi)
        return self._bbox

    def extreme(self, direction, sense):
        """Min or max of ``direction . x`` over the polytope (inf if unbounded)."""
        lp = linprog.LinearProgram(self.dim)
        for i in range(self.num_halfspaces):
            lp.add(self.A[i], "<=", self.b[i], f"h{i}")
        lp.set_objective(sense, np.asarray(direction, dtype=float))
        res = linprog.solve(lp)
        if isinstance(res, linprog.Infeasible):
            raise EmptyPolytopeError("extreme of an empty polytope")
        if isinstance(res, linprog.Unbounded):
            return -math.inf if sense == "min" else math.inf
        return float(res.objective_value)

    def __repr__(self):
        return f"Polytope(dim={self.dim}, halfspaces={self.num_halfspaces})"


def gaussian_quantile(q):
    """Inverse standard normal CDF, absolute error well below 1e-9.

    Rational initial approximation (Acklam's coefficients) refined by one
    Newton step on the exact CDF computed through erfc.  This is the single
    CDF-inversion authority for the package; every caller shares its
    thresholds.
    """
    if not (0.0 < q < 1.0):
        raise ValueError(f"quantile argument must lie in (0,1), got {q}")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    p_low = 0.02425
    if q < p_low:
        r = math.sqrt(-2.0 * math.log(q))
        z = (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / \
            ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0)
    elif q <= 1.0 - p_low:
        r = q - 0.5
        s = r * r
        z = (((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5]) * r / \
            (((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1.0)
    else:
        r = math.sqrt(-2.0 * math.log(1.0 - q))
        z = -(((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / \
            ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0)
    # One Newton step: z -= (Phi(z) - q) / phi(z).
    cdf = 0.5 * math.erfc(-z / math.sqrt(2.0))
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        z -= (cdf - q) / pdf
    return z


def gaussian_cdf(z):
    """Standard normal CDF (companion to :func:`gaussian_quantile`)."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def augmented_set(poly, q, sigma):
    """Means whose diagonal-Gaussian spread satisfies every halfspace w.p. >= q.

    For noise N(0, diag(sigma^2)) the returned polytope is exactly
    ``{X : a . X <= b - z_q * sqrt(sum_d a_d^2 sigma_d^2)}`` per halfspace,
    with ``z_q`` the Gaussian quantile of ``q``.  For q > 1/2 the set shrinks,
    for q < 1/2 it grows.
    """
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    if sigma.shape != (poly.dim,):
        raise GeometryError("sigma dimension mismatch")
    if np.any(sigma <= 0.0):
        raise GeometryError("sigma entries must be positive")
    z = gaussian_quantile(q)
    spread = np.sqrt((poly.A ** 2) @ (sigma ** 2))
    return Polytope(poly.A.copy(), poly.b - z * spread)


def is_empty_intersection(p1, p2):
    """True iff the two polytopes have no common point (LP infeasibility)."""
    if p1.dim != p2.dim:
        raise GeometryError("dimension mismatch")
    stacked = Polytope(np.vstack([p1.A, p2.A]), np.concatenate([p1.b, p2.b]))
    return stacked.is_empty()


def chebyshev_center(poly):
    """Center and radius of the largest inscribed ball, by LP.

    Variables (c, r): maximize r subject to a_i . c + ||a_i|| r <= b_i.
    """
    n = poly.dim
    norms = np.linalg.norm(poly.A, axis=1)
    lp = linprog.LinearProgram(n + 1)
    for i in range(poly.num_halfspaces):
        row = np.append(poly.A[i], norms[i])
        lp.add(row, "<=", poly.b[i], f"h{i}")
    rrow = np.zeros(n + 1)
    rrow[n] = -1.0
    lp.add(rrow, "<=", 0.0, "r_nonneg")
    cost = np.zeros(n + 1)
    cost[n] = 1.0
    lp.set_objective("max", cost)
    res = linprog.solve(lp)
    if isinstance(res, linprog.Infeasible):
        raise EmptyPolytopeError("chebyshev center of an empty polytope")
    if isinstance(res, linprog.Unbounded):
        raise GeometryError("chebyshev center of an unbounded polytope")
    return res.point[:n], float(res.objective_value)


def split(poly, hyperplane):
    """Cut ``poly`` along a hyperplane into (lower, upper) parts.

    Lower keeps ``normal . x <= offset``, upper keeps ``normal . x >= offset``;
    their union is the input and their interiors are disjoint.  Raises
    :class:`DegenerateSplitError` unless both sides have nonempty interior,
    signalling the caller to pick another hyperplane.
    """
    nrm = hyperplane.normal
    off = hyperplane.offset
    margin = STRICT_MARGIN * max(1.0, float(np.linalg.norm(nrm)))
    lower_int = poly.with_extra(nrm, off - margin)
    upper_int = poly.with_extra(-nrm, -(off + margin))
    if lower_int.is_empty() or upper_int.is_empty():
        raise DegenerateSplitError("hyperplane does not cut the polytope interior")
    return poly.with_extra(nrm, off), poly.with_extra(-nrm, -off)


def cell_unsafe_overlap(cell, workspace):
    """True iff ``cell`` can reach an unsafe position.

    Tested piecewise by LP: intersection with each obstacle (lifted through
    the position projection) and with each reversed domain halfspace.  Domain
    boundary contact alone does not count: the complement test carries a
    strict margin, so a cell tiling the domain edge-to-edge stays safe.
    """
    for obstacle in workspace.lifted_obstacles():
        if not is_empty_intersection(cell, obstacle):
            return True
    dom = workspace.domain
    for i in range(dom.num_halfspaces):
        margin = STRICT_MARGIN * max(1.0, float(np.linalg.norm(dom.A[i])))
        outside = Polytope(-dom.A[i][None, :], np.array([-(dom.b[i] + margin)]))
        if not is_empty_intersection(cell, outside):
            return True
    return False
