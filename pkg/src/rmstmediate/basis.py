"""Natural cubic spline bases for time trends.

A basis here excludes the intercept: with k interior knots it spans the
k+1 remaining dimensions of the natural cubic spline space (linear tail
behavior outside the boundary knots). Construction starts from the
truncated-power family

    N_1(t) = t,   N_{j+1}(t) = d_j(t) - d_{K-1}(t),
    d_j(t) = [(t - xi_j)_+^3 - (t - xi_K)_+^3] / (xi_K - xi_j),

and converts each function to piecewise-cubic coefficients per knot
interval by exact polynomial shifts. Evaluating the local form avoids
the catastrophic cancellation of raw truncated powers far beyond the
boundary, and makes extrapolation exactly linear: the edge pieces have
zero quadratic and cubic coefficients by construction.
"""

from dataclasses import dataclass, field

import numpy as np

from . import core
from .errors import InvalidInput

POPULATION_BOUNDARY = (0.0, 10.0)
POPULATION_INTERIOR = (1.0, 3.0, 5.0)
RANDOM_EFFECT_INTERIOR = (1.0, 5.0)


@dataclass(frozen=True)
class SplineBasis:
    boundary_knots: tuple
    interior_knots: tuple
    dimension: int
    breaks: np.ndarray = field(repr=False, compare=False)
    coefs: np.ndarray = field(repr=False, compare=False)  # (dimension, pieces, 4)


def _trunc_shift(xi, a):
    """Coefficients of (t - xi)_+^3 in powers of (t - a) on a piece with left edge a >= xi."""
    d = a - xi
    if d < 0.0:
        return np.zeros(4)
    return np.array([d * d * d, 3.0 * d * d, 3.0 * d, 1.0])


def natural_cubic_basis(boundary_knots, interior_knots):
    """Build the natural cubic basis on the given knots."""
    lo, hi = float(boundary_knots[0]), float(boundary_knots[1])
    interior = tuple(float(k) for k in interior_knots)
    if not np.isfinite([lo, hi] + list(interior)).all():
        raise InvalidInput("knots must be finite")
    if not lo < hi:
        raise InvalidInput("boundary knots must be increasing")
    if any(k2 <= k1 for k1, k2 in zip(interior, interior[1:])):
        raise InvalidInput("interior knots must be strictly increasing")
    if interior and not (lo < interior[0] and interior[-1] < hi):
        raise InvalidInput("interior knots must lie strictly inside the boundary")

    knots = np.array([lo, *interior, hi])
    n_knots = len(knots)
    if n_knots < 3:
        raise InvalidInput("need at least one interior knot")
    dim = n_knots - 1
    # one extension piece on each side keeps edge evaluation in local coordinates
    breaks = np.concatenate([[knots[0] - 1.0], knots, [knots[-1] + 1.0]])
    n_pieces = len(breaks) - 1
    coefs = np.zeros((dim, n_pieces, 4))
    for p in range(n_pieces):
        coefs[0, p] = (breaks[p], 1.0, 0.0, 0.0)  # N_1(t) = t
    for j in range(n_knots - 2):
        denom_j = knots[-1] - knots[j]
        denom_last = knots[-1] - knots[-2]
        for p in range(n_pieces):
            a = breaks[p]
            d_j = (_trunc_shift(knots[j], a) - _trunc_shift(knots[-1], a)) / denom_j
            d_last = (_trunc_shift(knots[-2], a) - _trunc_shift(knots[-1], a)) / denom_last
            coefs[j + 1, p] = d_j - d_last
    return SplineBasis(
        boundary_knots=(lo, hi),
        interior_knots=interior,
        dimension=dim,
        breaks=breaks,
        coefs=coefs,
    )


def make_population_basis():
    """Population time-trend basis: knots at 0, 1, 3, 5, 10 years (dimension 4)."""
    return natural_cubic_basis(POPULATION_BOUNDARY, POPULATION_INTERIOR)


def make_random_effect_basis():
    """Random-effect time-trend basis: knots at 0, 1, 5, 10 years (dimension 3)."""
    return natural_cubic_basis(POPULATION_BOUNDARY, RANDOM_EFFECT_INTERIOR)


def eval_basis(basis, t):
    """Evaluate all basis functions at ``t``.

    Scalar ``t`` returns a vector of length ``basis.dimension``; an array
    returns shape ``(len(t), dimension)``. Values extrapolate linearly
    outside the boundary knots, on both sides.
    """
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("basis evaluation requires finite times")
    vals = core.ppoly_eval_multi(basis.breaks, basis.coefs, np.atleast_1d(arr))
    if arr.ndim == 0:
        return vals[0]
    return vals
