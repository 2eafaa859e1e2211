"""B-spline basis systems: evaluation, L2 Gram matrices, and curve smoothing.

A basis is described by a closed domain, a spline order (degree + 1) and a
sequence of interior knots; boundary knots are repeated ``order`` times (open
knot vector), so the system interpolates at the endpoints.  Order 1 with no
interior knots is the constant basis, used for models whose coefficient does
not vary with the exogenous variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class BSplineBasis:
    """B-spline system on a closed interval with an open knot vector.

    Parameters
    ----------
    domain : (float, float)
        Closed interval [a, b] over which the basis lives.
    order : int
        Spline order (polynomial degree + 1), >= 1.
    interior_knots : tuple of float
        Nondecreasing knots strictly inside (a, b).  May be empty.
    """

    domain: tuple[float, float]
    order: int
    interior_knots: tuple[float, ...] = field(default=())

    def __post_init__(self):
        a, b = float(self.domain[0]), float(self.domain[1])
        object.__setattr__(self, "domain", (a, b))
        object.__setattr__(self, "interior_knots",
                           tuple(float(k) for k in self.interior_knots))
        if not np.isfinite([a, b]).all() or a >= b:
            raise ValueError(f"domain must be a finite interval [a, b] with a < b, got {self.domain}")
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"order must be an integer >= 1, got {self.order}")
        object.__setattr__(self, "order", int(self.order))
        knots = np.asarray(self.interior_knots, dtype=float)
        if knots.size:
            if not np.isfinite(knots).all():
                raise ValueError("interior knots must be finite")
            if np.any(np.diff(knots) < 0):
                raise ValueError("interior knots must be nondecreasing")
            if knots[0] <= a or knots[-1] >= b:
                raise ValueError("interior knots must lie strictly inside the domain")

    @property
    def n_basis(self) -> int:
        return self.order + len(self.interior_knots)

    @property
    def knot_vector(self) -> np.ndarray:
        """Full open knot vector with boundary knots repeated ``order`` times."""
        a, b = self.domain
        return np.r_[np.full(self.order, a), self.interior_knots, np.full(self.order, b)]


def uniform_basis(domain: tuple[float, float], order: int, n_basis: int) -> BSplineBasis:
    """Basis of ``n_basis`` functions with equally spaced interior knots.

    When ``n_basis`` is smaller than ``order`` the order is reduced to
    ``n_basis`` so the request is always satisfiable (``n_basis=1`` yields the
    constant basis).
    """
    order = min(int(order), int(n_basis))
    n_interior = n_basis - order
    a, b = domain
    interior = tuple(np.linspace(a, b, n_interior + 2)[1:-1]) if n_interior else ()
    return BSplineBasis(domain=(a, b), order=order, interior_knots=interior)


def constant_basis(domain: tuple[float, float]) -> BSplineBasis:
    """Single basis function identically 1 on the domain."""
    return BSplineBasis(domain=domain, order=1)


@dataclass(frozen=True)
class RawCurve:
    """Discrete longitudinal observations of one curve.

    ``time_points`` must be strictly increasing and ``values`` the matching
    observations; both finite.
    """

    time_points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.time_points, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "time_points", s)
        object.__setattr__(self, "values", v)
        if s.ndim != 1 or v.ndim != 1 or s.size != v.size:
            raise ValueError("time_points and values must be 1D arrays of equal length")
        if not np.isfinite(s).all() or not np.isfinite(v).all():
            raise ValueError("time_points and values must be finite")
        if np.any(np.diff(s) <= 0):
            raise ValueError("time_points must be strictly increasing")


def evaluate_basis(basis: BSplineBasis, s) -> np.ndarray:
    """Evaluate all basis functions at scalar ``s`` in the domain.

    Returns a vector of length ``n_basis`` with nonnegative entries summing
    to 1.  Raises ValueError when ``s`` falls outside the domain.
    """
    return evaluate_basis_many(basis, np.atleast_1d(np.asarray(s, dtype=float)))[0]


def evaluate_basis_many(basis: BSplineBasis, s: np.ndarray) -> np.ndarray:
    """Evaluation matrix of shape (len(s), n_basis) at points ``s``."""
    s = np.asarray(s, dtype=float)
    a, b = basis.domain
    if s.size and (s.min() < a or s.max() > b):
        bad = s[(s < a) | (s > b)][0]
        raise ValueError(f"evaluation point {bad!r} outside basis domain [{a}, {b}]")
    if s.size == 0:
        return np.zeros((0, basis.n_basis))
    mat = BSpline.design_matrix(s, basis.knot_vector, basis.order - 1,
                                extrapolate=False)
    return mat.toarray()


def gram_matrix(basis: BSplineBasis) -> np.ndarray:
    """L2 inner-product matrix: entry (k, l) = integral of phi_k * phi_l.

    Composite Gauss-Legendre quadrature per knot interval with ``order``
    nodes, exact for the piecewise-polynomial integrand of degree
    2*(order-1) up to rounding.
    """
    a, b = basis.domain
    breaks = np.unique(np.r_[a, basis.interior_knots, b])
    nodes, weights = np.polynomial.legendre.leggauss(basis.order)
    g = np.zeros((basis.n_basis, basis.n_basis))
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi <= lo:
            continue
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        phi = evaluate_basis_many(basis, mid + half * nodes)
        g += half * (phi.T * weights) @ phi
    return 0.5 * (g + g.T)


def smooth_curve(curve: RawCurve, basis: BSplineBasis) -> np.ndarray:
    """Least-squares basis coefficients of a raw curve.

    Minimizes the sum of squared deviations between the observations and the
    spline at the observation times.  Requires at least ``n_basis``
    observations and a full-rank design; otherwise raises ValueError naming
    the basis size and the number of points.
    """
    n_obs = curve.time_points.size
    if n_obs < basis.n_basis:
        raise ValueError(
            f"cannot smooth {n_obs} observations with {basis.n_basis} basis functions; "
            f"need at least n_basis points")
    phi = evaluate_basis_many(basis, curve.time_points)
    coef, _, rank, _ = np.linalg.lstsq(phi, curve.values, rcond=None)
    if rank < basis.n_basis:
        raise ValueError(
            f"singular smoothing fit: basis of size {basis.n_basis} has rank {rank} "
            f"over the {n_obs} observation times")
    return coef


def smooth_curves(time_points: np.ndarray, values: np.ndarray,
                  basis: BSplineBasis) -> np.ndarray:
    """Least-squares coefficients for many curves sharing one time grid.

    ``values`` has one row per curve; returns the matching coefficient rows.
    Equivalent to calling :func:`smooth_curve` per row.
    """
    time_points = np.asarray(time_points, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n_obs = time_points.size
    if values.shape[1] != n_obs:
        raise ValueError(f"values has {values.shape[1]} columns for {n_obs} time points")
    if n_obs < basis.n_basis:
        raise ValueError(
            f"cannot smooth {n_obs} observations with {basis.n_basis} basis functions; "
            f"need at least n_basis points")
    phi = evaluate_basis_many(basis, time_points)
    coef, _, rank, _ = np.linalg.lstsq(phi, values.T, rcond=None)
    if rank < basis.n_basis:
        raise ValueError(
            f"singular smoothing fit: basis of size {basis.n_basis} has rank {rank} "
            f"over the {n_obs} observation times")
    return coef.T
