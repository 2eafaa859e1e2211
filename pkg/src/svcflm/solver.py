"""Group adaptive elastic-net estimation by blockwise coordinate descent.

The penalized criterion acts on the fitted contribution of each predictor
block rather than on its raw coefficients, so each block is first
orthogonalized: a thin QR factorization is rescaled to U_j with
U_j^T U_j = n*I and Z_j = U_j R_j.  In those coordinates every block update
has the closed form

    theta_j <- S(U_j^T r_j, n*alpha*lam*w_j) / (n*(1-alpha)*lam + n)

where r_j is the partial residual and S the group soft-threshold operator.
The update is the exact minimizer of the working objective

    (1/(2n)) ||y - sum_j U_j theta_j||^2
      + alpha*lam * sum_j w_j ||theta_j||_2
      + ((1-alpha)*lam/2) * sum_j ||theta_j||_2^2

in block j with the others held fixed, which makes the objective
nonincreasing across sweeps.  Design-space coefficients are recovered as
b_j = R_j^{-1} theta_j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .basis import BSplineBasis, RawCurve, evaluate_basis_many, smooth_curve
from .design import VCFLMDesign, fitted_to_response
from .fpca import FPCAResult, project_scores

WEIGHT_CAP = 1e12


@dataclass(frozen=True)
class OrthogonalizedDesign:
    """Per-group factors U_j (with U_j^T U_j = n*I) and upper-triangular R_j."""

    u_blocks: list[np.ndarray]
    r_blocks: list[np.ndarray]
    n_obs: int
    group_dims: np.ndarray

    @property
    def n_groups(self) -> int:
        return len(self.u_blocks)


@dataclass(frozen=True)
class PenaltySpec:
    """Strength ``lam`` >= 0, elastic-net mixing ``alpha`` in [0, 1], and
    per-group adaptive weights (all 1 for the non-adaptive variant)."""

    lam: float
    alpha: float
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if np.any(self.weights < 0):
            raise ValueError("weights must be >= 0")


@dataclass(frozen=True)
class FitResult:
    """Solution of one penalized fit.

    ``coef_orth`` holds the orthonormalized-coordinate solution per group,
    ``coef`` the recovered design-space coefficients; ``fitted`` is the
    standardized-scale fit.  ``objective_trace`` records the working objective
    after each sweep.
    """

    coef_orth: list[np.ndarray]
    coef: list[np.ndarray]
    active: np.ndarray
    objective_trace: np.ndarray
    sweeps: int
    converged: bool
    fitted: np.ndarray = field(repr=False)


def orthogonalize(design: VCFLMDesign) -> OrthogonalizedDesign:
    """Rescaled thin QR of every design block.

    Raises ValueError naming the group and its smallest singular value when a
    block is rank deficient; reducing the component count or the exogenous
    basis size resolves that.
    """
    n = design.n_obs
    u_blocks, r_blocks = [], []
    for j, z in enumerate(design.blocks):
        svals = np.linalg.svd(z, compute_uv=False)
        cutoff = svals[0] * max(z.shape) * np.finfo(float).eps if svals.size else 0.0
        if svals.size == 0 or svals[-1] <= cutoff:
            smallest = svals[-1] if svals.size else 0.0
            raise ValueError(
                f"design block {j} is rank deficient (smallest singular value "
                f"{smallest:.3e}); reduce the number of components or basis functions")
        q, r = np.linalg.qr(z)
        signs = np.where(np.diag(r) < 0, -1.0, 1.0)
        q = q * signs
        r = r * signs[:, None]
        u_blocks.append(q * np.sqrt(n))
        r_blocks.append(r / np.sqrt(n))
    return OrthogonalizedDesign(u_blocks=u_blocks, r_blocks=r_blocks, n_obs=n,
                                group_dims=design.group_dims.copy())


def soft_threshold_group(x: np.ndarray, kappa: float) -> np.ndarray:
    """Group soft-threshold: scale ``x`` by (1 - kappa/||x||)_+.

    Returns the zero vector whenever ||x|| <= kappa (including x = 0).  The
    comparison tolerates a few ulps so thresholds computed from the
    lambda-max formula land exactly on the zero side despite rounding.
    """
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x)
    if norm <= kappa * (1.0 + 4.0 * np.finfo(float).eps) or norm == 0.0:
        return np.zeros_like(x)
    return (1.0 - kappa / norm) * x


def adaptive_weights(orth: OrthogonalizedDesign, y: np.ndarray,
                     method: str = "joint") -> np.ndarray:
    """Inverse fitted-norm weights from a pilot least squares fit.

    ``method="joint"`` (default) uses the minimum-norm solution of the joint
    least squares problem over all groups, which exists even when the stacked
    design is rank deficient; ``method="per-group"`` fits each block on its
    own.  Groups whose pilot fitted norm is below 1e-12 get the cap 1e12,
    effectively forcing them out of the model.
    """
    z_blocks = [u @ r for u, r in zip(orth.u_blocks, orth.r_blocks)]
    if method == "joint":
        stacked = np.hstack(z_blocks)
        coef, *_ = np.linalg.lstsq(stacked, y, rcond=None)
        splits = np.cumsum(orth.group_dims)[:-1]
        parts = np.split(coef, splits)
    elif method == "per-group":
        parts = [np.linalg.lstsq(z, y, rcond=None)[0] for z in z_blocks]
    else:
        raise ValueError(f"unknown weight method {method!r}")
    weights = np.empty(orth.n_groups)
    for j, (z, b) in enumerate(zip(z_blocks, parts)):
        norm = np.linalg.norm(z @ b)
        weights[j] = WEIGHT_CAP if norm < 1e-12 else min(1.0 / norm, WEIGHT_CAP)
    return weights


def block_update(j: int, partial_residual: np.ndarray,
                 orth: OrthogonalizedDesign, penalty: PenaltySpec) -> np.ndarray:
    """Exact minimizer of the working objective in block ``j``.

    ``partial_residual`` is y minus the fitted contribution of every other
    group.
    """
    n = orth.n_obs
    v = orth.u_blocks[j].T @ partial_residual
    kappa = n * penalty.alpha * penalty.lam * penalty.weights[j]
    denom = n * (1.0 - penalty.alpha) * penalty.lam + n
    return soft_threshold_group(v, kappa) / denom


def _objective(residual: np.ndarray, theta: list[np.ndarray],
               penalty: PenaltySpec, n: int) -> float:
    norms = np.array([np.linalg.norm(t) for t in theta])
    return (residual @ residual / (2.0 * n)
            + penalty.alpha * penalty.lam * float(penalty.weights @ norms)
            + 0.5 * (1.0 - penalty.alpha) * penalty.lam * float(norms @ norms))


def fit(orth: OrthogonalizedDesign, y: np.ndarray, penalty: PenaltySpec,
        tol: float = 1e-6, max_sweeps: int = 10000,
        warm_start: list[np.ndarray] | None = None) -> FitResult:
    """Blockwise coordinate descent from theta = 0 (or a warm start).

    Sweeps the groups in ascending index order, refreshing partial residuals
    after every update, and stops when the largest coordinate change in a
    sweep falls below ``tol``.  Exhausting ``max_sweeps`` is reported via
    ``converged=False``, not an error; a non-finite objective raises
    FloatingPointError.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    y = np.asarray(y, dtype=float)
    n, p = orth.n_obs, orth.n_groups
    if penalty.weights.size != p:
        raise ValueError(f"penalty has {penalty.weights.size} weights for {p} groups")
    if warm_start is None:
        theta = [np.zeros(d) for d in orth.group_dims]
        residual = y.copy()
    else:
        theta = [np.asarray(t, dtype=float).copy() for t in warm_start]
        residual = y - sum(u @ t for u, t in zip(orth.u_blocks, theta))

    trace = []
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            old = theta[j]
            old_nz = old.any()
            partial = residual + orth.u_blocks[j] @ old if old_nz else residual
            new = block_update(j, partial, orth, penalty)
            if new.any():
                residual = partial - orth.u_blocks[j] @ new
            elif old_nz:
                residual = partial
            delta = np.abs(new - old)
            if delta.size and delta.max() > max_change:
                max_change = float(delta.max())
            theta[j] = new
        obj = _objective(residual, theta, penalty, n)
        if not np.isfinite(obj):
            raise FloatingPointError("working objective became non-finite")
        trace.append(obj)
        if max_change < tol:
            converged = True
            break

    coef = [solve_triangular(r, t) for r, t in zip(orth.r_blocks, theta)]
    active = np.array([t.any() for t in theta])
    return FitResult(coef_orth=theta, coef=coef, active=active,
                     objective_trace=np.array(trace), sweeps=sweeps,
                     converged=converged, fitted=y - residual)


def kkt_residuals(result: FitResult, orth: OrthogonalizedDesign, y: np.ndarray,
                  penalty: PenaltySpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-group stationarity diagnostics at a solution.

    Returns ``(active_resid, inactive_ratio)``, both length-p arrays with NaN
    where the other condition applies.  For an active group, ``active_resid``
    is the infinity norm of the smooth stationarity equation
    (1 + (1-alpha)*lam)*theta_j - U_j^T r_j / n + alpha*lam*w_j*theta_j/||theta_j||,
    near 0 at a solution.  For an inactive group, ``inactive_ratio`` is
    ||U_j^T r_j|| / (n*alpha*lam*w_j), at most 1 up to solver tolerance.
    """
    n, p = orth.n_obs, orth.n_groups
    fitted = sum(u @ t for u, t in zip(orth.u_blocks, result.coef_orth))
    residual = np.asarray(y, dtype=float) - fitted
    active_resid = np.full(p, np.nan)
    inactive_ratio = np.full(p, np.nan)
    for j in range(p):
        theta_j = result.coef_orth[j]
        partial = residual + orth.u_blocks[j] @ theta_j
        v = orth.u_blocks[j].T @ partial / n
        bound = penalty.alpha * penalty.lam * penalty.weights[j]
        if result.active[j]:
            norm = np.linalg.norm(theta_j)
            grad = (1.0 + (1.0 - penalty.alpha) * penalty.lam) * theta_j - v \
                + bound * theta_j / norm
            active_resid[j] = np.abs(grad).max()
        else:
            v_norm = np.linalg.norm(v)
            if bound > 0:
                inactive_ratio[j] = v_norm / bound
            else:
                inactive_ratio[j] = 0.0 if v_norm == 0 else np.inf
    return active_resid, inactive_ratio


def coefficient_surface(result: FitResult, j: int, fpca_j: FPCAResult,
                        t_basis: BSplineBasis, grid_s: np.ndarray,
                        grid_t: np.ndarray) -> np.ndarray:
    """Coefficient surface of group ``j`` on a (grid_s x grid_t) lattice.

    Entry (a, b) is the surface value at (grid_s[a], grid_t[b]): the
    eigenfunction vector at s times the coefficient matrix times the
    exogenous-basis vector at t.
    """
    m_comp = fpca_j.n_components
    m_t = t_basis.n_basis
    b_mat = result.coef[j].reshape(m_comp, m_t, order="F")
    phi = evaluate_basis_many(fpca_j.basis, np.asarray(grid_s, dtype=float)) @ fpca_j.eigen_coef
    psi = evaluate_basis_many(t_basis, np.asarray(grid_t, dtype=float))
    return phi @ b_mat @ psi.T


def predict_standardized(coef: list[np.ndarray], fpca_results: list[FPCAResult],
                         t_basis: BSplineBasis, new_curves: list[list[RawCurve]],
                         new_t: np.ndarray) -> np.ndarray:
    """Standardized-scale predictions from design-space coefficients.

    ``new_curves[j]`` lists one RawCurve per new subject for predictor ``j``;
    curves are smoothed with the training bases and scored against the
    training eigenfunctions and means.  Exogenous values outside the training
    basis domain raise ValueError (no extrapolation).
    """
    new_t = np.asarray(new_t, dtype=float)
    n_new = new_t.size
    a, b = t_basis.domain
    if n_new and (new_t.min() < a or new_t.max() > b):
        raise ValueError(
            f"exogenous value outside the training domain [{a}, {b}]; refusing to extrapolate")
    if len(new_curves) != len(fpca_results):
        raise ValueError(
            f"got curves for {len(new_curves)} predictors, expected {len(fpca_results)}")
    psi = evaluate_basis_many(t_basis, new_t)
    fitted = np.zeros(n_new)
    for j, (curves, res) in enumerate(zip(new_curves, fpca_results)):
        if len(curves) != n_new:
            raise ValueError(
                f"predictor {j} has {len(curves)} curves for {n_new} new subjects")
        if n_new == 0:
            continue
        curve_coef = np.vstack([smooth_curve(c, res.basis) for c in curves])
        scores = project_scores(res, curve_coef)
        block = (psi[:, :, None] * scores[:, None, :]).reshape(n_new, -1)
        fitted += block @ coef[j]
    return fitted


def predict(result: FitResult, design: VCFLMDesign,
            fpca_results: list[FPCAResult],
            new_curves: list[list[RawCurve]], new_t: np.ndarray) -> np.ndarray:
    """Raw-scale predictions for new subjects (see :func:`predict_standardized`)."""
    fitted = predict_standardized(result.coef, fpca_results, design.t_basis,
                                  new_curves, new_t)
    return fitted * design.y_scale + design.y_center
