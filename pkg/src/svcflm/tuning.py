"""BIC-driven selection of the penalty strength, mixing and exogenous basis size.

The criterion is n*log(sigma2_hat) + df*log(n) with sigma2_hat = RSS/n and the
effective degrees of freedom summing, over active groups only, the trace of
(I + Omega_j)^{-1} where Omega_j is the scalar-diagonal curvature of the
penalty at the solution.  Smaller is better; ties go to the larger penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .design import VCFLMDesign
from .solver import FitResult, OrthogonalizedDesign, PenaltySpec, adaptive_weights, \
    fit, orthogonalize


@dataclass(frozen=True)
class TuningGrid:
    """Search space: descending positive ``lambdas`` (or None to derive a
    default path per combination), ``alphas`` in (0, 1], and exogenous basis
    sizes ``t_basis_sizes`` >= 1."""

    alphas: tuple[float, ...]
    t_basis_sizes: tuple[int, ...]
    lambdas: tuple[float, ...] | None = None
    n_lambda: int = 50
    lambda_ratio: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "t_basis_sizes", tuple(int(m) for m in self.t_basis_sizes))
        if not self.alphas or not self.t_basis_sizes:
            raise ValueError("alphas and t_basis_sizes must be nonempty")
        if any(not 0 < a <= 1 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1]")
        if any(m < 1 for m in self.t_basis_sizes):
            raise ValueError("t_basis_sizes must be >= 1")
        if self.lambdas is not None:
            lams = tuple(float(x) for x in self.lambdas)
            if not lams or any(x <= 0 for x in lams) or any(
                    b >= a for a, b in zip(lams, lams[1:])):
                raise ValueError("lambdas must be positive and strictly descending")
            object.__setattr__(self, "lambdas", lams)
        if self.n_lambda < 2:
            raise ValueError("n_lambda must be >= 2")
        if not 0 < self.lambda_ratio < 1:
            raise ValueError("lambda_ratio must be in (0, 1)")


def default_grid() -> TuningGrid:
    """Default search space: 50-point lambda path down to 1e-3 of the maximum,
    alpha in {0.5, 0.9, 1.0}, basis sizes {1, 4, 6, 8}."""
    return TuningGrid(alphas=(0.5, 0.9, 1.0), t_basis_sizes=(1, 4, 6, 8))


@dataclass(frozen=True)
class TuningRow:
    """One evaluated grid point."""

    t_basis_size: int
    alpha: float
    lam: float
    bic: float
    sigma2: float
    df: float
    n_active: int


@dataclass(frozen=True)
class TuningReport:
    """All evaluated grid points plus the index of the BIC minimizer."""

    rows: tuple[TuningRow, ...]
    best_index: int

    @property
    def best(self) -> TuningRow:
        return self.rows[self.best_index]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("m2,alpha,lambda,bic,sigma2,df,n_active\n")
            for r in self.rows:
                fh.write(f"{r.t_basis_size},{r.alpha:.17g},{r.lam:.17g},{r.bic:.17g},"
                         f"{r.sigma2:.17g},{r.df:.17g},{r.n_active}\n")

    @classmethod
    def from_csv(cls, path) -> "TuningReport":
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "m2,alpha,lambda,bic,sigma2,df,n_active":
                raise ValueError(f"unexpected tuning report header: {header!r}")
            for line in fh:
                if not line.strip():
                    continue
                m2, alpha, lam, bic_val, sigma2, df, n_active = line.strip().split(",")
                rows.append(TuningRow(int(m2), float(alpha), float(lam), float(bic_val),
                                      float(sigma2), float(df), int(n_active)))
        return cls(rows=tuple(rows), best_index=_argmin_rows(rows))


def _argmin_rows(rows: Sequence[TuningRow]) -> int:
    best = 0
    for i, r in enumerate(rows[1:], start=1):
        cur = rows[best]
        if r.bic < cur.bic or (r.bic == cur.bic and r.lam > cur.lam):
            best = i
    return best


def effective_df(result: FitResult, penalty: PenaltySpec, norm: str = "orth") -> float:
    """Effective degrees of freedom of a converged fit.

    Active groups contribute d_j / (1 + omega_j) with
    omega_j = alpha*lam*w_j/||coef_j|| + (1-alpha)*lam; inactive groups
    contribute nothing.  ``norm`` picks which coordinates the curvature is
    measured in: "orth" (default, where the penalty acts) or "design".
    """
    if norm not in ("orth", "design"):
        raise ValueError(f"norm must be 'orth' or 'design', got {norm!r}")
    coefs = result.coef_orth if norm == "orth" else result.coef
    df = 0.0
    for j, theta_j in enumerate(coefs):
        if not result.active[j]:
            continue
        omega = penalty.alpha * penalty.lam * penalty.weights[j] / np.linalg.norm(theta_j) \
            + (1.0 - penalty.alpha) * penalty.lam
        df += theta_j.size / (1.0 + omega)
    return df


def bic(result: FitResult, y: np.ndarray, df: float) -> float:
    """n*log(sigma2_hat) + df*log(n), with sigma2_hat = RSS/n floored at 1e-12."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n <= 1:
        raise ValueError("BIC needs more than one observation")
    rss = float(np.sum((y - result.fitted) ** 2))
    sigma2 = max(rss / n, 1e-12)
    return n * math.log(sigma2) + df * math.log(n)


def lambda_max(orth: OrthogonalizedDesign, y: np.ndarray, weights: np.ndarray,
               alpha: float) -> float:
    """Smallest penalty strength at which every group is thresholded to zero."""
    if alpha <= 0:
        raise ValueError("lambda_max requires alpha > 0")
    y = np.asarray(y, dtype=float)
    n = orth.n_obs
    weights = np.asarray(weights, dtype=float)
    norms = np.array([np.linalg.norm(u.T @ y) for u in orth.u_blocks])
    return float(np.max(norms / (n * alpha * weights)))


def default_lambda_grid(orth: OrthogonalizedDesign, y: np.ndarray,
                        weights: np.ndarray, alpha: float,
                        n_points: int = 50, ratio: float = 1e-3) -> np.ndarray:
    """Descending geometric path from lambda_max down to lambda_max*ratio."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0; supply explicit lambdas for pure ridge")
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    lam_max = lambda_max(orth, y, weights, alpha)
    return lam_max * ratio ** (np.arange(n_points) / (n_points - 1))


def select(design_builder: Callable[[int], VCFLMDesign], grid: TuningGrid,
           adaptive: bool = True, weight_method: str = "joint",
           df_norm: str = "orth", tol: float = 1e-6, max_sweeps: int = 10000,
           ) -> tuple[FitResult, TuningReport]:
    """Search the grid and return the BIC-minimizing fit with the full report.

    For each exogenous basis size the design is rebuilt and orthogonalized
    once; for each alpha the lambda path is walked in descending order with
    warm starts.  Per-point failures are collected; only when every point
    fails is an aggregate error raised.  Ties in BIC resolve toward the larger
    penalty.
    """
    rows: list[TuningRow] = []
    fits: list[FitResult] = []
    failures: list[str] = []
    for m2 in grid.t_basis_sizes:
        design = design_builder(m2)
        orth = orthogonalize(design)
        y = design.y
        weights = adaptive_weights(orth, y, method=weight_method) if adaptive \
            else np.ones(orth.n_groups)
        for alpha in grid.alphas:
            lambdas = grid.lambdas if grid.lambdas is not None else \
                default_lambda_grid(orth, y, weights, alpha,
                                    n_points=grid.n_lambda, ratio=grid.lambda_ratio)
            warm = None
            for lam in lambdas:
                penalty = PenaltySpec(lam=float(lam), alpha=alpha, weights=weights)
                try:
                    result = fit(orth, y, penalty, tol=tol, max_sweeps=max_sweeps,
                                 warm_start=warm)
                except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
                    failures.append(f"m2={m2} alpha={alpha} lambda={lam}: {exc}")
                    continue
                warm = result.coef_orth
                df = effective_df(result, penalty, norm=df_norm)
                rows.append(TuningRow(
                    t_basis_size=m2, alpha=alpha, lam=float(lam),
                    bic=bic(result, y, df), sigma2=max(
                        float(np.sum((y - result.fitted) ** 2)) / y.size, 1e-12),
                    df=df, n_active=int(result.active.sum())))
                fits.append(result)
    if not rows:
        detail = "; ".join(failures[:5])
        raise ValueError(f"all {len(failures)} tuning fits failed: {detail}")
    best = _argmin_rows(rows)
    report = TuningReport(rows=tuple(rows), best_index=best)
    return fits[best], report
