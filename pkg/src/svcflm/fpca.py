"""Truncated Karhunen-Loeve expansion of a sample of basis-expanded curves.

The eigenproblem of the empirical covariance (divisor n) is solved in
basis-coefficient space: with centered coefficients C (n x M) and Gram matrix
W over the basis, the operator restricted to the span of the basis has the
same spectrum as the symmetric matrix (1/n) * W^{1/2} C^T C W^{1/2}.
Eigenfunction coefficients are recovered as W^{-1/2} times the unit
eigenvectors, which makes them exactly L2-orthonormal, and scores are the L2
projections of the centered curves onto the eigenfunctions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BSplineBasis, gram_matrix


@dataclass(frozen=True)
class FunctionalSample:
    """A sample of curves expressed in a common basis.

    ``coef`` has one row per curve and one column per basis function.
    """

    basis: BSplineBasis
    coef: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coef, dtype=float)
        object.__setattr__(self, "coef", c)
        if c.ndim != 2:
            raise ValueError("coef must be a 2D array (curves x basis functions)")
        if c.shape[0] < 2:
            raise ValueError("need at least 2 curves")
        if c.shape[1] != self.basis.n_basis:
            raise ValueError(
                f"coef has {c.shape[1]} columns but the basis has {self.basis.n_basis} functions")
        if not np.isfinite(c).all():
            raise ValueError("coef entries must be finite")

    @property
    def n_curves(self) -> int:
        return self.coef.shape[0]


@dataclass(frozen=True)
class FPCAResult:
    """Eigenstructure of one functional predictor.

    Attributes
    ----------
    basis : BSplineBasis
        Basis the sample (and hence the eigenfunctions) are expressed in.
    mean_coef : ndarray, shape (M,)
        Basis coefficients of the sample mean curve.
    eigen_coef : ndarray, shape (M, m)
        Columns are basis coefficients of the L2-orthonormal eigenfunctions.
    eigenvalues : ndarray, shape (m,)
        Nonincreasing, >= 0; the variance captured by each component.
    scores : ndarray, shape (n, m)
        Projection of each centered curve onto each eigenfunction.
    """

    basis: BSplineBasis
    mean_coef: np.ndarray
    eigen_coef: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size


def select_truncation(eigenvalues: np.ndarray, share: float = 0.99) -> int:
    """Smallest component count whose cumulative eigenvalue share reaches ``share``."""
    ev = np.asarray(eigenvalues, dtype=float)
    total = ev.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(ev) / total
    return int(np.searchsorted(cum, share - 1e-12) + 1)


def fpca(sample: FunctionalSample, n_components: int | None = None,
         variance_share: float = 0.99) -> FPCAResult:
    """Eigenfunctions, eigenvalues and scores of the empirical covariance.

    Parameters
    ----------
    sample : FunctionalSample
    n_components : int, optional
        Number of components to keep, between 1 and min(n_curves, n_basis).
        When omitted, the smallest count reaching ``variance_share`` of the
        total variance is used.
    """
    n, m_basis = sample.coef.shape
    max_comp = min(n, m_basis)
    gram = gram_matrix(sample.basis)
    w_vals, w_vecs = np.linalg.eigh(gram)
    if w_vals[0] <= 1e-12 * w_vals[-1]:
        raise ValueError(
            f"Gram matrix is numerically singular (eigenvalue {w_vals[0]:.3e}); "
            "the basis is degenerate")
    w_half = (w_vecs * np.sqrt(w_vals)) @ w_vecs.T
    w_inv_half = (w_vecs / np.sqrt(w_vals)) @ w_vecs.T

    mean_coef = sample.coef.mean(axis=0)
    centered = sample.coef - mean_coef
    core = w_half @ (centered.T @ centered / n) @ w_half
    vals, vecs = np.linalg.eigh(0.5 * (core + core.T))
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    vals = np.maximum(vals, 0.0)

    if n_components is None:
        n_components = min(select_truncation(vals[:max_comp], variance_share), max_comp)
    if not 1 <= n_components <= max_comp:
        raise ValueError(
            f"n_components must be in [1, {max_comp}] for {n} curves over "
            f"{m_basis} basis functions, got {n_components}")

    vals = vals[:n_components]
    eigen_coef = w_inv_half @ vecs[:, :n_components]
    _fix_signs(eigen_coef)
    _break_ties(vals, eigen_coef)
    scores = centered @ gram @ eigen_coef
    return FPCAResult(basis=sample.basis, mean_coef=mean_coef, eigen_coef=eigen_coef,
                      eigenvalues=vals, scores=scores)


def _fix_signs(eigen_coef: np.ndarray) -> None:
    # Deterministic orientation: largest-magnitude coefficient made positive.
    for k in range(eigen_coef.shape[1]):
        col = eigen_coef[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            eigen_coef[:, k] = -col


def _break_ties(vals: np.ndarray, eigen_coef: np.ndarray) -> None:
    # Equal eigenvalues: order by the first differing coefficient so repeated
    # runs produce identical output.
    k = 0
    while k < vals.size:
        j = k
        while j + 1 < vals.size and vals[j + 1] == vals[k]:
            j += 1
        if j > k:
            block = eigen_coef[:, k:j + 1]
            order = sorted(range(block.shape[1]), key=lambda c: tuple(block[:, c]))
            eigen_coef[:, k:j + 1] = block[:, order]
        k = j + 1


def reconstruct(result: FPCAResult, i: int, m: int) -> np.ndarray:
    """Basis coefficients of curve ``i`` truncated to its first ``m`` components.

    ``m = 0`` returns the mean curve.
    """
    n = result.scores.shape[0]
    if not 0 <= i < n:
        raise ValueError(f"curve index {i} out of range [0, {n})")
    if not 0 <= m <= result.n_components:
        raise ValueError(f"m must be in [0, {result.n_components}], got {m}")
    return result.mean_coef + result.eigen_coef[:, :m] @ result.scores[i, :m]


def project_scores(result: FPCAResult, coef: np.ndarray) -> np.ndarray:
    """Scores of new curves (rows of ``coef``) against the fitted eigenfunctions.

    The new curves must be expressed in the training basis; centering uses the
    training mean.
    """
    coef = np.atleast_2d(np.asarray(coef, dtype=float))
    if coef.shape[1] != result.mean_coef.size:
        raise ValueError(
            f"coef has {coef.shape[1]} columns, expected {result.mean_coef.size}")
    gram = gram_matrix(result.basis)
    return (coef - result.mean_coef) @ gram @ result.eigen_coef
