"""Linearized regression problem for the varying-coefficient functional model.

Each functional predictor contributes one design block whose row i is the
Kronecker product of the exogenous-basis values at t_i (outer factor) with the
predictor's FPC scores for subject i (inner factor).  That ordering matches a
column-major vectorization of the coefficient matrix, whose rows index score
components and columns index exogenous basis functions.  The response is
standardized to mean 0 and standard deviation 1 (divisor n); the constants are
kept for mapping fits back to the original scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BSplineBasis, evaluate_basis_many
from .fpca import FPCAResult


@dataclass(frozen=True)
class VCFLMDesign:
    """Standardized response plus per-predictor design blocks.

    ``blocks[j]`` has shape (n, n_components_j * n_t_basis); ``group_dims``
    records those block widths.
    """

    y: np.ndarray
    y_center: float
    y_scale: float
    t: np.ndarray
    t_basis: BSplineBasis
    blocks: list[np.ndarray]
    group_dims: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_groups(self) -> int:
        return len(self.blocks)


def build_design(fpca_results: list[FPCAResult], t: np.ndarray,
                 t_basis: BSplineBasis, y_raw: np.ndarray) -> VCFLMDesign:
    """Assemble the standardized linear problem from per-predictor FPC scores.

    Raises ValueError on mismatched sample sizes, exogenous values outside the
    basis domain, or a constant response (zero standard deviation).
    """
    t = np.asarray(t, dtype=float)
    y_raw = np.asarray(y_raw, dtype=float)
    if t.ndim != 1 or y_raw.ndim != 1 or t.size != y_raw.size:
        raise ValueError("t and y_raw must be 1D arrays of equal length")
    n = y_raw.size
    for j, res in enumerate(fpca_results):
        if res.scores.shape[0] != n:
            raise ValueError(
                f"predictor {j} has scores for {res.scores.shape[0]} subjects, expected {n}")

    psi = evaluate_basis_many(t_basis, t)

    y_center = float(y_raw.mean())
    y_scale = float(np.sqrt(np.mean((y_raw - y_center) ** 2)))
    if y_scale <= 0:
        raise ValueError("response is constant; cannot standardize to unit variance")
    y = (y_raw - y_center) / y_scale

    blocks = []
    for res in fpca_results:
        scores = res.scores
        # row i = kron(psi_i, scores_i): outer index over t-basis, inner over components
        block = (psi[:, :, None] * scores[:, None, :]).reshape(n, -1)
        blocks.append(block)
    dims = np.array([b.shape[1] for b in blocks])
    return VCFLMDesign(y=y, y_center=y_center, y_scale=y_scale, t=t,
                       t_basis=t_basis, blocks=blocks, group_dims=dims)


def fitted_to_response(design: VCFLMDesign, fitted: np.ndarray) -> np.ndarray:
    """Map standardized-scale fitted values back to the raw response scale."""
    fitted = np.asarray(fitted, dtype=float)
    if fitted.shape != design.y.shape:
        raise ValueError(f"fitted has shape {fitted.shape}, expected {design.y.shape}")
    return fitted * design.y_scale + design.y_center
