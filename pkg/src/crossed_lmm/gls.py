"""OLS and single-factor GLS coefficient estimation in one pass each.

The GLS estimators weight by the inverse of a diagonal-plus-block covariance
(noise plus one random effect).  The Woodbury identity collapses that inverse
onto per-group totals:

    X' Va^-1 X = X'X / sE - (sA/sE) * sum_i  X_i. X_i.' / (sE + sA * N_i.)
    X' Va^-1 y = X'y / sE - (sA/sE) * sum_i  X_i. Y_i.  / (sE + sA * N_i.)

with X_i., Y_i. the per-row covariate/response totals, so a single pass plus
O(R p^2) assembly suffices.  The column-weighted mirror swaps the grouping
and the (sA, sB) roles.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from ._accum import KahanSum, Reduction, run_pass
from .errors import SingularDesignError
from .model import DatasetProfile, VarianceComponents

PIVOT_RTOL = 1e-12


class GlsMode(str, Enum):
    ROW = "row"
    COL = "col"


# --------------------------------------------------------------------------
# SPD solves with a relative pivot floor
# --------------------------------------------------------------------------


def spd_factor(a: np.ndarray):
    """Cholesky-factor a symmetric positive definite matrix.

    Raises ``SingularDesignError`` when factorization fails or any pivot is
    at most PIVOT_RTOL times the largest diagonal entry.
    """
    try:
        cf = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularDesignError(f"normal equations not positive definite: {exc}") from exc
    pivots = np.diag(cf[0]) ** 2
    if pivots.min() <= PIVOT_RTOL * max(float(np.diag(a).max()), 0.0):
        raise SingularDesignError("normal-equation pivot below the relative floor")
    return cf


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return scipy.linalg.cho_solve(spd_factor(a), b, check_finite=False)


def spd_inverse(a: np.ndarray) -> np.ndarray:
    inv = scipy.linalg.cho_solve(spd_factor(a), np.eye(a.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


# --------------------------------------------------------------------------
# Accumulation
# --------------------------------------------------------------------------


class _NormalEqState:
    """X'X, X'y plus per-group covariate/response totals for one grouping."""

    def __init__(self, width: int, groups: int, axis: GlsMode):
        self.axis = axis
        self.xtx = KahanSum((width, width))
        self.xty = KahanSum(width)
        self.x_tot = np.zeros((groups, width))
        self.y_tot = np.zeros(groups)

    def update(self, chunk) -> None:
        x, y = chunk.x, chunk.y
        idx = chunk.row_idx if self.axis == GlsMode.ROW else chunk.col_idx
        self.xtx.add(x.T @ x)
        self.xty.add(x.T @ y)
        g = self.x_tot.shape[0]
        for d in range(x.shape[1]):
            self.x_tot[:, d] += np.bincount(idx, weights=x[:, d], minlength=g)
        self.y_tot += np.bincount(idx, weights=y, minlength=g)

    def merge(self, other: "_NormalEqState") -> None:
        self.xtx.merge(other.xtx)
        self.xty.merge(other.xty)
        self.x_tot += other.x_tot
        self.y_tot += other.y_tot


@dataclass(frozen=True)
class NormalEquations:
    """Weighted normal equations plus the per-group aggregates they used.

    The retained totals (group counts, X_i., Y_i.) let the covariance
    estimator run with only one further pass.
    """

    a: np.ndarray
    b: np.ndarray
    xtx: np.ndarray
    xty: np.ndarray
    axis: GlsMode
    group_counts: np.ndarray
    x_totals: np.ndarray
    y_totals: np.ndarray
    vc: VarianceComponents


def ols_fit(dataset, reduction: Reduction | None = None):
    """Ordinary least squares; returns (beta, X'X) for reuse downstream."""
    state = run_pass(
        dataset,
        lambda: _NormalEqState(dataset.width, dataset.profile.r, GlsMode.ROW),
        reduction,
    )
    xtx = 0.5 * (state.xtx.total + state.xtx.total.T)
    beta = spd_solve(xtx, state.xty.total)
    return beta, xtx


def _gls_fit(dataset, vc: VarianceComponents, axis: GlsMode,
             reduction: Reduction | None = None):
    if not vc.sigma2_e > 0:
        raise ValueError("GLS weighting needs sigma2_e > 0")
    prof = dataset.profile
    if axis == GlsMode.ROW:
        groups, counts, s_g = prof.r, prof.row_counts, vc.sigma2_a
    else:
        groups, counts, s_g = prof.c, prof.col_counts, vc.sigma2_b
    s_e = vc.sigma2_e
    state = run_pass(
        dataset, lambda: _NormalEqState(dataset.width, groups, axis), reduction
    )
    xtx = 0.5 * (state.xtx.total + state.xtx.total.T)
    xty = state.xty.total
    w = 1.0 / (s_e + s_g * counts.astype(float))
    a = xtx / s_e - (s_g / s_e) * (state.x_tot.T * w) @ state.x_tot
    b = xty / s_e - (s_g / s_e) * state.x_tot.T @ (w * state.y_tot)
    a = 0.5 * (a + a.T)
    beta = spd_solve(a, b)
    neq = NormalEquations(
        a=a,
        b=b,
        xtx=xtx,
        xty=xty,
        axis=axis,
        group_counts=counts,
        x_totals=state.x_tot,
        y_totals=state.y_tot,
        vc=vc,
    )
    return beta, neq


def reweight_normal_equations(neq: NormalEquations, vc: VarianceComponents) -> NormalEquations:
    """Re-assemble the weighted normal equations with new variance components.

    Uses only the retained aggregates, so no pass over the data is needed;
    O(G p^2) work for G groups.
    """
    if not vc.sigma2_e > 0:
        raise ValueError("GLS weighting needs sigma2_e > 0")
    s_g = vc.sigma2_a if neq.axis == GlsMode.ROW else vc.sigma2_b
    s_e = vc.sigma2_e
    w = 1.0 / (s_e + s_g * neq.group_counts.astype(float))
    a = neq.xtx / s_e - (s_g / s_e) * (neq.x_totals.T * w) @ neq.x_totals
    b = neq.xty / s_e - (s_g / s_e) * neq.x_totals.T @ (w * neq.y_totals)
    return NormalEquations(
        a=0.5 * (a + a.T),
        b=b,
        xtx=neq.xtx,
        xty=neq.xty,
        axis=neq.axis,
        group_counts=neq.group_counts,
        x_totals=neq.x_totals,
        y_totals=neq.y_totals,
        vc=vc,
    )


def rls_fit(dataset, vc: VarianceComponents, reduction: Reduction | None = None):
    """GLS accounting for intra-row correlation; O(Np^2) time, O(Rp) space."""
    return _gls_fit(dataset, vc, GlsMode.ROW, reduction)


def cls_fit(dataset, vc: VarianceComponents, reduction: Reduction | None = None):
    """GLS accounting for intra-column correlation; O(Np^2) time, O(Cp) space."""
    return _gls_fit(dataset, vc, GlsMode.COL, reduction)


# --------------------------------------------------------------------------
# Mode selection and worst-case efficiency
# --------------------------------------------------------------------------


def select_gls_mode(vc: VarianceComponents, profile: DatasetProfile) -> GlsMode:
    """Row weighting iff sigma2_a * max_row >= sigma2_b * max_col (clamped values)."""
    if vc.sigma2_a * profile.max_row >= vc.sigma2_b * profile.max_col:
        return GlsMode.ROW
    return GlsMode.COL


def efficiency_lower_bounds(vc: VarianceComponents, profile: DatasetProfile):
    """Worst-case efficiency of the row- and column-weighted estimators.

    Both bounds lie in (0, 1]; the row bound degrades with the largest
    column (the correlation the row weighting ignores) and vice versa.
    """
    s_e = vc.sigma2_e
    if not s_e > 0:
        raise ValueError("bounds need sigma2_e > 0")
    tb = vc.sigma2_b * profile.max_col
    ta = vc.sigma2_a * profile.max_row
    eff_rls_lb = 4.0 * s_e * (s_e + tb) / (2.0 * s_e + tb) ** 2
    eff_cls_lb = 4.0 * s_e * (s_e + ta) / (2.0 * s_e + ta) ** 2
    return eff_rls_lb, eff_cls_lb
