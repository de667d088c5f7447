"""Coefficient covariance estimation and design diagnostics.

The single-factor GLS estimator ignores one random effect, so its covariance
is the weighted-information inverse plus a correction for the ignored
effect.  For row weighting:

    cov = A^-1 + A^-1 W A^-1,     A = X' Va^-1 X,
    W   = (sB / sE^2) * sum_j g_j g_j',
    g_j = X_.j - sA * sum_{i in col j} X_i. / (sE + sA N_i.)

with X_i., X_.j per-group totals (not means).  The mirrored form swaps rows
with columns and sA with sB.  The OLS sandwich uses the full two-factor
covariance as the meat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accum import Reduction, run_pass
from .gls import GlsMode, NormalEquations, efficiency_lower_bounds, spd_inverse
from .model import DatasetProfile, VarianceComponents


@dataclass(frozen=True)
class Diagnostics:
    """Plug-in scale/CLT diagnostics, computed with clamped components.

    Entries are reported raw; the asymptotic conditions behind them are
    divergence requirements, so no pass/fail judgment is attached.
    """

    upsilon_hat: float
    eps_r: float
    eps_c: float
    eff_columns_stat: float
    c_j_concentration: float
    c_ij_concentration: float
    info_rowmeans_min_eig: float
    info_centered_min_eig: float
    info_colshrunk_min_eig: float
    eff_rls_lb: float
    eff_cls_lb: float

    def to_dict(self) -> dict:
        return {
            "upsilon_hat": self.upsilon_hat,
            "eps_r": self.eps_r,
            "eps_c": self.eps_c,
            "eff_columns_stat": self.eff_columns_stat,
            "c_j_concentration": self.c_j_concentration,
            "c_ij_concentration": self.c_ij_concentration,
            "info_rowmeans_min_eig": self.info_rowmeans_min_eig,
            "info_centered_min_eig": self.info_centered_min_eig,
            "info_colshrunk_min_eig": self.info_colshrunk_min_eig,
            "eff_rls_lb": self.eff_rls_lb,
            "eff_cls_lb": self.eff_cls_lb,
        }


# --------------------------------------------------------------------------
# Covariance of the GLS estimators
# --------------------------------------------------------------------------


class _CrossTotalsState:
    """Per-group totals of x and of a per-other-group lookup table."""

    def __init__(self, groups: int, width: int, axis: GlsMode, table: np.ndarray):
        self.axis = axis  # grouping being accumulated
        self.table = table  # (other_groups, width), indexed by the other axis
        self.x_tot = np.zeros((groups, width))
        self.t_tot = np.zeros((groups, width))

    def update(self, chunk) -> None:
        if self.axis == GlsMode.COL:
            idx, other = chunk.col_idx, chunk.row_idx
        else:
            idx, other = chunk.row_idx, chunk.col_idx
        g = self.x_tot.shape[0]
        looked = self.table[other]
        for d in range(chunk.x.shape[1]):
            self.x_tot[:, d] += np.bincount(idx, weights=chunk.x[:, d], minlength=g)
            self.t_tot[:, d] += np.bincount(idx, weights=looked[:, d], minlength=g)

    def merge(self, other: "_CrossTotalsState") -> None:
        self.x_tot += other.x_tot
        self.t_tot += other.t_tot


def _var_beta_gls(dataset, vc: VarianceComponents, neq: NormalEquations,
                  reduction: Reduction | None = None):
    """Returns (cov, cross-axis x totals); the totals let the caller reuse
    this pass for diagnostics that need the other grouping."""
    if not np.allclose(
        [vc.sigma2_a, vc.sigma2_b, vc.sigma2_e],
        [neq.vc.sigma2_a, neq.vc.sigma2_b, neq.vc.sigma2_e],
    ):
        raise ValueError("normal equations were built with different variance components")
    prof = dataset.profile
    s_e = vc.sigma2_e
    if neq.axis == GlsMode.ROW:
        s_kept, s_other = vc.sigma2_a, vc.sigma2_b
        other_groups = prof.c
    else:
        s_kept, s_other = vc.sigma2_b, vc.sigma2_a
        other_groups = prof.r
    # shrunken per-kept-group totals, looked up by observation
    w = 1.0 / (s_e + s_kept * neq.group_counts.astype(float))
    table = (s_kept * w)[:, None] * neq.x_totals
    other_axis = GlsMode.COL if neq.axis == GlsMode.ROW else GlsMode.ROW
    state = run_pass(
        dataset,
        lambda: _CrossTotalsState(other_groups, dataset.width, other_axis, table),
        reduction,
    )
    g = state.x_tot - state.t_tot
    meat = (s_other / s_e**2) * (g.T @ g)
    a_inv = spd_inverse(neq.a)
    cov = a_inv + a_inv @ meat @ a_inv
    return 0.5 * (cov + cov.T), state.x_tot


def var_beta_rls(dataset, vc: VarianceComponents, neq: NormalEquations,
                 reduction: Reduction | None = None) -> np.ndarray:
    """Covariance of the row-weighted GLS estimate; one extra pass, O(Cp) space."""
    if neq.axis != GlsMode.ROW:
        raise ValueError("normal equations are not row-weighted")
    return _var_beta_gls(dataset, vc, neq, reduction)[0]


def var_beta_cls(dataset, vc: VarianceComponents, neq: NormalEquations,
                 reduction: Reduction | None = None) -> np.ndarray:
    """Covariance of the column-weighted GLS estimate; one extra pass, O(Rp) space."""
    if neq.axis != GlsMode.COL:
        raise ValueError("normal equations are not column-weighted")
    return _var_beta_gls(dataset, vc, neq, reduction)[0]


class _DualTotalsState:
    def __init__(self, r: int, c: int, width: int):
        self.row_x = np.zeros((r, width))
        self.col_x = np.zeros((c, width))

    def update(self, chunk) -> None:
        r, c = self.row_x.shape[0], self.col_x.shape[0]
        for d in range(chunk.x.shape[1]):
            self.row_x[:, d] += np.bincount(chunk.row_idx, weights=chunk.x[:, d], minlength=r)
            self.col_x[:, d] += np.bincount(chunk.col_idx, weights=chunk.x[:, d], minlength=c)

    def merge(self, other: "_DualTotalsState") -> None:
        self.row_x += other.row_x
        self.col_x += other.col_x


def ols_sandwich_from_totals(xtx: np.ndarray, row_x_totals: np.ndarray,
                             col_x_totals: np.ndarray,
                             vc: VarianceComponents) -> np.ndarray:
    """Assemble the OLS sandwich from retained aggregates (no pass needed)."""
    meat = (
        vc.sigma2_e * xtx
        + vc.sigma2_a * row_x_totals.T @ row_x_totals
        + vc.sigma2_b * col_x_totals.T @ col_x_totals
    )
    inv = spd_inverse(xtx)
    cov = inv @ meat @ inv
    return 0.5 * (cov + cov.T)


def var_beta_ols_sandwich(dataset, vc: VarianceComponents, xtx: np.ndarray,
                          reduction: Reduction | None = None) -> np.ndarray:
    """Sandwich covariance of OLS under both random effects.

    meat = sE X'X + sA sum_i X_i. X_i.' + sB sum_j X_.j X_.j'
    cov  = (X'X)^-1 meat (X'X)^-1

    One pass accumulates the row and column covariate totals.
    """
    prof = dataset.profile
    state = run_pass(
        dataset, lambda: _DualTotalsState(prof.r, prof.c, dataset.width), reduction
    )
    return ols_sandwich_from_totals(xtx, state.row_x, state.col_x, vc)


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------


def upsilon_diagnostic(vc: VarianceComponents, profile: DatasetProfile) -> float:
    """Plug-in variance of the grand mean; the scale of the moment bias."""
    n = profile.n
    return (
        vc.sigma2_a * profile.sum_sq_row / n**2
        + vc.sigma2_b * profile.sum_sq_col / n**2
        + vc.sigma2_e / n
    )


class _ColDiagState:
    """Per-column aggregates for the CLT diagnostics."""

    def __init__(self, c: int, width: int, shrunk_rowmeans: np.ndarray,
                 c_row: np.ndarray, inv_counts: np.ndarray):
        self.shrunk = shrunk_rowmeans  # (R, width): w_i * xbar_i
        self.c_row = c_row  # (R,)
        self.inv_counts = inv_counts  # (R,): 1 / N_i.
        self.col_x = np.zeros((c, width))
        self.col_shrunk = np.zeros((c, width))
        self.c_j = np.zeros(c)
        self.invrow_j = np.zeros(c)

    def update(self, chunk) -> None:
        c = self.col_x.shape[0]
        looked = self.shrunk[chunk.row_idx]
        for d in range(chunk.x.shape[1]):
            self.col_x[:, d] += np.bincount(chunk.col_idx, weights=chunk.x[:, d], minlength=c)
            self.col_shrunk[:, d] += np.bincount(chunk.col_idx, weights=looked[:, d], minlength=c)
        self.c_j += np.bincount(chunk.col_idx, weights=self.c_row[chunk.row_idx], minlength=c)
        self.invrow_j += np.bincount(
            chunk.col_idx, weights=self.inv_counts[chunk.row_idx], minlength=c
        )

    def merge(self, other: "_ColDiagState") -> None:
        self.col_x += other.col_x
        self.col_shrunk += other.col_shrunk
        self.c_j += other.c_j
        self.invrow_j += other.invrow_j


def _min_eig(mat: np.ndarray) -> float:
    if mat.size == 0:  # intercept-only designs have an empty non-intercept block
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])


def clt_diagnostics(
    dataset,
    vc: VarianceComponents,
    row_totals: np.ndarray | None = None,
    xtx: np.ndarray | None = None,
    reduction: Reduction | None = None,
) -> Diagnostics:
    """Design diagnostics behind the normal-approximation conditions.

    Reuses per-row covariate totals and X'X when the caller retained them;
    otherwise one extra row pass computes them, followed by the column pass.
    """
    if not vc.sigma2_e > 0:
        raise ValueError("diagnostics need sigma2_e > 0")
    prof = dataset.profile
    width = dataset.width
    if row_totals is None or xtx is None:
        from .gls import _NormalEqState

        state = run_pass(
            dataset, lambda: _NormalEqState(width, prof.r, GlsMode.ROW), reduction
        )
        row_totals = state.x_tot
        xtx = 0.5 * (state.xtx.total + state.xtx.total.T)

    counts = prof.row_counts.astype(float)
    xbar_rows = row_totals / counts[:, None]
    s_a, s_e = vc.sigma2_a, vc.sigma2_e
    denom = s_e + s_a * counts
    w_shrink = s_a * counts / denom  # sA / (sA + sE / N_i.)
    c_row = s_e / denom
    col_state = run_pass(
        dataset,
        lambda: _ColDiagState(
            prof.c, width, w_shrink[:, None] * xbar_rows, c_row, 1.0 / counts
        ),
        reduction,
    )

    col_counts = prof.col_counts.astype(float)
    xbar_cols = col_state.col_x / col_counts[:, None]
    xtilde_cols = col_state.col_shrunk / col_counts[:, None]
    nj2 = col_counts**2
    diff = xbar_cols - xtilde_cols
    k = (nj2 @ diff) / nj2.sum()
    centered = diff - k
    colshrunk = (centered.T * nj2) @ centered / nj2.max()

    info_rowmeans = xbar_rows.T @ xbar_rows
    info_centered = xtx - (row_totals.T / counts) @ row_totals

    c_j = col_state.c_j
    c_ij_sq_total = float(np.sum(counts * c_row**2))
    eff_columns = float(np.sum(col_state.invrow_j**2)) / prof.r**2

    return Diagnostics(
        upsilon_hat=upsilon_diagnostic(vc, prof),
        eps_r=prof.eps_r,
        eps_c=prof.eps_c,
        eff_columns_stat=eff_columns,
        c_j_concentration=float(c_j.max() ** 2 / np.sum(c_j**2)),
        c_ij_concentration=float(c_row.max() ** 2 / c_ij_sq_total),
        info_rowmeans_min_eig=_min_eig(info_rowmeans),
        info_centered_min_eig=_min_eig(info_centered[1:, 1:]),
        info_colshrunk_min_eig=_min_eig(colshrunk[1:, 1:]),
        eff_rls_lb=efficiency_lower_bounds(vc, prof)[0],
        eff_cls_lb=efficiency_lower_bounds(vc, prof)[1],
    )
