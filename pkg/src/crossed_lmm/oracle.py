"""Dense brute-force references for small instances.

Everything here materializes N x N matrices and serves as the independent
check for the streaming estimators: explicit covariances, textbook GLS,
two-pass U-statistics, and exact single-predictor efficiencies.  Ships in
the library behind size guards so the CLI can self-verify on subsamples.

Records are held in row ordering (stably sorted by dense row index).  The
quadratic forms used here are invariant under consistent reordering, so
column-weighted quantities are computed in the same ordering; the explicit
permutation between the two orderings is retained for tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SingularCovarianceError, TooLargeError
from .ingest import IndexedDataset, materialize
from .model import VarianceComponents
from .moments import UStatistics

DENSE_GUARD = 5000
EFFICIENCY_GUARD = 2000


@dataclass(frozen=True)
class DenseDesign:
    """Materialized design in row ordering.

    ``row_groups`` (N x R) and ``col_groups`` (N x C) are one-hot record-to-
    group indicators, so the block covariances are G G'.  ``perm`` maps
    column-ordered vectors to row-ordered ones: v_row = perm @ v_col.
    """

    x: np.ndarray
    y: np.ndarray
    row_idx: np.ndarray
    col_idx: np.ndarray
    row_groups: np.ndarray
    col_groups: np.ndarray
    perm: np.ndarray
    z: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @classmethod
    def from_dataset(cls, dataset: IndexedDataset) -> "DenseDesign":
        return cls.from_arrays(*materialize(dataset, max_records=DENSE_GUARD))

    @classmethod
    def from_arrays(cls, row_idx, col_idx, x, y) -> "DenseDesign":
        n = y.shape[0]
        if n > DENSE_GUARD:
            raise TooLargeError(f"N={n} exceeds the dense guard {DENSE_GUARD}")
        order = np.argsort(row_idx, kind="stable")
        row_idx = np.asarray(row_idx)[order]
        col_idx = np.asarray(col_idx)[order]
        x = np.asarray(x, dtype=float)[order]
        y = np.asarray(y, dtype=float)[order]
        r = int(row_idx.max()) + 1
        c = int(col_idx.max()) + 1
        row_groups = np.zeros((n, r))
        row_groups[np.arange(n), row_idx] = 1.0
        col_groups = np.zeros((n, c))
        col_groups[np.arange(n), col_idx] = 1.0
        col_order = np.argsort(col_idx, kind="stable")
        perm = np.zeros((n, n))
        perm[col_order, np.arange(n)] = 1.0
        z = np.zeros((r, c))
        z[row_idx, col_idx] = 1.0
        return cls(
            x=x, y=y, row_idx=row_idx, col_idx=col_idx,
            row_groups=row_groups, col_groups=col_groups, perm=perm, z=z,
        )


def dense_covariance(design: DenseDesign, vc: VarianceComponents) -> np.ndarray:
    """Full response covariance sE I + sA A_R + sB B_R in row ordering."""
    if design.n > DENSE_GUARD:
        raise TooLargeError(f"N={design.n} exceeds the dense guard {DENSE_GUARD}")
    ga, gb = design.row_groups, design.col_groups
    return (
        vc.sigma2_e * np.eye(design.n)
        + vc.sigma2_a * ga @ ga.T
        + vc.sigma2_b * gb @ gb.T
    )


def single_factor_covariance(design: DenseDesign, axis: str,
                             vc: VarianceComponents) -> np.ndarray:
    """sE I + sA A_R (axis='row') or sE I + sB B_R (axis='col'), row ordering."""
    g = design.row_groups if axis == "row" else design.col_groups
    s = vc.sigma2_a if axis == "row" else vc.sigma2_b
    return vc.sigma2_e * np.eye(design.n) + s * g @ g.T


def dense_gls(x: np.ndarray, y: np.ndarray, v: np.ndarray):
    """Textbook GLS: beta = (X'V^-1X)^-1 X'V^-1 y and cov = (X'V^-1X)^-1."""
    try:
        cf = scipy.linalg.cho_factor(v, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularCovarianceError(str(exc)) from exc
    vix = scipy.linalg.cho_solve(cf, x, check_finite=False)
    viy = scipy.linalg.cho_solve(cf, y, check_finite=False)
    a = x.T @ vix
    beta = np.linalg.solve(a, x.T @ viy)
    cov = np.linalg.inv(a)
    return beta, 0.5 * (cov + cov.T)


def dense_gls_sandwich(design: DenseDesign, axis: str,
                       vc: VarianceComponents) -> np.ndarray:
    """(X'Vw^-1X)^-1 X'Vw^-1 V Vw^-1 X (X'Vw^-1X)^-1 for the axis weighting."""
    x = design.x
    vw = single_factor_covariance(design, axis, vc)
    v = dense_covariance(design, vc)
    viw = np.linalg.solve(vw, x)
    a_inv = np.linalg.inv(x.T @ viw)
    cov = a_inv @ viw.T @ v @ viw @ a_inv
    return 0.5 * (cov + cov.T)


def naive_u_statistics(records, beta: np.ndarray) -> UStatistics:
    """Two-pass textbook U-statistics: explicit group means, then deviations."""
    row_idx, col_idx, x, y = records
    eta = np.asarray(y, dtype=float) - np.asarray(x, dtype=float) @ np.asarray(beta, dtype=float)
    u_a = _within_group_ss(np.asarray(row_idx), eta)
    u_b = _within_group_ss(np.asarray(col_idx), eta)
    u_e = float(np.sum((eta - eta.mean()) ** 2))
    return UStatistics(u_a=u_a, u_b=u_b, u_e=u_e)


def _within_group_ss(idx: np.ndarray, eta: np.ndarray) -> float:
    total = 0.0
    for g in np.unique(idx):
        vals = eta[idx == g]
        total += float(np.sum((vals - vals.mean()) ** 2))
    return total


def exact_efficiency(x: np.ndarray, vc: VarianceComponents, design: DenseDesign):
    """Exact single-predictor efficiencies of the two one-factor weightings.

    eff = (x'Vw^-1 x)^2 / ((x'Vw^-1 V Vw^-1 x)(x'V^-1 x)), evaluated for the
    row weighting and the column weighting; both lie in (0, 1].
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != design.n:
        raise ValueError("x must have one entry per record (single predictor)")
    if design.n > EFFICIENCY_GUARD:
        raise TooLargeError(f"N={design.n} exceeds the efficiency guard {EFFICIENCY_GUARD}")
    v = dense_covariance(design, vc)
    try:
        vi_x = np.linalg.solve(v, x)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(str(exc)) from exc
    denom_full = x @ vi_x
    out = []
    for axis in ("row", "col"):
        vw = single_factor_covariance(design, axis, vc)
        viw_x = np.linalg.solve(vw, x)
        num = (x @ viw_x) ** 2
        out.append(float(num / ((viw_x @ v @ viw_x) * denom_full)))
    return out[0], out[1]
