"""Residual U-statistics and the 3x3 method-of-moments system.

One streaming pass accumulates per-row, per-column and global first/second
moments of the residuals eta = y - x'beta; the three U-statistics are the
within-row, within-column and grand-centered sums of squares.  Solving the
count-matrix system for the expectations of those statistics yields the
variance components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accum import KahanSum, Reduction, run_pass
from .errors import NonFiniteError, SingularMomentSystemError
from .model import DatasetProfile, VarianceComponents

DET_RTOL = 1e-12


@dataclass(frozen=True)
class UStatistics:
    """Within-row, within-column and grand-centered residual sums of squares."""

    u_a: float
    u_b: float
    u_e: float

    def __post_init__(self):
        vals = (self.u_a, self.u_b, self.u_e)
        if not all(np.isfinite(v) for v in vals):
            raise NonFiniteError(f"non-finite U-statistics {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.u_a, self.u_b, self.u_e], dtype=float)


@dataclass(frozen=True)
class ResidualMoments:
    """Group and global moments of residuals from one pass.

    ``total_sumsq`` doubles as the (uncentered) residual sum of squares,
    which the pipeline reuses for the naive OLS error variance.
    """

    row_sum: np.ndarray
    row_sumsq: np.ndarray
    col_sum: np.ndarray
    col_sumsq: np.ndarray
    total_sum: float
    total_sumsq: float
    n: int


class _ResidualState:
    def __init__(self, beta: np.ndarray, r: int, c: int):
        self.beta = beta
        self.row_sum = np.zeros(r)
        self.row_sumsq = np.zeros(r)
        self.col_sum = np.zeros(c)
        self.col_sumsq = np.zeros(c)
        self.total = KahanSum(2)  # (sum eta, sum eta^2)

    def update(self, chunk) -> None:
        eta = chunk.y - chunk.x @ self.beta
        eta2 = eta * eta
        r, c = self.row_sum.shape[0], self.col_sum.shape[0]
        self.row_sum += np.bincount(chunk.row_idx, weights=eta, minlength=r)
        self.row_sumsq += np.bincount(chunk.row_idx, weights=eta2, minlength=r)
        self.col_sum += np.bincount(chunk.col_idx, weights=eta, minlength=c)
        self.col_sumsq += np.bincount(chunk.col_idx, weights=eta2, minlength=c)
        self.total.add(np.array([eta.sum(), eta2.sum()]))

    def merge(self, other: "_ResidualState") -> None:
        self.row_sum += other.row_sum
        self.row_sumsq += other.row_sumsq
        self.col_sum += other.col_sum
        self.col_sumsq += other.col_sumsq
        self.total.merge(other.total)


def residual_moments(
    dataset, beta: np.ndarray, reduction: Reduction | None = None
) -> ResidualMoments:
    """One pass of grouped residual moments; O(Np) time, O(R+C) space."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dataset.width,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({dataset.width},)")
    prof = dataset.profile
    state = run_pass(
        dataset, lambda: _ResidualState(beta, prof.r, prof.c), reduction
    )
    mom = ResidualMoments(
        row_sum=state.row_sum,
        row_sumsq=state.row_sumsq,
        col_sum=state.col_sum,
        col_sumsq=state.col_sumsq,
        total_sum=float(state.total.total[0]),
        total_sumsq=float(state.total.total[1]),
        n=prof.n,
    )
    if not (
        np.isfinite(mom.row_sumsq).all()
        and np.isfinite(mom.col_sumsq).all()
        and np.isfinite(mom.total_sumsq)
    ):
        raise NonFiniteError("residual accumulators overflowed")
    return mom


def u_statistics_from_moments(mom: ResidualMoments, profile: DatasetProfile) -> UStatistics:
    row_counts = profile.row_counts.astype(float)
    col_counts = profile.col_counts.astype(float)
    u_a = float(np.sum(mom.row_sumsq - mom.row_sum**2 / row_counts))
    u_b = float(np.sum(mom.col_sumsq - mom.col_sum**2 / col_counts))
    u_e = float(mom.total_sumsq - mom.total_sum**2 / profile.n)
    # each statistic is a sum of squares, so tiny negatives are roundoff
    fuzz = 1e-9 * (abs(mom.total_sumsq) + 1.0)
    return UStatistics(u_a=_snap(u_a, fuzz), u_b=_snap(u_b, fuzz), u_e=_snap(u_e, fuzz))


def _snap(v: float, fuzz: float) -> float:
    return 0.0 if -fuzz < v < 0.0 else v


def compute_u_statistics(
    dataset, beta: np.ndarray, reduction: Reduction | None = None
) -> UStatistics:
    """Streaming U-statistics of the residuals y - x'beta."""
    return u_statistics_from_moments(
        residual_moments(dataset, beta, reduction), dataset.profile
    )


@dataclass(frozen=True)
class MomentMatrix:
    """Count matrix of the moment system, plus the sample size behind it."""

    m: np.ndarray
    n: int

    def __post_init__(self):
        if self.m.shape != (3, 3):
            raise ValueError("moment matrix must be 3x3")


def build_moment_matrix(profile: DatasetProfile) -> MomentMatrix:
    """Assemble the 3x3 count matrix, integer-exact before float conversion."""
    n, r, c = profile.n, profile.r, profile.c
    ssr, ssc = profile.sum_sq_row, profile.sum_sq_col
    m = np.array(
        [
            [0, n - r, n - r],
            [n - c, 0, n - c],
            [n * n - ssr, n * n - ssc, n * n - n],
        ],
        dtype=float,
    )
    return MomentMatrix(m=m, n=n)


def solve_moment_system(mm: MomentMatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve the raw 3x3 linear system with a relative determinant guard."""
    m = mm.m
    det = np.linalg.det(m)
    norm = np.linalg.norm(m)
    if abs(det) <= DET_RTOL * norm**3:
        raise SingularMomentSystemError(
            "moment system is singular; the observation pattern looks IID-like "
            "or nested, so the variance components are not identifiable"
        )
    return np.linalg.solve(m, np.asarray(rhs, dtype=float))


def default_e_floor(u: UStatistics, n: int) -> float:
    return 1e-12 * (u.u_e / max(n - 1, 1) + 1.0)


def solve_variance_components(
    mm: MomentMatrix, u: UStatistics, e_floor: float | None = None
) -> VarianceComponents:
    """Variance components from the moment system.

    The third row of the count matrix (N^2 - sum N_i.^2, ..., N^2 - N) is the
    expectation of N times the grand-centered sum of squares, so the third
    right-hand side entry is N * u_e; the first two rows match the within-row
    and within-column sums of squares directly.
    """
    rhs = np.array([u.u_a, u.u_b, mm.n * u.u_e])
    raw = solve_moment_system(mm, rhs)
    floor = default_e_floor(u, mm.n) if e_floor is None else float(e_floor)
    return VarianceComponents.from_raw(raw[0], raw[1], raw[2], floor)
