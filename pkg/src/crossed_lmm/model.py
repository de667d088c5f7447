"""Core domain types: observations, dataset profiles, variance components.

All types are immutable after construction and safe to share across threads.
Counts are kept as exact integers; derived real-valued quantities (eps_r,
eps_c, ...) are computed on demand so no rounding is baked into the profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyDatasetError,
    MissingInterceptError,
    NonFiniteError,
    WidthMismatchError,
)

if TYPE_CHECKING:  # pragma: no cover
    from .gls import GlsMode
    from .inference import Diagnostics


@dataclass(frozen=True)
class Observation:
    """One (row, column, covariates, response) record.

    ``x`` includes the intercept: ``x[0] == 1`` and ``len(x)`` equals the
    dataset width (number of coefficients).
    """

    row_key: str
    col_key: str
    x: np.ndarray
    y: float


def validate_observation(obs: Observation, width: int) -> None:
    """Check one observation against the dataset width.

    Raises ``WidthMismatchError``, ``NonFiniteError`` or
    ``MissingInterceptError``; returns None when the record is well formed.
    """
    x = np.asarray(obs.x, dtype=float)
    if x.ndim != 1 or x.shape[0] != width:
        raise WidthMismatchError(
            f"covariate vector has length {x.shape[0] if x.ndim == 1 else x.shape}, "
            f"expected {width}"
        )
    if not np.isfinite(x).all() or not math.isfinite(float(obs.y)):
        raise NonFiniteError(f"non-finite field in record ({obs.row_key}, {obs.col_key})")
    if x[0] != 1.0:
        raise MissingInterceptError(f"x[0] = {x[0]!r}, expected exactly 1")


@dataclass(frozen=True)
class DatasetProfile:
    """Counts of a crossed observation pattern.

    ``row_counts[i]`` is the number of observations in dense row ``i``
    (every entry is >= 1 by construction), and similarly for columns.
    """

    row_counts: np.ndarray
    col_counts: np.ndarray

    @cached_property
    def n(self) -> int:
        return int(self.row_counts.sum())

    @property
    def r(self) -> int:
        return int(self.row_counts.shape[0])

    @property
    def c(self) -> int:
        return int(self.col_counts.shape[0])

    @cached_property
    def max_row(self) -> int:
        return int(self.row_counts.max())

    @cached_property
    def max_col(self) -> int:
        return int(self.col_counts.max())

    @cached_property
    def sum_sq_row(self) -> int:
        # exact integer arithmetic; converted to float only at use sites
        return int(np.sum(self.row_counts.astype(object) ** 2))

    @cached_property
    def sum_sq_col(self) -> int:
        return int(np.sum(self.col_counts.astype(object) ** 2))

    @property
    def eps_r(self) -> float:
        return self.max_row / self.n

    @property
    def eps_c(self) -> float:
        return self.max_col / self.n

    def summary_dict(self) -> dict:
        return {
            "n": self.n,
            "r": self.r,
            "c": self.c,
            "max_row": self.max_row,
            "max_col": self.max_col,
            "sum_sq_row": self.sum_sq_row,
            "sum_sq_col": self.sum_sq_col,
            "eps_r": self.eps_r,
            "eps_c": self.eps_c,
        }


def build_profile(
    row_counts: Mapping | Sequence | np.ndarray,
    col_counts: Mapping | Sequence | np.ndarray,
) -> DatasetProfile:
    """Build a profile from per-row / per-column observation counts.

    Accepts mappings (index -> count) or sequences in dense-index order.
    Raises ``EmptyDatasetError`` when there are no observations and
    ``ValueError`` when the row and column counts disagree on N or any
    count is < 1.
    """
    rc = _as_count_array(row_counts)
    cc = _as_count_array(col_counts)
    if rc.size == 0 or cc.size == 0:
        raise EmptyDatasetError("no observations")
    if (rc < 1).any() or (cc < 1).any():
        raise ValueError("all group counts must be >= 1")
    if int(rc.sum()) != int(cc.sum()):
        raise ValueError(
            f"row counts sum to {int(rc.sum())} but column counts sum to {int(cc.sum())}"
        )
    rc.setflags(write=False)
    cc.setflags(write=False)
    return DatasetProfile(row_counts=rc, col_counts=cc)


def _as_count_array(counts) -> np.ndarray:
    if isinstance(counts, Mapping):
        items = sorted(counts.items())
        return np.asarray([v for _, v in items], dtype=np.int64)
    return np.asarray(counts, dtype=np.int64).reshape(-1)


@dataclass(frozen=True)
class VarianceComponents:
    """Raw moment solutions and their clamped-to-feasible counterparts.

    Raw values may be negative (moment estimators can leave the parameter
    space); the clamped values satisfy sigma2_a >= 0, sigma2_b >= 0 and
    sigma2_e >= e_floor > 0 so downstream GLS weighting is always defined.
    """

    sigma2_a_raw: float
    sigma2_b_raw: float
    sigma2_e_raw: float
    sigma2_a: float
    sigma2_b: float
    sigma2_e: float
    e_floor: float

    @classmethod
    def from_raw(cls, raw_a: float, raw_b: float, raw_e: float, e_floor: float):
        return cls(
            sigma2_a_raw=float(raw_a),
            sigma2_b_raw=float(raw_b),
            sigma2_e_raw=float(raw_e),
            sigma2_a=max(float(raw_a), 0.0),
            sigma2_b=max(float(raw_b), 0.0),
            sigma2_e=max(float(raw_e), float(e_floor)),
            e_floor=float(e_floor),
        )

    @property
    def clamped(self) -> tuple[bool, bool, bool]:
        return (
            self.sigma2_a != self.sigma2_a_raw,
            self.sigma2_b != self.sigma2_b_raw,
            self.sigma2_e != self.sigma2_e_raw,
        )

    def to_dict(self) -> dict:
        return {
            "a": self.sigma2_a,
            "b": self.sigma2_b,
            "e": self.sigma2_e,
            "raw_a": self.sigma2_a_raw,
            "raw_b": self.sigma2_b_raw,
            "raw_e": self.sigma2_e_raw,
        }


@dataclass(frozen=True)
class FitResult:
    """Output of the alternating fit.

    ``vc`` holds the final (second-round) variance components; the
    first-round components used for GLS mode selection are kept in
    ``vc_step2``.  ``mode`` is None when the moment system was singular and
    the fit degraded to plain OLS.
    """

    beta: np.ndarray
    cov_beta: np.ndarray
    se_beta: np.ndarray
    vc: VarianceComponents
    mode: "GlsMode | None"
    diagnostics: "Diagnostics | None"
    profile: DatasetProfile
    vc_step2: VarianceComponents
    ols_beta: np.ndarray
    ols_naive_se: np.ndarray
    ols_sandwich_se: np.ndarray
    warnings: tuple[str, ...]
    timings: dict

    @property
    def vc_step4(self) -> VarianceComponents:
        return self.vc

    def to_json_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "se": self.se_beta.tolist(),
            "cov_beta": self.cov_beta.tolist(),
            "ols_beta": self.ols_beta.tolist(),
            "ols_naive_se": self.ols_naive_se.tolist(),
            "ols_sandwich_se": self.ols_sandwich_se.tolist(),
            "sigma2": self.vc.to_dict(),
            "clamped": dict(zip("abe", self.vc.clamped)),
            "steps": {
                "vc_step2": self.vc_step2.to_dict(),
                "vc_step4": self.vc.to_dict(),
            },
            "mode": self.mode.value if self.mode is not None else "ols",
            "diagnostics": self.diagnostics.to_dict() if self.diagnostics else None,
            "profile": self.profile.summary_dict(),
            "warnings": list(self.warnings),
            "timings": self.timings,
        }
