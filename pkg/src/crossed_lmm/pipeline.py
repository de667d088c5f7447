"""End-to-end alternating fit.

Sequence: (1) OLS; (2) variance components from OLS residuals; (3) row- or
column-weighted GLS, chosen by the worst-case efficiency rule on the step-2
components; (4) variance components re-estimated from the GLS residuals;
(5) coefficient covariance with the step-4 components.  Exactly two
alternations; no iteration to convergence.

At most six passes over the data: the covariance pass also yields the
cross-axis covariate totals that the diagnostics pass needs, and the
normal equations for step 5 are re-weighted from retained aggregates
rather than re-accumulated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._accum import Reduction
from .errors import SingularMomentSystemError
from .gls import (
    GlsMode,
    _gls_fit,
    ols_fit,
    reweight_normal_equations,
    select_gls_mode,
    spd_inverse,
)
from .inference import (
    _var_beta_gls,
    clt_diagnostics,
    ols_sandwich_from_totals,
    var_beta_ols_sandwich,
)
from .ingest import DedupPolicy
from .model import FitResult, VarianceComponents
from .moments import (
    build_moment_matrix,
    residual_moments,
    solve_variance_components,
    u_statistics_from_moments,
)

FIT_MODES = ("auto", "row", "col", "both-compare")


@dataclass(frozen=True)
class FitOptions:
    mode: str = "auto"
    dedup: DedupPolicy = DedupPolicy.ASSUME_UNIQUE
    emit_diagnostics: bool = True
    deterministic_reduction: bool = False
    shards: int = 1
    chunk_records: int | None = None
    compare_coef: int = 0  # coefficient judged in both-compare mode

    def __post_init__(self):
        if self.mode not in FIT_MODES:
            raise ValueError(f"mode must be one of {FIT_MODES}")
        if self.shards < 1:
            raise ValueError("shards must be >= 1")


def fit(dataset, opts: FitOptions | None = None) -> FitResult:
    opts = opts or FitOptions()
    red = Reduction(opts.shards, opts.deterministic_reduction, opts.chunk_records)
    prof = dataset.profile
    width = dataset.width
    warnings = list(dataset.warnings)
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    beta_ols, xtx = ols_fit(dataset, red)
    timings["ols"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    mom2 = residual_moments(dataset, beta_ols, red)
    u2 = u_statistics_from_moments(mom2, prof)
    mm = build_moment_matrix(prof)
    timings["moments_step2"] = time.perf_counter() - t0

    # classical OLS standard errors, reusing the residual pass for the RSS
    rss = mom2.total_sumsq
    sigma2_naive = rss / max(prof.n - width, 1)
    xtx_inv = spd_inverse(xtx)
    ols_naive_se = np.sqrt(np.clip(np.diag(xtx_inv), 0.0, None) * sigma2_naive)

    try:
        vc2 = solve_variance_components(mm, u2)
        degraded = False
    except SingularMomentSystemError as exc:
        degraded = True
        warnings.append(f"moment system singular ({exc}); degraded to OLS")

    if degraded:
        # no identifiable components: classical OLS with an IID error variance
        vc2 = vc4 = VarianceComponents.from_raw(
            0.0, 0.0, sigma2_naive, 1e-12 * (sigma2_naive + 1.0)
        )
        beta = beta_ols
        mode = None
        t0 = time.perf_counter()
        cov = var_beta_ols_sandwich(dataset, vc4, xtx, red)
        sandwich = cov
        timings["covariance"] = time.perf_counter() - t0
        row_totals = None
    else:
        if opts.mode == "auto":
            axes = [select_gls_mode(vc2, prof)]
        elif opts.mode == "row":
            axes = [GlsMode.ROW]
        elif opts.mode == "col":
            axes = [GlsMode.COL]
        else:
            axes = [GlsMode.ROW, GlsMode.COL]

        candidates = []
        for axis in axes:
            t0 = time.perf_counter()
            beta_c, neq_c = _gls_fit(dataset, vc2, axis, red)
            timings[f"gls_{axis.value}"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            mom4 = residual_moments(dataset, beta_c, red)
            vc4_c = solve_variance_components(
                mm, u_statistics_from_moments(mom4, prof)
            )
            timings[f"moments_step4_{axis.value}"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            neq4 = reweight_normal_equations(neq_c, vc4_c)
            cov_c, cross_totals = _var_beta_gls(dataset, vc4_c, neq4, red)
            timings[f"covariance_{axis.value}"] = time.perf_counter() - t0
            candidates.append((axis, beta_c, vc4_c, neq4, cov_c, cross_totals))

        if len(candidates) == 2:
            ses = [float(np.sqrt(c[4][opts.compare_coef, opts.compare_coef]))
                   for c in candidates]
            pick = 0 if ses[0] <= ses[1] else 1
            warnings.append(
                f"both-compare: row se={ses[0]:.6g}, col se={ses[1]:.6g} "
                f"for coefficient {opts.compare_coef}; picked "
                f"{candidates[pick][0].value}"
            )
        else:
            pick = 0
        mode, beta, vc4, neq4, cov, cross_totals = candidates[pick]
        if mode == GlsMode.ROW:
            row_totals, col_totals = neq4.x_totals, cross_totals
        else:
            row_totals, col_totals = cross_totals, neq4.x_totals

        # both groupings' totals are already in hand, so no extra pass
        t0 = time.perf_counter()
        sandwich = ols_sandwich_from_totals(xtx, row_totals, col_totals, vc4)
        timings["ols_sandwich"] = time.perf_counter() - t0

    ols_sandwich_se = np.sqrt(np.clip(np.diag(sandwich), 0.0, None))

    diagnostics = None
    if opts.emit_diagnostics:
        t0 = time.perf_counter()
        diagnostics = clt_diagnostics(
            dataset, vc4, row_totals=row_totals, xtx=xtx, reduction=red
        )
        timings["diagnostics"] = time.perf_counter() - t0

    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult(
        beta=beta,
        cov_beta=cov,
        se_beta=se,
        vc=vc4,
        mode=mode,
        diagnostics=diagnostics,
        profile=prof,
        vc_step2=vc2,
        ols_beta=beta_ols,
        ols_naive_se=ols_naive_se,
        ols_sandwich_se=ols_sandwich_se,
        warnings=tuple(warnings),
        timings=timings,
    )
