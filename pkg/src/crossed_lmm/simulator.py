"""Synthetic crossed-effects data with known truth, plus Monte Carlo studies.

The generator is counter-based (Philox) with explicit jump-ahead per
replicate, so replicates are reproducible and independently streamable.
The observation pattern is redrawn per replicate unless ``fixed_pattern``
is set.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import dataset_from_arrays
from .pipeline import FitOptions, fit

EFFECT_DISTRIBUTIONS = ("gaussian", "uniform", "laplace", "t5")


@dataclass(frozen=True)
class SimConfig:
    """One simulation cell.

    ``fill_count`` draws exactly that many cells uniformly without
    replacement; ``fill_prob`` keeps each cell independently.  ``p`` counts
    covariates beyond the intercept, so ``beta`` has length p+1.
    ``effect_dist`` applies to (row, column, noise) effects; a single name
    is broadcast to all three.
    """

    rows: int
    cols: int
    p: int
    beta: tuple
    vc_truth: tuple
    seed: int
    fill_count: int | None = None
    fill_prob: float | None = None
    effect_dist: tuple = ("gaussian", "gaussian", "gaussian")
    fixed_pattern: bool = False

    def __post_init__(self):
        if (self.fill_count is None) == (self.fill_prob is None):
            raise ValueError("exactly one of fill_count / fill_prob must be set")
        if self.fill_count is not None and self.fill_count > self.rows * self.cols:
            raise ValueError("fill_count exceeds the number of cells")
        if len(self.beta) != self.p + 1:
            raise ValueError(f"beta must have length p+1 = {self.p + 1}")
        if len(self.vc_truth) != 3 or min(self.vc_truth) < 0:
            raise ValueError("vc_truth must be three nonnegative variances")
        dist = self.effect_dist
        if isinstance(dist, str):
            dist = (dist, dist, dist)
        if len(dist) != 3 or any(d not in EFFECT_DISTRIBUTIONS for d in dist):
            raise ValueError(f"effect_dist entries must be one of {EFFECT_DISTRIBUTIONS}")
        object.__setattr__(self, "effect_dist", tuple(dist))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "vc_truth", tuple(float(v) for v in self.vc_truth))

    @property
    def nominal_n(self) -> int:
        if self.fill_count is not None:
            return self.fill_count
        return int(round(self.rows * self.cols * self.fill_prob))


@dataclass(frozen=True)
class TruthRecord:
    """Realized effects and generating parameters for one replicate."""

    a: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    vc_truth: tuple


def draw_effects(rng: np.random.Generator, n: int, var: float, dist: str) -> np.ndarray:
    """Zero-mean draws scaled to the target variance."""
    if var == 0.0:
        return np.zeros(n)
    sd = math.sqrt(var)
    if dist == "gaussian":
        return rng.normal(0.0, sd, n)
    if dist == "uniform":
        half = math.sqrt(3.0 * var)
        return rng.uniform(-half, half, n)
    if dist == "laplace":
        return rng.laplace(0.0, math.sqrt(var / 2.0), n)
    if dist == "t5":
        return rng.standard_t(5, n) * math.sqrt(var * 3.0 / 5.0)  # Var(t5) = 5/3
    raise ValueError(f"unknown effect distribution {dist!r}")


def _streams(config: SimConfig, replicate: int):
    root = np.random.Philox(key=config.seed)
    if config.fixed_pattern:
        pattern = np.random.Generator(root)
        effects = np.random.Generator(root.jumped(1 + replicate))
    else:
        pattern = np.random.Generator(root.jumped(2 * replicate))
        effects = np.random.Generator(root.jumped(2 * replicate + 1))
    return pattern, effects


def simulate_crossed(config: SimConfig, replicate: int = 0):
    """Generate one replicate: (in-memory IndexedDataset, TruthRecord)."""
    pattern_rng, effect_rng = _streams(config, replicate)
    r, c = config.rows, config.cols
    if config.fill_count is not None:
        cells = pattern_rng.choice(r * c, size=config.fill_count, replace=False)
        cells.sort()
    else:
        cells = np.flatnonzero(pattern_rng.random(r * c) < config.fill_prob)
    i = cells // c
    j = cells % c
    n = cells.shape[0]
    width = config.p + 1
    x = np.empty((n, width))
    x[:, 0] = 1.0
    if config.p:
        x[:, 1:] = effect_rng.standard_normal((n, config.p))
    beta = np.asarray(config.beta, dtype=float)
    sa2, sb2, se2 = config.vc_truth
    da, db, de = config.effect_dist
    a = draw_effects(effect_rng, r, sa2, da)
    b = draw_effects(effect_rng, c, sb2, db)
    e = draw_effects(effect_rng, n, se2, de)
    y = x @ beta + a[i] + b[j] + e
    dataset = dataset_from_arrays(i, j, x, y)
    return dataset, TruthRecord(a=a, b=b, beta=beta, vc_truth=config.vc_truth)


# --------------------------------------------------------------------------
# Monte Carlo studies
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyRow:
    n: int
    r: int
    c: int
    param: str
    truth: float
    mean_est: float
    mse: float
    coverage: float  # NaN for variance components (no interval reported)
    secs: float


@dataclass(frozen=True)
class ReplicateRecord:
    """Per-replicate summary retained when ``keep_replicates`` is set."""

    mode: str
    sa2_max_row: float
    sb2_max_col: float
    beta_est: np.ndarray
    se_est: np.ndarray
    vc_raw: tuple
    ols_naive_se: np.ndarray
    ols_sandwich_se: np.ndarray
    secs: float


@dataclass
class StudyResult:
    rows: list
    failures: list  # per config: number of replicates whose fit raised
    replicates: list | None = None  # per config: list[ReplicateRecord]


def mc_study(
    configs: Sequence[SimConfig],
    replicates: int,
    fit_options: FitOptions | None = None,
    keep_replicates: bool = False,
) -> StudyResult:
    """Fit each config ``replicates`` times; aggregate MSE, coverage, timing.

    Per-replicate failures are recorded and skipped rather than aborting the
    study.  Coverage is of nominal 95% normal-theory intervals for beta.
    """
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    opts = fit_options or FitOptions()
    rows: list[StudyRow] = []
    failures: list[int] = []
    all_reps: list[list[ReplicateRecord]] = []
    for config in configs:
        beta = np.asarray(config.beta)
        width = config.p + 1
        betas, ses, vcs, times = [], [], [], []
        reps: list[ReplicateRecord] = []
        failed = 0
        for rep in range(replicates):
            dataset, _truth = simulate_crossed(config, rep)
            t0 = time.perf_counter()
            try:
                res = fit(dataset, opts)
            except Exception:
                failed += 1
                continue
            dt = time.perf_counter() - t0
            betas.append(res.beta)
            ses.append(res.se_beta)
            vcs.append(
                (res.vc.sigma2_a_raw, res.vc.sigma2_b_raw, res.vc.sigma2_e_raw)
            )
            times.append(dt)
            if keep_replicates:
                prof = res.profile
                reps.append(
                    ReplicateRecord(
                        mode=res.mode.value if res.mode else "ols",
                        sa2_max_row=res.vc_step2.sigma2_a * prof.max_row,
                        sb2_max_col=res.vc_step2.sigma2_b * prof.max_col,
                        beta_est=res.beta,
                        se_est=res.se_beta,
                        vc_raw=vcs[-1],
                        ols_naive_se=res.ols_naive_se,
                        ols_sandwich_se=res.ols_sandwich_se,
                        secs=dt,
                    )
                )
        failures.append(failed)
        all_reps.append(reps)
        if not betas:
            continue
        est = np.asarray(betas)
        se = np.asarray(ses)
        vc_est = np.asarray(vcs)
        secs = float(np.mean(times))
        n, r, c = config.nominal_n, config.rows, config.cols
        for k in range(width):
            covered = np.mean(np.abs(est[:, k] - beta[k]) <= 1.959963984540054 * se[:, k])
            rows.append(
                StudyRow(
                    n=n, r=r, c=c, param=f"beta{k}", truth=float(beta[k]),
                    mean_est=float(est[:, k].mean()),
                    mse=float(np.mean((est[:, k] - beta[k]) ** 2)),
                    coverage=float(covered), secs=secs,
                )
            )
        for k, name in enumerate(("sigma2_a", "sigma2_b", "sigma2_e")):
            truth = config.vc_truth[k]
            rows.append(
                StudyRow(
                    n=n, r=r, c=c, param=name, truth=float(truth),
                    mean_est=float(vc_est[:, k].mean()),
                    mse=float(np.mean((vc_est[:, k] - truth) ** 2)),
                    coverage=float("nan"), secs=secs,
                )
            )
    return StudyResult(rows=rows, failures=failures,
                       replicates=all_reps if keep_replicates else None)


STUDY_CSV_COLUMNS = ("N", "R", "C", "param", "truth", "mean_est", "mse", "coverage", "secs")


def write_study_csv(path: str, rows: Sequence[StudyRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STUDY_CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.n, row.r, row.c, row.param, repr(row.truth), repr(row.mean_est),
                 repr(row.mse), "" if math.isnan(row.coverage) else repr(row.coverage),
                 repr(row.secs)]
            )


def mse_loglog_slopes(rows: Sequence[StudyRow]) -> dict:
    """Least-squares slope of log MSE against log N, per parameter."""
    by_param: dict[str, list] = {}
    for row in rows:
        by_param.setdefault(row.param, []).append((row.n, row.mse))
    slopes = {}
    for param, pts in by_param.items():
        if len(pts) < 2:
            continue
        ln = np.log([p[0] for p in pts])
        lm = np.log([max(p[1], 1e-300) for p in pts])
        slope = np.polyfit(ln, lm, 1)[0]
        slopes[param] = float(slope)
    return slopes
