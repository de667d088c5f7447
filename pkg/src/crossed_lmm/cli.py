"""Command-line surface: fit, simulate, study, bench, verify."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import tracemalloc

import numpy as np

from . import __version__
from .errors import CrossedLmmError
from .gls import cls_fit, ols_fit, rls_fit
from .inference import var_beta_cls, var_beta_rls
from .ingest import (
    DedupPolicy,
    dataset_from_arrays,
    index_dataset,
    materialize,
    open_source,
)
from .moments import (
    build_moment_matrix,
    compute_u_statistics,
    solve_variance_components,
)
from .oracle import DenseDesign, dense_gls, dense_gls_sandwich, naive_u_statistics, single_factor_covariance
from .pipeline import FIT_MODES, FitOptions, fit
from .simulator import (
    SimConfig,
    mc_study,
    mse_loglog_slopes,
    simulate_crossed,
    write_study_csv,
)

VERIFY_TOLERANCE = 1e-8


def _default_shards() -> int:
    env = os.environ.get("CROSSED_LMM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _ints(text: str) -> list[int]:
    return [int(float(tok)) for tok in text.split(",") if tok.strip() != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossed-lmm",
        description="Fit two-factor crossed random-effects linear models in O(N) time.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a delimited data file")
    p_fit.add_argument("--input", required=True)
    p_fit.add_argument("--output", help="JSON result path (stdout when omitted)")
    p_fit.add_argument("--mode", choices=FIT_MODES, default="auto")
    p_fit.add_argument("--dedup", choices=[p.value for p in DedupPolicy],
                       default=DedupPolicy.ASSUME_UNIQUE.value)
    p_fit.add_argument("--shards", type=int, default=None)
    p_fit.add_argument("--deterministic", action="store_true",
                       help="force ordered reduction (bitwise equal to one shard)")
    p_fit.add_argument("--diagnostics", dest="diagnostics", action="store_true", default=True)
    p_fit.add_argument("--no-diagnostics", dest="diagnostics", action="store_false")
    p_fit.add_argument("--compare-coef", type=int, default=0,
                       help="coefficient judged under --mode both-compare")
    p_fit.add_argument("--delimiter", default=",")
    p_fit.add_argument("--no-header", dest="has_header", action="store_false", default=True)
    p_fit.add_argument("--p", type=int, default=None,
                       help="covariates per record (inferred when omitted)")

    p_sim = sub.add_parser("simulate", help="write one synthetic dataset as CSV")
    _add_sim_args(p_sim)
    p_sim.add_argument("--replicate", type=int, default=0)
    p_sim.add_argument("--output", required=True)

    p_study = sub.add_parser("study", help="Monte Carlo study over a grid of sizes")
    p_study.add_argument("--grid", required=True, help="comma-separated N values")
    p_study.add_argument("--reps", type=int, required=True)
    p_study.add_argument("--p", type=int, default=5)
    p_study.add_argument("--beta", default=None, help="comma floats, default all ones")
    p_study.add_argument("--vc", default="2,0.5,1")
    p_study.add_argument("--dist", default="gaussian")
    p_study.add_argument("--seed", type=int, default=1)
    p_study.add_argument("--fill", type=float, default=0.25,
                         help="fraction of the RxC grid observed (exact count)")
    p_study.add_argument("--mode", choices=FIT_MODES, default="auto")
    p_study.add_argument("--output", required=True)
    p_study.add_argument("--no-slopes", dest="slopes", action="store_false", default=True)

    p_bench = sub.add_parser("bench", help="time fits against sample size")
    p_bench.add_argument("--sizes", required=True, help="comma-separated N values")
    p_bench.add_argument("--p", type=int, default=5)
    p_bench.add_argument("--vc", default="2,0.5,1")
    p_bench.add_argument("--seed", type=int, default=1)
    p_bench.add_argument("--repeats", type=int, default=1,
                         help="fits per size; the fastest is recorded")
    p_bench.add_argument("--track-memory", action="store_true",
                         help="also record tracemalloc peak during the fit passes")
    p_bench.add_argument("--output", required=True)

    p_verify = sub.add_parser(
        "verify", help="compare streaming estimates against the dense oracle on a subsample"
    )
    p_verify.add_argument("--input", required=True)
    p_verify.add_argument("--max-n", type=int, default=2000)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--delimiter", default=",")
    p_verify.add_argument("--no-header", dest="has_header", action="store_false", default=True)
    p_verify.add_argument("--p", type=int, default=None)
    return parser


def _add_sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    fill = p.add_mutually_exclusive_group(required=True)
    fill.add_argument("--fill-count", type=int)
    fill.add_argument("--fill-prob", type=float)
    p.add_argument("--p", type=int, default=0)
    p.add_argument("--beta", default=None, help="comma floats, default all ones")
    p.add_argument("--vc", default="1,1,1", help="sigma2_a,sigma2_b,sigma2_e")
    p.add_argument("--dist", default="gaussian",
                   help="one name or three comma-separated names (row,col,noise)")
    p.add_argument("--seed", type=int, default=1)


def _sim_config(args, rows: int, cols: int, fill_count=None, fill_prob=None) -> SimConfig:
    beta = _floats(args.beta) if args.beta else [1.0] * (args.p + 1)
    if len(beta) == 1 and args.p > 0:
        beta = beta * (args.p + 1)
    dist = args.dist.split(",") if "," in args.dist else args.dist
    if isinstance(dist, list):
        dist = tuple(d.strip() for d in dist)
    return SimConfig(
        rows=rows, cols=cols, p=args.p, beta=tuple(beta),
        vc_truth=tuple(_floats(args.vc)), seed=args.seed,
        fill_count=fill_count, fill_prob=fill_prob, effect_dist=dist,
    )


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_fit(args) -> int:
    source = open_source(args.input, p=args.p, delimiter=args.delimiter,
                         has_header=args.has_header)
    dataset = index_dataset(source, DedupPolicy(args.dedup))
    opts = FitOptions(
        mode=args.mode,
        dedup=DedupPolicy(args.dedup),
        emit_diagnostics=args.diagnostics,
        deterministic_reduction=args.deterministic,
        shards=args.shards if args.shards is not None else _default_shards(),
        compare_coef=args.compare_coef,
    )
    t0 = time.perf_counter()
    result = fit(dataset, opts)
    payload = result.to_json_dict()
    payload["timings"]["total_fit"] = time.perf_counter() - t0
    text = json.dumps(payload, indent=2)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    degenerate = any("degenerate" in w or "singular" in w for w in result.warnings)
    return 2 if degenerate else 0


def cmd_simulate(args) -> int:
    config = _sim_config(args, args.rows, args.cols,
                         fill_count=args.fill_count, fill_prob=args.fill_prob)
    dataset, _ = simulate_crossed(config, args.replicate)
    row_idx, col_idx, x, y = materialize(dataset)
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "col_id", "y"] + [f"x{k}" for k in range(1, args.p + 1)])
        for k in range(y.shape[0]):
            writer.writerow(
                [f"r{row_idx[k]}", f"c{col_idx[k]}", repr(float(y[k]))]
                + [repr(float(v)) for v in x[k, 1:]]
            )
    print(f"wrote {y.shape[0]} records to {args.output}", file=sys.stderr)
    return 0


def _study_configs(args) -> list[SimConfig]:
    configs = []
    for n in _ints(args.grid):
        r = max(2, int(round(2.0 * np.sqrt(n))))
        count = max(2, int(round(r * r * args.fill)))
        configs.append(_sim_config(args, r, r, fill_count=count))
    return configs


def cmd_study(args) -> int:
    configs = _study_configs(args)
    result = mc_study(configs, args.reps, FitOptions(mode=args.mode))
    write_study_csv(args.output, result.rows)
    failed = sum(result.failures)
    if failed:
        print(f"warning: {failed} replicate fits failed", file=sys.stderr)
    if args.slopes and len(configs) >= 2:
        for param, slope in sorted(mse_loglog_slopes(result.rows).items()):
            print(f"slope {param} = {slope:.3f}")
    print(f"wrote {len(result.rows)} rows to {args.output}", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    vc = tuple(_floats(args.vc))
    sizes = _ints(args.sizes)
    rows = []
    for n in sizes:
        r = max(2, int(round(2.0 * np.sqrt(n))))
        count = max(2, (r * r) // 4)
        config = SimConfig(
            rows=r, cols=r, p=args.p, beta=tuple([1.0] * (args.p + 1)),
            vc_truth=vc, seed=args.seed, fill_count=count,
        )
        dataset, _ = simulate_crossed(config)  # generation is untimed
        best = float("inf")
        peak = 0
        for _ in range(max(1, args.repeats)):
            if args.track_memory:
                tracemalloc.start()
            t0 = time.perf_counter()
            fit(dataset, FitOptions(emit_diagnostics=True))
            best = min(best, time.perf_counter() - t0)
            if args.track_memory:
                peak = max(peak, tracemalloc.get_traced_memory()[1])
                tracemalloc.stop()
        rows.append((dataset.profile.n, best, peak))
        print(f"N={dataset.profile.n}: {best:.4f}s"
              + (f", peak_fit_bytes={peak}" if args.track_memory else ""),
              file=sys.stderr)
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "secs"] + (["peak_fit_bytes"] if args.track_memory else []))
        for n, secs, peak in rows:
            writer.writerow([n, repr(secs)] + ([peak] if args.track_memory else []))
    if len(rows) >= 2:
        ln = np.log([r[0] for r in rows])
        lt = np.log([max(r[1], 1e-9) for r in rows])
        slope = float(np.polyfit(ln, lt, 1)[0])
        print(f"slope time = {slope:.3f}")
    return 0


def cmd_verify(args) -> int:
    source = open_source(args.input, p=args.p, delimiter=args.delimiter,
                         has_header=args.has_header)
    dataset = index_dataset(source)
    sub = _subsample(dataset, args.max_n, args.seed)
    discrepancies = _oracle_discrepancies(sub)
    worst = max(discrepancies.values())
    for name, value in sorted(discrepancies.items()):
        print(f"{name}: {value:.3e}")
    print(f"max relative discrepancy: {worst:.3e} (tolerance {VERIFY_TOLERANCE:.0e})")
    return 0 if worst <= VERIFY_TOLERANCE else 1


def _subsample(dataset, max_n: int, seed: int):
    prof = dataset.profile
    if prof.n <= max_n:
        row_idx, col_idx, x, y = materialize(dataset)
    else:
        rng = np.random.default_rng(seed)
        frac = min(1.0, np.sqrt(max_n / prof.n))
        keep_rows = rng.random(prof.r) < frac
        keep_cols = rng.random(prof.c) < frac
        parts = []
        for chunk in dataset.scan():
            sel = keep_rows[chunk.row_idx] & keep_cols[chunk.col_idx]
            if sel.any():
                parts.append((chunk.row_idx[sel], chunk.col_idx[sel],
                              chunk.x[sel], chunk.y[sel]))
        if not parts:
            raise CrossedLmmError("subsample came back empty; retry with another seed")
        row_idx = np.concatenate([p[0] for p in parts])
        col_idx = np.concatenate([p[1] for p in parts])
        x = np.concatenate([p[2] for p in parts])
        y = np.concatenate([p[3] for p in parts])
        if y.shape[0] > max_n:
            print(f"subsample of {y.shape[0]} records still exceeds {max_n}; "
                  "down-sampling records", file=sys.stderr)
            pick = rng.choice(y.shape[0], size=max_n, replace=False)
            pick.sort()
            row_idx, col_idx, x, y = row_idx[pick], col_idx[pick], x[pick], y[pick]
    return dataset_from_arrays(row_idx, col_idx, x, y)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(b)), 1e-30)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)


def _oracle_discrepancies(dataset) -> dict:
    design = DenseDesign.from_dataset(dataset)
    out = {}
    beta_ols, xtx = ols_fit(dataset)
    beta_dense, _ = dense_gls(design.x, design.y, np.eye(design.n))
    out["ols_vs_dense"] = _rel(beta_ols, beta_dense)

    u = compute_u_statistics(dataset, beta_ols)
    u_naive = naive_u_statistics(
        (design.row_idx, design.col_idx, design.x, design.y), beta_ols
    )
    out["u_stats_vs_naive"] = _rel(u.as_array(), u_naive.as_array())

    vc = solve_variance_components(build_moment_matrix(dataset.profile), u)
    beta_rls, neq_r = rls_fit(dataset, vc)
    dense_rls, _ = dense_gls(design.x, design.y, single_factor_covariance(design, "row", vc))
    out["rls_vs_dense"] = _rel(beta_rls, dense_rls)

    beta_cls, neq_c = cls_fit(dataset, vc)
    dense_cls, _ = dense_gls(design.x, design.y, single_factor_covariance(design, "col", vc))
    out["cls_vs_dense"] = _rel(beta_cls, dense_cls)

    out["var_rls_vs_dense"] = _rel(
        var_beta_rls(dataset, vc, neq_r), dense_gls_sandwich(design, "row", vc)
    )
    out["var_cls_vs_dense"] = _rel(
        var_beta_cls(dataset, vc, neq_c), dense_gls_sandwich(design, "col", vc)
    )
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "fit": cmd_fit,
        "simulate": cmd_simulate,
        "study": cmd_study,
        "bench": cmd_bench,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except (CrossedLmmError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
