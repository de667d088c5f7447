#!/usr/bin/env python3
"""Time the fit against sample size and check the cost grows linearly.

Simulation is untimed; only the fitting passes are timed.  Writes bench.csv
(N, secs, peak_fit_bytes) and prints the fitted log-log time slope.
"""

import sys

from crossed_lmm.cli import main

if __name__ == "__main__":
    args = sys.argv[1:] or [
        "bench",
        "--sizes", "10000,40000,160000,640000",
        "--p", "5",
        "--repeats", "3",
        "--track-memory",
        "--output", "bench.csv",
    ]
    sys.exit(main(args))
