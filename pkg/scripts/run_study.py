#!/usr/bin/env python3
"""Reproduce the MSE-scaling study on the simulation design.

R = C = 2*sqrt(N), a quarter of the grid observed, five standard-normal
covariates plus an intercept, truth beta = 1 and variance components
(2, 0.5, 1).  Writes study.csv and prints fitted log-log MSE slopes.
"""

import sys

from crossed_lmm.cli import main

if __name__ == "__main__":
    args = sys.argv[1:] or [
        "study",
        "--grid", "400,1600,6400,25600",
        "--reps", "100",
        "--p", "5",
        "--vc", "2,0.5,1",
        "--seed", "20250810",
        "--output", "study.csv",
    ]
    sys.exit(main(args))
