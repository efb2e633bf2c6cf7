#!/usr/bin/env python3
"""Print final-time error tables for the three schemes on the manufactured problem.

Each table row is one step size from a halving ladder; the observed order is
the log2 ratio of consecutive errors. The weighted scheme at sigma = 1/2 and
the factorized scheme at sigma = 1/2 should show second order, the rest first.
"""

import argparse

from splitstep import (
    SchemeConfig,
    convergence_study,
    example_coupled_spec,
    example_porosity_spec,
    manufactured_problem,
)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--m", type=int, default=31, help="interior grid points per component")
    p.add_argument("--levels", type=int, default=5, help="ladder length starting at tau=1/16")
    return p.parse_args()


def print_table(title, report):
    print(f"\n{title}")
    print(f"{'tau':>12} {'n_steps':>8} {'error_A':>14} {'order':>8}")
    for row in report.rows:
        order = f"{row.order:.3f}" if row.order is not None else "-"
        print(f"{row.tau:>12.6f} {row.n_steps:>8d} {row.error_a:>14.6e} {order:>8}")


def main():
    args = parse_args()
    taus = [1.0 / 16 / 2**i for i in range(args.levels)]
    coupled = manufactured_problem(example_coupled_spec(p=2, m=args.m))
    porous = manufactured_problem(example_porosity_spec(p=2, m=args.m))

    cases = [
        ("weighted, sigma=0.5 (expect order 2)", "weighted", 0.5, coupled),
        ("weighted, sigma=1.0 (expect order 1)", "weighted", 1.0, coupled),
        ("factorized, sigma=0.5 (expect order 2)", "factorized", 0.5, coupled),
        ("three_level, sigma=1.0, eps=1 (expect order 1)", "three_level", 1.0, porous),
    ]
    for title, kind, sigma, manu in cases:
        cfg = SchemeConfig(kind, sigma=sigma, tau=taus[0], n_steps=1, epsilon=1.0)
        report = convergence_study(manu.problem, cfg, taus)
        print_table(title, report)


if __name__ == "__main__":
    main()
