"""Grid and penalty convergence for the reflected straddle against its closed form."""

import argparse
import time

import numpy as np

from fellerstop.analytic import reflected_straddle_solution
from fellerstop.core import SampledFunction, StoppingProblem, make_uniform_grid, straddle_payoff
from fellerstop.generators import bm_generator
from fellerstop.solver import PenaltyParams, penalty_active_set, solve_value_function


def grid_study(a, c1, c2, sizes):
    ana = reflected_straddle_solution(a, c1, c2)
    print(f"{'n':>6} {'h':>9} {'sup err':>10} {'ratio':>6} {'|dx*|':>8} {'sec':>6}")
    prev = None
    for n in sizes:
        grid = make_uniform_grid(0, 12, n)
        G = bm_generator(grid)
        problem = StoppingProblem(G.space, a, SampledFunction.constant(G.space, 0.0), straddle_payoff(grid, c1, c2))
        t0 = time.perf_counter()
        vf = solve_value_function(G, problem)
        dt = time.perf_counter() - t0
        err = np.abs(vf.v.values - ana.value(grid.nodes)).max()
        ratio = "" if prev is None else f"{prev / err:6.2f}"
        print(f"{n:6d} {grid.h:9.5f} {err:10.3e} {ratio:>6} {abs(vf.exercise_point() - ana.x_star):8.5f} {dt:6.2f}")
        prev = err


def penalty_study(a, c1, c2, n):
    grid = make_uniform_grid(0, 12, n)
    G = bm_generator(grid)
    problem = StoppingProblem(G.space, a, SampledFunction.constant(G.space, 0.0), straddle_payoff(grid, c1, c2))
    V = solve_value_function(G, problem, PenaltyParams(outer_stop_tol=1e-12)).v.values
    print(f"\n{'lambda':>10} {'||V - v_lam||':>14} {'(a+lam) * err':>14}")
    for lam in a * 2.0 ** np.arange(1, 21, 3):
        err = np.abs(V - penalty_active_set(G, problem, lam).v.values).max()
        print(f"{lam:10.4g} {err:14.4e} {(a + lam) * err:14.4f}")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--a", type=float, default=0.1)
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--c2", type=float, default=4.0)
    args = p.parse_args()
    grid_study(args.a, args.c1, args.c2, [61, 121, 241, 481, 961, 1921])
    penalty_study(args.a, args.c1, args.c2, 481)


if __name__ == "__main__":
    main()
