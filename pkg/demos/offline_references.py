"""Inspect the offline reference solvers on one small instance.

Solves the same allocation by exhaustive enumeration and by the LP
relaxation, prints the dual certificates, and rounds the fractional
solution back to a feasible integral one.
"""

import numpy as np

from budget_router.core import BudgetVector
from budget_router.oracle import (AllocationProblem, g_times_x,
                                  round_lp_solution, solve_milp_bruteforce,
                                  solve_relaxed_lp)


def main():
    rng = np.random.default_rng(5)
    values = rng.uniform(0.2, 1.0, size=(8, 3))
    costs = rng.uniform(0.1, 0.6, size=(8, 3))
    budgets = BudgetVector.of(costs.sum(axis=0) * 0.35 / 3)
    problem = AllocationProblem(values=values, costs=costs, budgets=budgets,
                                integral=True)

    milp = solve_milp_bruteforce(problem)
    print("enumerated optimum:", round(milp.objective, 6))
    print("assignment (-1 = unrouted):", milp.assignment.tolist())

    lp = solve_relaxed_lp(problem)
    print("\nrelaxed optimum:", round(lp.objective, 6))
    print("gap over enumeration:",
          f"{(lp.objective - milp.objective) / lp.objective:.3%}")
    print("budget duals gamma:", np.round(lp.gamma, 4))
    print("spend vs budget:")
    spend = g_times_x(costs, lp.x)
    for i in range(3):
        tight = "tight" if budgets.per_model[i] - spend[i] < 1e-9 else "slack"
        print(f"  model {i}: {spend[i]:.4f} / {budgets.per_model[i]:.4f} "
              f"({tight}, gamma {lp.gamma[i]:.4f})")
    print("duality residual:", f"{lp.residuals['duality_gap']:.2e}")

    rounded = round_lp_solution(problem, lp)
    print("\nrounded back to integral:", round(rounded.objective, 6),
          "(feasible, within the relaxation)")


if __name__ == "__main__":
    main()
