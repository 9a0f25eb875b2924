"""Learn budget-pressure weights and watch them steer routing.

A two-model observation batch is fit by projected subgradient descent,
checked against a brute-force grid, and then the learned weights are
applied to a few queries under progressively tighter budgets for the
expensive model.
"""

import numpy as np

from budget_router.core import BudgetVector
from budget_router.dual_learner import (LearnerConfig, ObservedBatch,
                                        gamma_upper_bound, learn_weights,
                                        partial_dual, score_models)


def batch_with_budgets(budgets):
    rng = np.random.default_rng(21)
    n = 60
    score_hat = rng.uniform(0.1, 1.0, size=(n, 2))
    score_hat[:, 1] += 0.15          # model 1 is better on average
    cost_hat = np.column_stack([rng.uniform(0.2, 0.6, n),
                                rng.uniform(1.0, 2.5, n)]) * 1e-3
    return ObservedBatch(query_ids=[f"q{j}" for j in range(n)],
                         score_hat=score_hat, cost_hat=cost_hat,
                         epsilon=0.3, budgets=BudgetVector.of(budgets))


def grid_minimum(batch, alpha, points=300):
    box = gamma_upper_bound(alpha, batch)
    axis = np.linspace(0.0, box, points)
    best = np.inf
    for g0 in axis:
        vals = [partial_dual(np.array([g0, g1]), alpha, batch, True)
                for g1 in axis]
        best = min(best, min(vals))
    return best


def main():
    alpha = 1e-4
    for expensive_budget in (0.030, 0.010, 0.003):
        batch = batch_with_budgets([0.02, expensive_budget])
        result = learn_weights(batch, LearnerConfig(alpha=alpha, seed=0,
                                                    clamp_negative=True))
        grid = grid_minimum(batch, alpha)
        gamma = result.weights.gamma
        picks = [score_models(batch.score_hat[j], batch.cost_hat[j],
                              result.weights)[1]
                 for j in range(10)]
        to_big = sum(p == 1 for p in picks)
        print(f"budget for model 1 = {expensive_budget:.3f}: "
              f"gamma = ({gamma[0]:.3f}, {gamma[1]:.3f}), "
              f"objective {result.objective:.6f} "
              f"(grid {grid:.6f}), "
              f"{to_big}/10 sample queries still go to model 1")


if __name__ == "__main__":
    main()
