"""Route a synthetic stream end to end and compare against two baselines.

Generates a clustered workload, learns per-model pressure weights from
the first 2.5% of the stream, routes the rest greedily against those
weights, and prints the scoreboard next to a cost-greedy and a random
policy.
"""

from budget_router.ann_index import IndexConfig, build_index
from budget_router.baselines import BaselineConfig, route_baseline
from budget_router.core import compute_metrics
from budget_router.harness import (SplitSpec, base_budget, historical_stats,
                                   split_budget)
from budget_router.oracle import offline_optima
from budget_router.router import RouterConfig, run_episode
from budget_router.workloads import synthetic_workload


def main():
    manifest = synthetic_workload(n_historical=3000, n_test=1200,
                                  n_models=5, dim=16, seed=11)
    stream = manifest.test_queries
    print(f"historical pool: {len(manifest.historical)} records, "
          f"stream: {len(stream)} queries")

    index = build_index(manifest.historical, IndexConfig(k_neighbors=5))
    stats = historical_stats(manifest.historical)
    budgets = split_budget(base_budget(stream),
                           SplitSpec("cost_efficiency_sqrt"), stats)
    print("per-model budgets:", [f"{b:.4f}" for b in budgets.per_model])

    optima = offline_optima(stream, index, budgets, k=5)
    print(f"offline reference (estimated features): "
          f"{optima.estimated_optimum:.2f}")

    log = run_episode(stream, index, budgets,
                      RouterConfig(alpha=1e-4, epsilon=0.025, k=5, seed=0))
    rows = [("ours", log)]
    for kind in ("greedy_cost", "random"):
        rows.append((kind, route_baseline(kind, stream, index, budgets,
                                          BaselineConfig(seed=0, k=5))))

    print(f"\n{'policy':<12} {'perf':>8} {'cost':>9} {'served':>7} {'rel':>6}")
    for name, episode in rows:
        m = compute_metrics(episode, optima.estimated_optimum)
        print(f"{name:<12} {m.performance:8.2f} {m.cost:9.4f} "
              f"{m.throughput:7.0f} {m.relative_performance:6.2%}")


if __name__ == "__main__":
    main()
