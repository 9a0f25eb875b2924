"""Sweep the budget factor and read the harness report.

Runs a small experiment grid (three budget factors, shuffled arrival
order, our router only), then prints the aggregate table and the
offline reference at each factor.
"""

from budget_router.harness import (ExperimentPlan, OrderSpec, SplitSpec,
                                   run_plan)
from budget_router.workloads import synthetic_workload


def main():
    manifest = synthetic_workload(n_historical=3000, n_test=1000,
                                  n_models=4, dim=16, seed=2)
    plan = ExperimentPlan(algorithms=("ours",),
                          budget_factors=(0.5, 1.0, 2.0),
                          split=SplitSpec("cost_efficiency_sqrt"),
                          order=OrderSpec("random", n_shuffles=5),
                          seeds=(0,))
    report = run_plan(plan, manifest)

    print(f"{'factor':>6} {'perf mean':>10} {'served':>8} {'rel perf':>9}")
    for row in report.summary:
        print(f"{row['budget_factor']:>6} {row['performance_mean']:>10.2f} "
              f"{row['throughput_mean']:>8.1f} "
              f"{row['relative_performance_mean']:>9.2%}")

    print("\noffline optimum grows with the budget:")
    for row in sorted(report.oracle_rows, key=lambda r: r["budget_factor"]):
        if row["kind"] == "optimum":
            print(f"  factor {row['budget_factor']:<4} -> {row['value']:.2f}")

    print("\nCSV heads:")
    print("  " + report.to_csv().splitlines()[0])
    print("  " + report.to_long_csv().splitlines()[0])


if __name__ == "__main__":
    main()
