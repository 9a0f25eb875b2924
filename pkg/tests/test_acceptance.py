"""Whole-system acceptance battery.

Each criterion announces itself with one ``[acceptance] criterion N``
line on the real stdout, so a full run reads as a checklist even while
pytest captures per-test output.  The expensive fixtures (the synthetic
workload battery and the sweep grid) are built once and shared by the
criteria that need them.
"""

import math
import os
import time
from contextlib import contextmanager
from statistics import fmean
from types import SimpleNamespace

import numpy as np
import pytest

from budget_router.ann_index import (ExactIndex, IndexConfig, build_index,
                                     exact_knn)
from budget_router.baselines import BaselineConfig, route_baseline
from budget_router.core import BudgetVector, compute_metrics
from budget_router.dual_learner import (LearnerConfig, ObservedBatch,
                                        gamma_upper_bound, learn_weights,
                                        partial_dual)
from budget_router.harness import (ALGORITHMS, SPLIT_STRATEGIES, CachedSearcher,
                                   ExperimentPlan, OrderSpec, SplitSpec,
                                   _derive_seed, base_budget, historical_stats,
                                   order_stream, run_plan, split_budget)
from budget_router.ingest import load_manifest
from budget_router.oracle import (AllocationProblem, offline_optima,
                                  round_lp_solution, solve_milp_bruteforce,
                                  solve_relaxed_lp)
from budget_router.router import RouterConfig, run_episode
from budget_router.workloads import synthetic_workload

from conftest import make_records
from test_oracle import enumerate_best


@contextmanager
def criterion(number, label, capsys):
    """Announce one checklist line on the real terminal, past capture."""
    def say(status):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {number} ({label}): {status}",
                  flush=True)
    try:
        yield
    except BaseException:
        say("FAIL")
        raise
    else:
        say("PASS")


# ---------------------------------------------------------------------------
# shared battery: one synthetic workload, ten seeds, every self-contained
# algorithm (the external-prediction baselines need a table we do not have)

_BATTERY_ALGORITHMS = ("ours", "random", "greedy_perf", "greedy_cost",
                       "knn_perf", "knn_cost", "batch_split")


def _run_battery(manifest, seeds):
    """Route the manifest's test stream with every algorithm per seed."""
    index = build_index(manifest.historical, IndexConfig(k_neighbors=5))
    ann = CachedSearcher(index)
    exact = CachedSearcher(ExactIndex(manifest.historical))
    stream = manifest.test_queries
    ann.warm(stream, 5)
    exact.warm(stream, 5)
    stats = historical_stats(manifest.historical)
    budgets = split_budget(base_budget(stream), SplitSpec("cost_efficiency_sqrt"),
                           stats)
    optima = offline_optima(stream, ann, budgets, k=5)
    logs = {}
    for seed in seeds:
        shuffled = order_stream(stream, "random", _derive_seed(17, 0, seed))
        for alg in _BATTERY_ALGORITHMS:
            episode_seed = _derive_seed(31, seed, 0, ALGORITHMS.index(alg))
            if alg == "ours":
                log = run_episode(shuffled, ann, budgets,
                                  RouterConfig(alpha=1e-4, epsilon=0.025, k=5,
                                               seed=episode_seed))
            else:
                searcher = exact if alg in ("knn_perf", "knn_cost") else ann
                log = route_baseline(alg, shuffled, searcher, budgets,
                                     BaselineConfig(seed=episode_seed, k=5))
            logs[alg, seed] = log
    return SimpleNamespace(manifest=manifest, ann=ann, exact=exact,
                           budgets=budgets, optima=optima, logs=logs,
                           seeds=tuple(seeds))


def _mean_metrics(battery, alg):
    reports = [compute_metrics(battery.logs[alg, s],
                               battery.optima.estimated_optimum)
               for s in battery.seeds]
    return SimpleNamespace(
        performance=fmean(r.performance for r in reports),
        ppc=fmean(r.ppc for r in reports),
        throughput=fmean(r.throughput for r in reports),
        relative_performance=fmean(r.relative_performance for r in reports),
    )


@pytest.fixture(scope="module")
def battery():
    t0 = time.perf_counter()
    manifest = synthetic_workload(12_000, 5_000, 5, 32, seed=0)
    out = _run_battery(manifest, range(10))
    out.seconds = time.perf_counter() - t0
    return out


@pytest.fixture(scope="module")
def neighbor_pool():
    records = make_records(10_000, n_models=3, dim=32, seed=42)
    return records, build_index(records, IndexConfig(k_neighbors=5))


# ---------------------------------------------------------------------------
# criteria


def test_exact_solver_matches_recursive_enumeration(capsys):
    """Criterion 1: the production enumerator, an independent recursive
    walk, and the relaxation agree on 200 tiny instances."""
    with criterion(1, "oracle equivalence", capsys):
        t0 = time.perf_counter()
        for trial in range(200):
            rng = np.random.default_rng(500 + trial)
            n = int(rng.integers(1, 11))
            m = int(rng.integers(1, 4))
            tightness = float(rng.uniform(0.2, 1.2))
            values = rng.random((n, m))
            costs = rng.random((n, m)) * 0.5 + 0.05
            budgets = BudgetVector.of(costs.sum(axis=0) * tightness / m + 1e-3)
            problem = AllocationProblem(values=values, costs=costs,
                                        budgets=budgets, integral=True,
                                        alpha=1.0)
            milp = solve_milp_bruteforce(problem)
            want_value, want_assignment = enumerate_best(
                values, costs, budgets.per_model)
            assert milp.objective == want_value
            np.testing.assert_array_equal(milp.assignment, want_assignment)
            lp = solve_relaxed_lp(problem)
            # equal-objective instances can differ in the last bits
            # because the two solvers accumulate in different orders
            assert milp.objective - lp.objective <= 1e-12
            assert lp.residuals["duality_gap"] <= 1e-6
        assert time.perf_counter() - t0 < 60.0


def test_relaxation_rounding_gap_stays_small(capsys):
    """Criterion 2: rounding the fractional optimum loses at most 1% at
    500 queries and 5 models.

    Reference measurements at two orders of magnitude more queries put
    this gap at 0.016%.  The gap shrinks with instance size because a
    vertex of the relaxation has at most one fractional row per model,
    so the bound here is deliberately looser than that reference value.
    """
    with criterion(2, "rounding gap", capsys):
        t0 = time.perf_counter()
        for trial in range(50):
            rng = np.random.default_rng(1000 + trial)
            values = rng.uniform(0.4, 1.0, size=(500, 5))
            costs = rng.uniform(0.5, 1.5, size=(500, 5))
            budgets = BudgetVector.of(costs.mean(axis=0) * 500 / 5 * 0.75)
            problem = AllocationProblem(values=values, costs=costs,
                                        budgets=budgets)
            lp = solve_relaxed_lp(problem)
            rounded = round_lp_solution(problem, lp)
            gap = (lp.objective - rounded.objective) / lp.objective
            assert 0.0 <= gap <= 0.01
        assert time.perf_counter() - t0 < 300.0


def _grid_minimum(batch, alpha, points=400):
    """Clamped sampled objective minimized over a dense two-model grid."""
    box = gamma_upper_bound(alpha, batch)
    axis = np.linspace(0.0, box, points)
    g0, g1 = np.meshgrid(axis, axis, indexing="ij")
    total = batch.epsilon * (g0 * batch.budgets.per_model[0]
                             + g1 * batch.budgets.per_model[1])
    for j in range(batch.score_hat.shape[0]):
        m0 = alpha * batch.score_hat[j, 0] - g0 * batch.cost_hat[j, 0]
        m1 = alpha * batch.score_hat[j, 1] - g1 * batch.cost_hat[j, 1]
        total += np.maximum(np.maximum(m0, m1), 0.0)
    return float(total.min())


def _two_model_batch(rng):
    n = int(rng.integers(40, 81))
    theta = float(rng.uniform(0.6, 1.5))
    score_hat = rng.uniform(0.1, 1.0, size=(n, 2))
    cost_hat = rng.uniform(0.2, 2.0, size=(n, 2)) * 1e-3
    epsilon = float(rng.uniform(0.1, 0.5))
    budgets = BudgetVector.of(cost_hat.mean(axis=0) * n / 2 * theta)
    return ObservedBatch(query_ids=[f"q{j}" for j in range(n)],
                         score_hat=score_hat, cost_hat=cost_hat,
                         epsilon=epsilon, budgets=budgets)


def test_learned_weights_match_grid_search(capsys):
    """Criterion 3: subgradient descent lands on the grid-search minimum
    of the clamped objective, and the objective is midpoint convex.

    The comparison uses the clamped variant on both sides because the
    unclamped objective is unbounded below whenever the observed-budget
    mass is smaller than the cheapest way to serve every observed query,
    which is the normal state of affairs at tight budgets.  Clamping
    keeps the minimizer inside the search box without changing which
    model wins any individual query.
    """
    with criterion(3, "dual weight learner", capsys):
        alpha = 1e-4
        for trial in range(20):
            rng = np.random.default_rng(3000 + trial)
            batch = _two_model_batch(rng)
            learned = learn_weights(batch, LearnerConfig(alpha=alpha, seed=trial,
                                                         clamp_negative=True))
            assert abs(learned.objective - _grid_minimum(batch, alpha)) <= 1e-3

        rng = np.random.default_rng(9000)
        batch = _two_model_batch(rng)
        box = gamma_upper_bound(alpha, batch)
        for _ in range(1000):
            a = rng.uniform(0.0, box, size=2)
            b = rng.uniform(0.0, box, size=2)
            clamp = bool(rng.integers(2))
            f_mid = partial_dual((a + b) / 2.0, alpha, batch, clamp)
            f_avg = (partial_dual(a, alpha, batch, clamp)
                     + partial_dual(b, alpha, batch, clamp)) / 2.0
            assert f_mid <= f_avg + 1e-9


def test_competitive_ratio_floor(battery, capsys):
    """Criterion 4: mean routed value over ten seeds stays above 60% of
    the estimated offline optimum.

    Runs on the full-scale reference data report 75.99% to 84.66%; the
    synthetic workload here reproduces that regime at desk scale, and in
    practice lands around 80%.
    """
    with criterion(4, "competitive ratio", capsys):
        ours = _mean_metrics(battery, "ours")
        assert ours.relative_performance >= 0.60
        assert battery.seconds < 600.0


def test_outperforms_every_baseline(battery, capsys):
    """Criterion 5: mean performance, PPC, and throughput all exceed
    every baseline's over the shared ten-seed battery."""
    with criterion(5, "baseline dominance", capsys):
        ours = _mean_metrics(battery, "ours")
        for alg in _BATTERY_ALGORITHMS[1:]:
            other = _mean_metrics(battery, alg)
            assert ours.performance > other.performance, alg
            assert ours.ppc > other.ppc, alg
            assert ours.throughput > other.throughput, alg


def test_budgets_never_exceeded(battery, capsys):
    """Criterion 6: replaying every ledger shows no model was ever
    charged past its budget, with no tolerance."""
    with criterion(6, "budget feasibility", capsys):
        per_model = battery.budgets.per_model
        for (alg, seed), log in battery.logs.items():
            remaining = per_model.copy()
            for rec in log.records:
                if not rec.executed:
                    continue
                assert rec.charge <= remaining[rec.model], (alg, seed)
                remaining[rec.model] -= rec.charge
            np.testing.assert_array_equal(remaining, log.remaining)
            for i in range(len(per_model)):
                charged = math.fsum(r.charge for r in log.records
                                    if r.executed and r.model == i)
                assert charged <= per_model[i], (alg, seed, i)


def test_neighbor_recall_and_exhaustive_beam(neighbor_pool, capsys):
    """Criterion 7: recall@5 of at least 0.9 on a 10k pool, and a beam
    as wide as the pool reproduces the exhaustive scan exactly."""
    records, index = neighbor_pool
    with criterion(7, "neighbor recall", capsys):
        rng = np.random.default_rng(7)
        probes = rng.standard_normal((1000, 32))
        hits = 0
        for probe in probes:
            truth = exact_knn(records, probe, 5)
            hits += len(set(index.search(probe, 5).ids) & set(truth.ids))
            wide = index.search(probe, 5, beam=len(records))
            np.testing.assert_array_equal(wide.positions, truth.positions)
            assert wide.ids == truth.ids
            np.testing.assert_array_equal(wide.distances, truth.distances)
        assert hits / (1000 * 5) >= 0.9


def test_budget_sweeps_complete_and_monotone(battery, capsys):
    """Criterion 8: the full sweep grid (five budget factors, six split
    strategies, shuffled and adversarial orders) runs without failures,
    never overspends, and the offline optimum grows with the budget."""
    with criterion(8, "robustness sweeps", capsys):
        t0 = time.perf_counter()
        factors = (0.25, 0.5, 1.0, 1.5, 2.0)
        total_base = base_budget(battery.manifest.test_queries)
        for split in SPLIT_STRATEGIES:
            for order in (OrderSpec("random", n_shuffles=100),
                          OrderSpec("worst_case")):
                plan = ExperimentPlan(algorithms=("ours",),
                                      budget_factors=factors,
                                      split=SplitSpec(split), order=order,
                                      seeds=(0,))
                report = run_plan(plan, battery.manifest, index=battery.ann,
                                  exact=battery.exact)
                assert len(report.rows) == len(factors) * order.instances
                for row in report.rows:
                    assert row["status"] == "ok", (split, order.kind,
                                                   row["error"])
                    cap = row["budget_factor"] * total_base
                    assert row["cost"] <= cap + 1e-9
                optima = sorted((r["budget_factor"], r["value"])
                                for r in report.oracle_rows
                                if r["kind"] == "optimum")
                assert len(optima) == len(factors)
                values = [v for _, v in optima]
                for lo, hi in zip(values, values[1:]):
                    assert lo <= hi + 1e-9, (split, order.kind)
        assert time.perf_counter() - t0 < 1800.0


_BENCHMARK = os.environ.get("BUDGET_ROUTER_BENCHMARK", "")


@pytest.mark.skipif(not _BENCHMARK, reason="set BUDGET_ROUTER_BENCHMARK to a "
                    "dataset file to run the data-dependent ordering check")
def test_external_benchmark_ordering(capsys):
    """Optional extension of criterion 4: on a user-supplied benchmark
    dataset our router beats every baseline on all three means."""
    fmt = "csv" if _BENCHMARK.endswith(".csv") else "jsonl"
    manifest = load_manifest(_BENCHMARK, fmt=fmt)
    with criterion(4, "external benchmark ordering", capsys):
        external = _run_battery(manifest, range(3))
        ours = _mean_metrics(external, "ours")
        for alg in _BATTERY_ALGORITHMS[1:]:
            other = _mean_metrics(external, alg)
            assert ours.performance > other.performance, alg
            assert ours.ppc > other.ppc, alg
            assert ours.throughput > other.throughput, alg
