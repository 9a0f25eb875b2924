"""Budget-constrained online model routing.

Routes a stream of queries across a catalog of models with per-model
spending caps.  Per-query quality and cost are unknown at arrival time
and are estimated from the nearest historical neighbors in embedding
space.  A small observation prefix of the stream is used to learn
per-model pressure weights from the estimated quantities; the remainder
is routed by the weighted trade-off between estimated quality and
estimated spend, without ever exceeding any cap.

Typical use::

    from budget_router import (IndexConfig, RouterConfig, build_index,
                               run_episode, compute_metrics)
    from budget_router.workloads import synthetic_workload
    from budget_router.harness import base_budget, historical_stats, split_budget, SplitSpec

    data = synthetic_workload(n_historical=2000, n_test=500, seed=7)
    index = build_index(data.historical, IndexConfig(k_neighbors=5))
    stats = historical_stats(data.historical)
    budgets = split_budget(base_budget(data.test_queries), SplitSpec(), stats)
    log = run_episode(data.test_queries, index, budgets,
                      RouterConfig(alpha=1e-4, epsilon=0.025, seed=7))
    print(compute_metrics(log).as_dict())

Offline references (the integral optimum on small instances, the
relaxed upper bound otherwise) live in :mod:`budget_router.oracle`;
reference policies in :mod:`budget_router.baselines`; grid sweeps in
:mod:`budget_router.harness`; the ``budget-router`` command in
:mod:`budget_router.cli`.
"""
from .ann_index import (AnnIndex, ExactIndex, FeatureEstimate, IndexConfig,
                        NeighborSet, build_index, estimate_features, exact_knn,
                        load_index, save_index, search)
from .core import (BudgetVector, DecisionRecord, EpisodeLog, MetricsReport,
                   ModelSpec, Query, compute_cost, compute_metrics)
from .dual_learner import (DualWeights, LearnerConfig, LearnResult,
                           ObservedBatch, learn_weights, partial_dual,
                           partial_dual_subgradient, score_models)
from .ingest import (DatasetManifest, HistoricalRecord, ManifestError,
                     load_manifest, split_dataset, write_manifest)
from .oracle import (AllocationProblem, AllocationSolution, OfflineOptima,
                     offline_optima, round_lp_solution, solve_milp_bruteforce,
                     solve_relaxed_lp)
from .router import ADMISSION_POLICIES, RouterConfig, RouterState, run_episode

__version__ = "0.1.0"

__all__ = [
    "ADMISSION_POLICIES",
    "AllocationProblem",
    "AllocationSolution",
    "AnnIndex",
    "BudgetVector",
    "DatasetManifest",
    "DecisionRecord",
    "DualWeights",
    "EpisodeLog",
    "ExactIndex",
    "FeatureEstimate",
    "HistoricalRecord",
    "IndexConfig",
    "LearnResult",
    "LearnerConfig",
    "ManifestError",
    "MetricsReport",
    "ModelSpec",
    "NeighborSet",
    "ObservedBatch",
    "OfflineOptima",
    "Query",
    "RouterConfig",
    "RouterState",
    "build_index",
    "compute_cost",
    "compute_metrics",
    "estimate_features",
    "exact_knn",
    "learn_weights",
    "load_index",
    "load_manifest",
    "offline_optima",
    "partial_dual",
    "partial_dual_subgradient",
    "round_lp_solution",
    "run_episode",
    "save_index",
    "score_models",
    "search",
    "solve_milp_bruteforce",
    "solve_relaxed_lp",
    "split_dataset",
    "write_manifest",
    "__version__",
]
