"""Experiment orchestration: budget derivation, stream ordering, and
plan execution with aggregated reports.

A plan is a grid over algorithms, budget factors, stream orders, seeds,
and optional stream volumes.  Every cell runs one episode; per budget
configuration the offline references are computed once and shared.
Cells execute in a thread pool (capped by the BUDGET_ROUTER_THREADS
environment variable) and are reduced in deterministic cell order, so a
report is reproducible byte for byte given the same inputs and seeds.
Feature estimates depend only on the query and the searcher, never on
the episode, so they are computed once per stream and shared across
cells through a small cache.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ann_index import AnnIndex, ExactIndex, IndexConfig, _VectorStore, build_index
from .baselines import BASELINE_KINDS, BaselineConfig, route_baseline
from .core import BudgetVector, EpisodeLog, MetricsReport, Query, compute_metrics
from .dual_learner import LearnerConfig
from .ingest import DatasetManifest, HistoricalRecord
from .oracle import OfflineOptima, offline_optima
from .router import RouterConfig, run_episode

__all__ = [
    "SPLIT_STRATEGIES",
    "SplitSpec",
    "OrderSpec",
    "ExperimentPlan",
    "ExperimentReport",
    "CachedSearcher",
    "historical_stats",
    "base_budget",
    "split_budget",
    "order_stream",
    "run_plan",
    "realized_prefix_value",
]

SPLIT_STRATEGIES = (
    "cost_efficiency_sqrt",
    "cost_based_sqrt",
    "performance_based",
    "uniform",
    "random",
    "extreme",
)

ALGORITHMS = ("ours",) + BASELINE_KINDS


def _derive_seed(*keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass(frozen=True)
class HistoricalStats:
    mean_scores: np.ndarray
    mean_costs: np.ndarray


def historical_stats(records: Sequence[HistoricalRecord]) -> HistoricalStats:
    """Per-model mean realized score and cost over the historical pool."""
    if not records:
        raise ValueError("historical dataset empty")
    scores = np.stack([r.scores for r in records])
    costs = np.stack([r.costs for r in records])
    return HistoricalStats(mean_scores=scores.mean(axis=0),
                           mean_costs=costs.mean(axis=0))


def base_budget(stream: Sequence[Query]) -> float:
    """Reference budget level: the cheapest model's cost of serving the
    whole stream alone."""
    if not stream:
        raise ValueError("stream is empty")
    costs = np.stack([q.costs for q in stream])
    return float(np.min(costs.sum(axis=0)))


@dataclass(frozen=True)
class SplitSpec:
    """How a total budget is divided across models.

    ``kind`` is one of SPLIT_STRATEGIES.  ``h`` (extreme only) is how
    many of the least cost-efficient models share the 80% slice.
    """

    kind: str = "cost_efficiency_sqrt"
    h: int = 1

    def __post_init__(self) -> None:
        if self.kind not in SPLIT_STRATEGIES:
            raise ValueError(f"unknown split {self.kind!r}; choose one of {SPLIT_STRATEGIES}")
        if self.h < 1:
            raise ValueError("h must be >= 1")


def split_budget(total: float, spec: SplitSpec, stats: HistoricalStats,
                 rng: np.random.Generator | None = None) -> BudgetVector:
    """Divide ``total`` across models according to ``spec``.

    Weight-based strategies normalize their weights to sum to one.  The
    random strategy draws a uniform point of the probability simplex and
    needs ``rng``.  The extreme strategy gives 80% of the budget,
    equally, to the ``h`` least cost-efficient models and 20% to the
    rest (everything to the h set when h covers all models).
    """
    if total < 0:
        raise ValueError("total budget must be >= 0")
    m = len(stats.mean_costs)
    if spec.kind in ("cost_efficiency_sqrt", "cost_based_sqrt", "extreme") \
            and np.any(stats.mean_costs <= 0):
        raise ValueError(f"split {spec.kind!r} needs positive mean costs")
    if spec.kind == "cost_efficiency_sqrt":
        weights = np.sqrt(stats.mean_scores / stats.mean_costs)
    elif spec.kind == "cost_based_sqrt":
        weights = np.sqrt(1.0 / stats.mean_costs)
    elif spec.kind == "performance_based":
        weights = stats.mean_scores.astype(np.float64).copy()
    elif spec.kind == "uniform":
        weights = np.ones(m)
    elif spec.kind == "random":
        if rng is None:
            raise ValueError("random split needs an rng")
        weights = rng.dirichlet(np.ones(m))
    else:  # extreme
        if spec.h > m:
            raise ValueError(f"extreme split h={spec.h} exceeds {m} models")
        efficiency = stats.mean_scores / stats.mean_costs
        order = np.lexsort((np.arange(m), efficiency))
        least = order[:spec.h]
        weights = np.zeros(m)
        if spec.h == m:
            weights[least] = 1.0 / m
        else:
            weights[least] = 0.8 / spec.h
            rest = order[spec.h:]
            weights[rest] = 0.2 / (m - spec.h)
    s = float(np.sum(weights))
    if s <= 0:
        raise ValueError(f"split {spec.kind!r} produced a zero weight vector")
    return BudgetVector.of(total * weights / s)


@dataclass(frozen=True)
class OrderSpec:
    """Stream ordering regime: seeded shuffles or the adversarial order
    (most expensive queries first)."""

    kind: str = "random"
    n_shuffles: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("random", "worst_case"):
            raise ValueError(f"unknown order {self.kind!r}")
        if self.n_shuffles < 1:
            raise ValueError("n_shuffles must be >= 1")

    @property
    def instances(self) -> int:
        return self.n_shuffles if self.kind == "random" else 1


def order_stream(stream: Sequence[Query], kind: str, seed: int = 0) -> list[Query]:
    """Return ``stream`` in the requested arrival order.

    "random" is a seeded uniform shuffle.  "worst_case" sorts by the
    query's most expensive model, descending, with ties on query id.
    """
    if kind == "random":
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(stream))
        return [stream[i] for i in perm]
    if kind == "worst_case":
        return sorted(stream, key=lambda q: (-float(np.max(q.costs)), q.query_id))
    raise ValueError(f"unknown order {kind!r}")


class CachedSearcher:
    """Memoizing wrapper over a searcher.

    Estimates depend only on (embedding, k), so repeated episodes over
    the same stream reuse them.  Safe to share across threads once
    warmed; concurrent misses merely recompute the same value.
    """

    def __init__(self, inner: _VectorStore):
        self.inner = inner
        self._cache: dict = {}

    def search(self, embedding, k):
        return self.inner.search(embedding, k)

    def estimate(self, embedding, k):
        key = (embedding.tobytes(), k)
        hit = self._cache.get(key)
        if hit is None:
            hit = self.inner.estimate(embedding, k)
            self._cache[key] = hit
        return hit

    def warm(self, stream: Sequence[Query], k: int) -> None:
        for q in stream:
            self.estimate(q.embedding, k)


@dataclass(frozen=True)
class ExperimentPlan:
    """The experiment grid.

    ``algorithms`` may contain "ours" and any baseline kind.  ``volumes``
    optionally truncates the test stream to its first v queries (None
    keeps all).  ``seed`` feeds every derived random stream (episode
    seeds, shuffle orders, random splits) through stable mixing.
    """

    algorithms: tuple[str, ...] = ("ours",)
    budget_factors: tuple[float, ...] = (1.0,)
    split: SplitSpec = SplitSpec()
    order: OrderSpec = OrderSpec()
    seeds: tuple[int, ...] = (0,)
    volumes: tuple[int | None, ...] = (None,)
    alpha: float = 1e-4
    epsilon: float = 0.025
    k: int = 5
    admission_policy: str = "actual_cost"
    learner: LearnerConfig | None = None

    def __post_init__(self) -> None:
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {alg!r}; choose from {ALGORITHMS}")
        for f in self.budget_factors:
            if f <= 0:
                raise ValueError("budget factors must be positive")
        if not self.seeds:
            raise ValueError("at least one seed required")


@dataclass
class ExperimentReport:
    """Per-cell rows plus per-configuration aggregate rows."""

    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    oracle_rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    _CELL_FIELDS = ("algorithm", "budget_factor", "split", "order", "volume",
                    "seed", "shuffle", "status", "performance", "cost", "ppc",
                    "throughput", "relative_performance", "s_max", "error")
    _SUMMARY_FIELDS = ("algorithm", "budget_factor", "split", "order", "volume",
                       "n_runs", "performance_mean", "performance_std",
                       "cost_mean", "ppc_mean", "throughput_mean",
                       "relative_performance_mean")

    def to_json(self) -> str:
        return json.dumps({
            "meta": self.meta,
            "oracle_rows": self.oracle_rows,
            "summary": self.summary,
            "rows": self.rows,
        }, sort_keys=True, indent=2)

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self._SUMMARY_FIELDS), extrasaction="ignore")
        w.writeheader()
        for row in self.summary:
            w.writerow(row)
        return buf.getvalue()

    def to_long_csv(self) -> str:
        """One row per (cell, metric): plotting-friendly long format."""
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["algorithm", "budget_factor", "split", "order", "volume",
                    "seed", "shuffle", "metric", "value"])
        metrics = ("performance", "cost", "ppc", "throughput",
                   "relative_performance", "s_max")
        for row in self.rows:
            for metric in metrics:
                w.writerow([row["algorithm"], row["budget_factor"], row["split"],
                            row["order"], row["volume"], row["seed"],
                            row["shuffle"], metric, row.get(metric)])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def save_long_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_long_csv())


def _worker_count() -> int:
    raw = os.environ.get("BUDGET_ROUTER_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        n = min(8, os.cpu_count() or 1)
    return n


def _run_cell(alg: str, stream: list[Query], ann: CachedSearcher,
              exact: CachedSearcher, budgets: BudgetVector,
              plan: ExperimentPlan, seed: int) -> EpisodeLog:
    if alg == "ours":
        cfg = RouterConfig(alpha=plan.alpha, epsilon=plan.epsilon, k=plan.k,
                           seed=seed, admission_policy=plan.admission_policy,
                           learner=plan.learner)
        return run_episode(stream, ann, budgets, cfg)
    searcher = exact if alg in ("knn_perf", "knn_cost") else ann
    cfg = BaselineConfig(seed=seed, k=plan.k,
                         admission_policy=plan.admission_policy)
    return route_baseline(alg, stream, searcher, budgets, cfg)


def run_plan(plan: ExperimentPlan, manifest: DatasetManifest,
             index: AnnIndex | CachedSearcher | None = None,
             index_config: IndexConfig | None = None,
             exact: CachedSearcher | None = None) -> ExperimentReport:
    """Execute the full grid and aggregate the results.

    Builds (or reuses) the graph index over the manifest's historical
    pool, computes offline references once per budget configuration, and
    runs every cell of the grid in a worker pool.  Passing an already
    wrapped CachedSearcher (and optionally its exact twin) shares the
    feature cache across plans.
    """
    manifest.validate()
    if index is None:
        index = build_index(manifest.historical,
                            index_config or IndexConfig(k_neighbors=plan.k))
    ann = index if isinstance(index, CachedSearcher) else CachedSearcher(index)
    distance = ann.inner.config.distance if hasattr(ann.inner, "config") \
        else "euclidean"
    if exact is None:
        exact = CachedSearcher(ExactIndex(manifest.historical, distance=distance))
    stats = historical_stats(manifest.historical)

    needs_exact = any(a in ("knn_perf", "knn_cost") for a in plan.algorithms)

    # enumerate grid cells deterministically
    cells = []
    for volume in plan.volumes:
        stream_full = manifest.test_queries if volume is None \
            else manifest.test_queries[:volume]
        if not stream_full:
            raise ValueError(f"volume {volume} yields an empty stream")
        for factor in plan.budget_factors:
            for shuffle in range(plan.order.instances):
                for seed in plan.seeds:
                    for alg in plan.algorithms:
                        cells.append((volume, factor, shuffle, seed, alg))

    # Shared per-cell inputs.  The stream depends on (volume, shuffle);
    # budgets and offline references are permutation invariant, so they
    # key on (volume, factor) only, plus the seed for the random split
    # (whose weight draw is per seed and shared across factors, keeping
    # the references comparable along the budget-factor axis).
    base_streams: dict = {}
    streams: dict = {}
    budgets_by: dict = {}
    oracle_by: dict = {}
    oracle_rows: list[dict] = []

    def budget_key_of(volume, factor, seed):
        if plan.split.kind == "random":
            return (volume, factor, seed)
        return (volume, factor)

    for volume, factor, shuffle, seed, alg in cells:
        if volume not in base_streams:
            base = manifest.test_queries if volume is None \
                else manifest.test_queries[:volume]
            base_streams[volume] = base
            ann.warm(base, plan.k)
            if needs_exact:
                exact.warm(base, plan.k)
        stream_key = (volume, shuffle)
        if stream_key not in streams:
            order_seed = _derive_seed(17, 0 if volume is None else volume, shuffle)
            streams[stream_key] = order_stream(base_streams[volume],
                                               plan.order.kind, order_seed)
        bkey = budget_key_of(volume, factor, seed)
        if bkey not in budgets_by:
            total = base_budget(base_streams[volume]) * factor
            rng = np.random.default_rng(_derive_seed(23, seed)) \
                if plan.split.kind == "random" else None
            budgets_by[bkey] = split_budget(total, plan.split, stats, rng)
        if bkey not in oracle_by:
            optima = offline_optima(base_streams[volume], ann, budgets_by[bkey],
                                    k=plan.k)
            oracle_by[bkey] = optima
            shared = {
                "budget_factor": factor,
                "split": plan.split.kind,
                "order": plan.order.kind,
                "volume": volume,
                "seed": seed if plan.split.kind == "random" else None,
                "method": optima.method,
            }
            oracle_rows.append(dict(shared, kind="optimum",
                                    value=optima.true_optimum,
                                    lp_integral_gap=optima.gap,
                                    binding=list(optima.binding_true)))
            oracle_rows.append(dict(shared, kind="approx_optimum",
                                    value=optima.estimated_optimum, method="lp",
                                    binding=list(optima.binding_estimated)))

    def execute(cell):
        volume, factor, shuffle, seed, alg = cell
        stream = streams[(volume, shuffle)]
        bkey = budget_key_of(volume, factor, seed)
        budgets = budgets_by[bkey]
        optima = oracle_by[bkey]
        row = {
            "algorithm": alg, "budget_factor": factor, "split": plan.split.kind,
            "order": plan.order.kind, "volume": volume, "seed": seed,
            "shuffle": shuffle, "status": "ok", "error": None,
        }
        try:
            episode_seed = _derive_seed(31, seed, shuffle, ALGORITHMS.index(alg))
            log = _run_cell(alg, stream, ann, exact, budgets, plan, episode_seed)
            metrics = compute_metrics(log, optima.estimated_optimum)
            row.update(metrics.as_dict())
        except Exception as exc:  # isolate cell failures in the report
            row["status"] = "failed"
            row["error"] = f"{type(exc).__name__}: {exc}"
            for key in ("performance", "cost", "ppc", "throughput",
                        "relative_performance", "s_max"):
                row[key] = None
        return row

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        rows = list(pool.map(execute, cells))

    summary = _summarize(rows)
    report = ExperimentReport(rows=rows, summary=summary, oracle_rows=oracle_rows)
    report.meta = {
        "algorithms": list(plan.algorithms),
        "budget_factors": list(plan.budget_factors),
        "split": {"kind": plan.split.kind, "h": plan.split.h},
        "order": {"kind": plan.order.kind, "n_shuffles": plan.order.n_shuffles},
        "seeds": list(plan.seeds),
        "volumes": list(plan.volumes),
        "alpha": plan.alpha,
        "epsilon": plan.epsilon,
        "k": plan.k,
        "admission_policy": plan.admission_policy,
        "n_historical": len(manifest.historical),
        "n_test": len(manifest.test_queries),
    }
    return report


def _summarize(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for row in rows:
        key = (row["algorithm"], row["budget_factor"], row["split"],
               row["order"], row["volume"])
        groups.setdefault(key, []).append(row)
    out = []
    for key in groups:
        ok = [r for r in groups[key] if r["status"] == "ok"]
        entry = {
            "algorithm": key[0], "budget_factor": key[1], "split": key[2],
            "order": key[3], "volume": key[4], "n_runs": len(ok),
        }
        for metric in ("performance", "cost", "ppc", "throughput",
                       "relative_performance"):
            vals = [r[metric] for r in ok if r[metric] is not None]
            entry[f"{metric}_mean"] = float(np.mean(vals)) if vals else None
            if metric == "performance":
                entry["performance_std"] = float(np.std(vals)) if vals else None
        out.append(entry)
    return out


def realized_prefix_value(log: EpisodeLog, budgets: BudgetVector,
                          alpha: float) -> np.ndarray:
    """Diagnostic: per model, the scaled score mass of the longest prefix
    of its executed queries that fits inside the model's budget alone."""
    m = budgets.n_models
    out = np.zeros(m)
    spent = np.zeros(m)
    for rec in log.records:
        if not rec.executed or rec.model is None:
            continue
        i = rec.model
        if spent[i] + rec.charge <= budgets.per_model[i] + 1e-12:
            spent[i] += rec.charge
            out[i] += alpha * rec.score
    return out
