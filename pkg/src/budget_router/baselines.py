"""Reference routing policies.

All baselines walk the stream in order and go through the same
RouterState admission and queue semantics as the engine, so differences
in outcomes come from decisions alone.  Kinds:

random         uniform model choice per query
greedy_perf    highest neighbor-estimated score (graph searcher)
knn_perf       same rule on exact nearest neighbors
greedy_cost    largest predicted post-charge headroom, i.e. the model
               maximizing remaining budget minus estimated cost
knn_cost       same rule on exact nearest neighbors
batch_split    buffer 256 queries, solve the fractional allocation over
               the batch against the current balances, route each query
               to its heaviest fractional assignment
external_perf  scores read from a prediction file, highest wins
external_cost  costs read from a prediction file, largest headroom wins

The knn_* kinds expect the exact searcher; greedy_* and batch_split
accept whichever searcher the caller trusts for estimates.  The
external kinds need a prediction table and fail without one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ann_index import _VectorStore
from .core import BudgetVector, EpisodeLog, Query
from .oracle import AllocationProblem, solve_relaxed_lp
from .router import ADMISSION_POLICIES, RouterState

__all__ = [
    "BASELINE_KINDS",
    "BaselineConfig",
    "load_predictions",
    "route_baseline",
]

BASELINE_KINDS = (
    "random",
    "greedy_perf",
    "greedy_cost",
    "knn_perf",
    "knn_cost",
    "batch_split",
    "external_perf",
    "external_cost",
)


@dataclass(frozen=True)
class BaselineConfig:
    seed: int = 0
    k: int = 5
    admission_policy: str = "actual_cost"
    batch_size: int = 256

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.admission_policy not in ADMISSION_POLICIES:
            raise ValueError(f"unknown admission policy {self.admission_policy!r}")


def load_predictions(path, n_models: int) -> dict[str, np.ndarray]:
    """Read a prediction table: CSV columns query_id, v_0..v_{M-1}."""
    table: dict[str, np.ndarray] = {}
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or head[0].strip() != "query_id":
            raise ValueError(f"{path}: first column must be query_id")
        if len(head) != n_models + 1:
            raise ValueError(
                f"{path}: expected {n_models} value columns, found {len(head) - 1}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                table[row[0].strip()] = np.array([float(v) for v in row[1:]],
                                                 dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from exc
    return table


def _require_predictions(predictions, stream: Sequence[Query], kind: str):
    if predictions is None:
        raise ValueError(f"baseline {kind!r} needs a prediction table")
    missing = [q.query_id for q in stream if q.query_id not in predictions]
    if missing:
        raise ValueError(
            f"prediction table lacks {len(missing)} stream queries "
            f"(first missing: {missing[0]!r})"
        )


def route_baseline(kind: str, stream: Sequence[Query], searcher: _VectorStore,
                   budgets: BudgetVector, config: BaselineConfig | None = None,
                   predictions: dict[str, np.ndarray] | None = None) -> EpisodeLog:
    """Route ``stream`` with baseline ``kind`` under shared admission."""
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}; choose one of {BASELINE_KINDS}")
    config = config or BaselineConfig()
    state = RouterState(budgets, config.admission_policy)
    m = budgets.n_models
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))

    if kind in ("external_perf", "external_cost"):
        _require_predictions(predictions, stream, kind)

    if kind == "batch_split":
        _route_batched(stream, searcher, state, config)
    else:
        for query in stream:
            est = None
            if kind in ("greedy_perf", "greedy_cost", "knn_perf", "knn_cost") \
                    or config.admission_policy == "estimated_cost":
                est = searcher.estimate(query.embedding, config.k)
            if kind == "random":
                model = int(rng.integers(0, m))
            elif kind in ("greedy_perf", "knn_perf"):
                model = int(np.argmax(est.scores))
            elif kind in ("greedy_cost", "knn_cost"):
                model = int(np.argmax(state.remaining - est.costs))
            elif kind == "external_perf":
                model = int(np.argmax(predictions[query.query_id]))
            else:  # external_cost
                model = int(np.argmax(state.remaining - predictions[query.query_id]))
            if kind == "external_cost":
                est_cost = float(predictions[query.query_id][model])
            else:
                est_cost = float(est.costs[model]) if est is not None else None
            state.attempt(query, model, "route", estimated_cost=est_cost)

    meta = {
        "algorithm": kind,
        "seed": config.seed,
        "k": config.k,
        "admission_policy": config.admission_policy,
    }
    if kind == "batch_split":
        meta["batch_size"] = config.batch_size
    return state.finish(meta)


def _route_batched(stream: Sequence[Query], searcher: _VectorStore,
                   state: RouterState, config: BaselineConfig) -> None:
    """batch_split: solve the fractional allocation per buffered batch
    against the balances at flush time, then admit sequentially."""
    buffer: list[tuple[Query, np.ndarray, np.ndarray]] = []

    def flush() -> None:
        if not buffer:
            return
        values = np.stack([e for _, e, _ in buffer])
        costs = np.stack([e for _, _, e in buffer])
        problem = AllocationProblem(
            values=values, costs=costs,
            budgets=BudgetVector.of(np.maximum(state.remaining, 0.0)))
        sol = solve_relaxed_lp(problem)
        for row, (query, _, cost_hat) in enumerate(buffer):
            frac = sol.x[row]
            if float(np.max(frac)) <= 1e-9:
                state.enqueue(query, "route")
                continue
            model = int(np.argmax(frac))
            state.attempt(query, model, "route",
                          estimated_cost=float(cost_hat[model]))
        buffer.clear()

    for query in stream:
        est = searcher.estimate(query.embedding, config.k)
        buffer.append((query, est.scores, est.costs))
        if len(buffer) >= config.batch_size:
            flush()
    flush()
