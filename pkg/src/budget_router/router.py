"""Online episode execution.

An episode walks a query stream once, in order, against fixed per-model
budgets.  The engine's own algorithm runs in two stages:

1. Observation.  The first ceil(epsilon * n) queries are routed by a
   uniform draw over "skip" plus the M models.  Their estimated
   features are recorded whether or not they execute; skipped queries
   go to the waiting queue, drawn ones run under the admission policy
   and spend real budget.
2. Learned routing.  The recorded prefix fits per-model pressure
   weights (see dual_learner), and every remaining query goes to the
   model maximizing alpha * score_hat - gamma * cost_hat.  When the
   winner cannot pay for the query, the query joins the waiting queue.

Queued queries are terminal for the episode: they earn nothing and are
never retried.  Admission comes in two flavors: "actual_cost" executes
only when the realized charge fits the remaining budget (so budgets are
never exceeded), while "estimated_cost" admits on the predicted charge
and clamps the balance at zero, modeling a caller who only knows
predictions up front.

Determinism: all randomness flows from one seed through fixed-order
draws, so identical inputs and seeds reproduce the episode log byte for
byte.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ann_index import _VectorStore
from .core import BudgetVector, DecisionRecord, EpisodeLog, Query
from .dual_learner import (DualWeights, LearnerConfig, ObservedBatch,
                           learn_weights, score_models)

__all__ = [
    "ADMISSION_POLICIES",
    "RouterConfig",
    "RouterState",
    "run_episode",
]

ADMISSION_POLICIES = ("actual_cost", "estimated_cost")


@dataclass(frozen=True)
class RouterConfig:
    """Episode settings.

    ``alpha`` scales estimated scores against pressure weights,
    ``epsilon`` sets the observed fraction, ``k`` the neighbor count for
    feature estimation.  ``gamma_override`` bypasses learning with fixed
    weights (diagnostics); ``learner`` configures the fit otherwise.
    """

    alpha: float = 1e-4
    epsilon: float = 0.025
    k: int = 5
    seed: int = 0
    admission_policy: str = "actual_cost"
    learner: LearnerConfig | None = None
    gamma_override: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.admission_policy not in ADMISSION_POLICIES:
            raise ValueError(
                f"unknown admission policy {self.admission_policy!r}; "
                f"choose one of {ADMISSION_POLICIES}"
            )

    def learner_config(self) -> LearnerConfig:
        base = self.learner or LearnerConfig(alpha=self.alpha)
        if base.alpha != self.alpha:
            raise ValueError("learner alpha must match router alpha")
        return base


class RouterState:
    """Mutable episode state: budget balances, the waiting queue, and the
    decision log.  Both the engine and every baseline route through
    ``attempt`` and ``enqueue`` so admission semantics never diverge."""

    def __init__(self, budgets: BudgetVector, admission_policy: str):
        if admission_policy not in ADMISSION_POLICIES:
            raise ValueError(f"unknown admission policy {admission_policy!r}")
        self.budgets = budgets
        self.remaining = budgets.per_model.astype(np.float64).copy()
        self.admission_policy = admission_policy
        self.queue: list[str] = []
        self.records: list[DecisionRecord] = []

    def attempt(self, query: Query, model: int, stage: str,
                estimated_cost: float | None = None) -> bool:
        """Try to run ``query`` on ``model``; on rejection the query is
        queued.  Returns True when the query executed."""
        true_cost = float(query.costs[model])
        if self.admission_policy == "actual_cost":
            admit = true_cost <= self.remaining[model]
        else:
            if estimated_cost is None:
                raise ValueError("estimated_cost required under estimated_cost admission")
            admit = estimated_cost <= self.remaining[model]
        if admit:
            self.remaining[model] = max(self.remaining[model] - true_cost, 0.0) \
                if self.admission_policy == "estimated_cost" \
                else self.remaining[model] - true_cost
            self.records.append(DecisionRecord(
                query_id=query.query_id, stage=stage, model=model,
                executed=True, charge=true_cost, score=float(query.scores[model])))
            return True
        self.queue.append(query.query_id)
        self.records.append(DecisionRecord(
            query_id=query.query_id, stage=stage, model=model,
            executed=False, charge=0.0, score=0.0))
        return False

    def enqueue(self, query: Query, stage: str) -> None:
        self.queue.append(query.query_id)
        self.records.append(DecisionRecord(
            query_id=query.query_id, stage=stage, model=None,
            executed=False, charge=0.0, score=0.0))

    def finish(self, meta: dict) -> EpisodeLog:
        return EpisodeLog(records=self.records,
                          remaining=self.remaining.copy(), meta=meta)


def run_episode(stream: Sequence[Query], searcher: _VectorStore,
                budgets: BudgetVector, config: RouterConfig) -> EpisodeLog:
    """Route ``stream`` with the two-stage pressure-weighted algorithm.

    ``searcher`` provides neighbor-averaged feature estimates (graph or
    exact).  Requires epsilon * len(stream) >= 1 so the observation
    stage is nonempty.
    """
    n = len(stream)
    if n == 0:
        raise ValueError("stream is empty")
    m = budgets.n_models
    if config.epsilon * n < 1:
        raise ValueError(
            f"epsilon * stream length = {config.epsilon * n:.3f} < 1; "
            "the observation stage would be empty"
        )
    n_observe = math.ceil(config.epsilon * n)

    ss = np.random.SeedSequence(config.seed)
    child_obs, child_learn = ss.spawn(2)
    rng_obs = np.random.default_rng(child_obs)

    state = RouterState(budgets, config.admission_policy)
    observed_ids: list[str] = []
    observed_scores = np.empty((n_observe, m))
    observed_costs = np.empty((n_observe, m))

    for idx in range(n_observe):
        query = stream[idx]
        est = searcher.estimate(query.embedding, config.k)
        observed_ids.append(query.query_id)
        observed_scores[idx] = est.scores
        observed_costs[idx] = est.costs
        draw = int(rng_obs.integers(0, m + 1))
        if draw == 0:
            state.enqueue(query, "observe")
        else:
            model = draw - 1
            state.attempt(query, model, "observe",
                          estimated_cost=float(est.costs[model]))

    batch = ObservedBatch(
        query_ids=observed_ids,
        score_hat=observed_scores,
        cost_hat=observed_costs,
        epsilon=config.epsilon,
        budgets=budgets,
    )
    if config.gamma_override is not None:
        weights = DualWeights(gamma=np.asarray(config.gamma_override, dtype=np.float64),
                              alpha=config.alpha)
        learn_meta: dict = {"overridden": True}
    else:
        lc = config.learner_config()
        lc = LearnerConfig(alpha=lc.alpha, restarts=lc.restarts,
                           iterations=lc.iterations, step_scale=lc.step_scale,
                           clamp_negative=lc.clamp_negative,
                           seed=int(child_learn.generate_state(1)[0]))
        result = learn_weights(batch, lc)
        weights = result.weights
        learn_meta = {
            "overridden": False,
            "objective": result.objective,
            "iterations": result.iterations,
            "converged": result.converged,
        }

    for idx in range(n_observe, n):
        query = stream[idx]
        est = searcher.estimate(query.embedding, config.k)
        _, winner = score_models(est.scores, est.costs, weights)
        state.attempt(query, winner, "route",
                      estimated_cost=float(est.costs[winner]))

    meta = {
        "algorithm": "pressure_weighted",
        "alpha": config.alpha,
        "epsilon": config.epsilon,
        "k": config.k,
        "seed": config.seed,
        "admission_policy": config.admission_policy,
        "n_observed": n_observe,
        "gamma": [float(v) for v in weights.gamma],
        "learner": learn_meta,
    }
    return state.finish(meta)
