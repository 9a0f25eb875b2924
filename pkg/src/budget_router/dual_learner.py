"""Learning per-model budget pressure weights from an observed prefix.

The router watches the first fraction of the stream, recording estimated
per-model scores and costs for each observed query.  From that sample it
fits one nonnegative weight per model by minimizing the sampled pressure
objective

    F(gamma) = epsilon * sum_i gamma_i * B_i
             + sum_{observed j} max_i (alpha * score_hat_ij - gamma_i * cost_hat_ij)

which trades the value of keeping budget slack (first term) against the
best achievable scaled margin per query (second term).  F is convex and
piecewise linear in gamma, so it is minimized by projected subgradient
descent with diminishing steps and several restarts; the best iterate
ever visited is returned.

By default the inner max is used exactly as written, which lets a
query's best margin go negative.  Setting ``clamp_negative`` floors the
inner term at zero; that variant is a valid lower-bounding objective for
the fractional allocation optimum at epsilon = 1 (a weak-duality
witness), at the price of a flat region wherever every margin is
negative.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import BudgetVector

__all__ = [
    "DualWeights",
    "ObservedBatch",
    "LearnerConfig",
    "LearnResult",
    "partial_dual",
    "partial_dual_subgradient",
    "learn_weights",
    "score_models",
    "gamma_upper_bound",
]


@dataclass(frozen=True)
class DualWeights:
    """Per-model pressure weights together with the score scale alpha."""

    gamma: np.ndarray
    alpha: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64))
        if np.any(self.gamma < 0):
            raise ValueError("weights must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def to_json(self) -> str:
        return json.dumps({
            "alpha": self.alpha,
            "gamma": [float(v) for v in self.gamma],
        }, sort_keys=True)


@dataclass
class ObservedBatch:
    """Feature estimates gathered during the observation stage.

    ``score_hat`` and ``cost_hat`` are (n_observed, n_models) arrays in
    observation order; ``epsilon`` is the configured observation
    fraction and ``budgets`` the full per-model budgets.
    """

    query_ids: list[str]
    score_hat: np.ndarray
    cost_hat: np.ndarray
    epsilon: float
    budgets: BudgetVector

    def __post_init__(self) -> None:
        self.score_hat = np.asarray(self.score_hat, dtype=np.float64)
        self.cost_hat = np.asarray(self.cost_hat, dtype=np.float64)
        if self.score_hat.ndim != 2 or self.score_hat.shape != self.cost_hat.shape:
            raise ValueError("score_hat and cost_hat must be matching 2d arrays")
        if len(self.query_ids) != self.score_hat.shape[0]:
            raise ValueError("one query id per observed row required")
        if self.score_hat.shape[0] == 0:
            raise ValueError("observed batch is empty")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.budgets.n_models != self.score_hat.shape[1]:
            raise ValueError("budget vector does not match model count")

    @property
    def n_models(self) -> int:
        return int(self.score_hat.shape[1])


@dataclass(frozen=True)
class LearnerConfig:
    """Optimizer settings for learn_weights.

    ``restarts`` runs of ``iterations`` projected subgradient steps each
    with step size ``step_scale * diameter / sqrt(t)``.  The first
    restart starts at the origin, the next ones at random points of the
    search box, and the final ones re-anneal from the incumbent best
    with geometrically reduced steps, which is what pushes the objective
    to fine tolerance on piecewise-linear landscapes.
    """

    alpha: float = 1e-4
    restarts: int = 8
    iterations: int = 500
    step_scale: float = 0.5
    clamp_negative: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.restarts < 1 or self.iterations < 1:
            raise ValueError("restarts and iterations must be >= 1")


@dataclass(frozen=True)
class LearnResult:
    weights: DualWeights
    objective: float
    iterations: int
    converged: bool

    def to_json(self) -> str:
        return json.dumps({
            "alpha": self.weights.alpha,
            "gamma": [float(v) for v in self.weights.gamma],
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
        }, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def _margins(gamma: np.ndarray, alpha: float, batch: ObservedBatch) -> np.ndarray:
    return alpha * batch.score_hat - batch.cost_hat * gamma[None, :]


def partial_dual(gamma: np.ndarray, alpha: float, batch: ObservedBatch,
                 clamp_negative: bool = False) -> float:
    """Sampled pressure objective F at ``gamma``."""
    gamma = np.asarray(gamma, dtype=np.float64)
    best = _margins(gamma, alpha, batch).max(axis=1)
    if clamp_negative:
        best = np.maximum(best, 0.0)
    budget_term = batch.epsilon * float(np.dot(gamma, batch.budgets.per_model))
    return budget_term + float(np.sum(best))


def partial_dual_subgradient(gamma: np.ndarray, alpha: float, batch: ObservedBatch,
                             clamp_negative: bool = False) -> np.ndarray:
    """A subgradient of F at ``gamma``.

    Component i is epsilon * B_i minus the summed estimated cost of the
    observed queries whose inner max is attained by model i (ties going
    to the lowest model index).  With clamping, queries whose best
    margin is negative drop out of the sum.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    marg = _margins(gamma, alpha, batch)
    winners = np.argmax(marg, axis=1)
    active = np.ones(len(winners), dtype=bool)
    if clamp_negative:
        active = marg[np.arange(len(winners)), winners] > 0
    grad = batch.epsilon * batch.budgets.per_model.copy()
    np.subtract.at(grad, winners[active],
                   batch.cost_hat[np.arange(len(winners))[active], winners[active]])
    return grad


def gamma_upper_bound(alpha: float, batch: ObservedBatch) -> float:
    """Search-box edge for initialization and audit grids.

    At gamma_i = alpha * max(score_hat) / min(positive cost_hat) model
    i's margin is nonpositive on every observed query, so pushing any
    weight past this value only pays budget for no routing change.
    """
    max_score = float(np.max(batch.score_hat)) if batch.score_hat.size else 0.0
    pos = batch.cost_hat[batch.cost_hat > 0]
    if max_score <= 0 or pos.size == 0:
        return 1.0
    return alpha * max_score / float(np.min(pos))


def learn_weights(batch: ObservedBatch, config: LearnerConfig | None = None
                  ) -> LearnResult:
    """Fit the pressure weights by multi-start projected subgradient
    descent, returning the best iterate ever evaluated."""
    config = config or LearnerConfig()
    alpha = config.alpha
    m = batch.n_models
    box = gamma_upper_bound(alpha, batch)
    rng = np.random.default_rng(config.seed)

    n_anneal = config.restarts // 2
    n_random = config.restarts - n_anneal - 1

    best_gamma = np.zeros(m)
    best_obj = partial_dual(best_gamma, alpha, batch, config.clamp_negative)
    evals = 1
    history: list[float] = [best_obj]

    def run_restart(start: np.ndarray, scale: float) -> None:
        nonlocal best_gamma, best_obj, evals
        x = start.copy()
        for t in range(1, config.iterations + 1):
            g = partial_dual_subgradient(x, alpha, batch, config.clamp_negative)
            norm = float(np.linalg.norm(g))
            if norm == 0.0:
                obj = partial_dual(x, alpha, batch, config.clamp_negative)
                evals += 1
                history.append(min(history[-1], obj))
                if obj < best_obj:
                    best_obj, best_gamma = obj, x.copy()
                break
            step = scale / math.sqrt(t)
            x = np.maximum(x - step * g / norm, 0.0)
            obj = partial_dual(x, alpha, batch, config.clamp_negative)
            evals += 1
            history.append(min(history[-1], obj))
            if obj < best_obj:
                best_obj, best_gamma = obj, x.copy()

    base_step = config.step_scale * box * math.sqrt(m)
    run_restart(np.zeros(m), base_step)
    for _ in range(n_random):
        run_restart(rng.uniform(0.0, box, size=m), base_step)
    for k in range(n_anneal):
        run_restart(best_gamma, base_step * (0.25 ** (k + 1)))

    tail = max(1, len(history) // 10)
    improvement = history[-tail] - history[-1]
    converged = improvement <= 1e-9 * (1.0 + abs(history[-1]))
    return LearnResult(
        weights=DualWeights(gamma=best_gamma, alpha=alpha),
        objective=best_obj,
        iterations=evals,
        converged=converged,
    )


def score_models(score_hat: np.ndarray, cost_hat: np.ndarray,
                 weights: DualWeights) -> tuple[np.ndarray, int]:
    """Pressure-adjusted routing scores and the chosen model.

    Returns (alpha * score_hat - cost_hat * gamma, argmax index); ties
    resolve to the lowest model index.
    """
    scores = weights.alpha * np.asarray(score_hat, dtype=np.float64) \
        - np.asarray(cost_hat, dtype=np.float64) * weights.gamma
    return scores, int(np.argmax(scores))
