"""Domain types shared across the routing engine.

Scores and costs follow one convention everywhere: for a catalog of M
models, per-query vectors are indexed by model position 0..M-1, scores
measure answer quality (higher is better, typically in [0, 1]) and costs
are currency amounts (nonnegative).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ModelSpec",
    "Query",
    "BudgetVector",
    "DecisionRecord",
    "EpisodeLog",
    "MetricsReport",
    "compute_cost",
    "compute_metrics",
]


@dataclass(frozen=True)
class ModelSpec:
    """One model in the catalog.

    Prices are currency per single token, so a rate quoted per million
    tokens must be divided by 1e6 before it lands here.
    """

    name: str
    index: int
    input_price: float
    output_price: float

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"model {self.name!r}: index must be >= 0")
        if self.input_price < 0 or self.output_price < 0:
            raise ValueError(f"model {self.name!r}: prices must be >= 0")


@dataclass(frozen=True)
class Query:
    """A routable query with its simulation ground truth.

    ``scores[i]`` and ``costs[i]`` are the quality and charge realized if
    the query runs on model i.  Token counts are optional; when present
    alongside a catalog they must reproduce ``costs`` via compute_cost.
    """

    query_id: str
    embedding: np.ndarray
    scores: np.ndarray
    costs: np.ndarray
    input_tokens: int | None = None
    output_tokens: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "embedding", np.asarray(self.embedding, dtype=np.float64))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        object.__setattr__(self, "costs", np.asarray(self.costs, dtype=np.float64))
        if self.scores.shape != self.costs.shape:
            raise ValueError(
                f"query {self.query_id!r}: scores shape {self.scores.shape} "
                f"!= costs shape {self.costs.shape}"
            )
        if np.any(self.costs < 0):
            raise ValueError(f"query {self.query_id!r}: negative cost")

    @property
    def n_models(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True)
class BudgetVector:
    """Per-model budgets plus their total.

    The redundant total is kept so downstream reports can state what was
    allocated even after budgets have been scaled or split; it must match
    the sum of the per-model entries to within 1e-9 relative.
    """

    per_model: np.ndarray
    total: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_model", np.asarray(self.per_model, dtype=np.float64))
        if np.any(self.per_model < 0):
            raise ValueError("budgets must be nonnegative")
        s = float(np.sum(self.per_model))
        if not math.isclose(s, self.total, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"budget total {self.total} does not match sum {s}")

    @classmethod
    def of(cls, per_model: Sequence[float] | np.ndarray) -> "BudgetVector":
        arr = np.asarray(per_model, dtype=np.float64)
        return cls(per_model=arr, total=float(np.sum(arr)))

    def scaled(self, factor: float) -> "BudgetVector":
        if factor < 0:
            raise ValueError("budget factor must be >= 0")
        return BudgetVector.of(self.per_model * factor)

    @property
    def n_models(self) -> int:
        return int(self.per_model.shape[0])


@dataclass(frozen=True)
class DecisionRecord:
    """What happened to one query.

    ``stage`` is "observe" during the exploration prefix and "route"
    afterwards (baselines have no exploration, so all their records say
    "route").  ``model`` is the model the engine tried (None when the
    query was sent straight to the waiting queue).  ``executed`` is False
    whenever the query ended up queued, in which case charge and score
    are zero.
    """

    query_id: str
    stage: str
    model: int | None
    executed: bool
    charge: float
    score: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "decision",
                "query_id": self.query_id,
                "stage": self.stage,
                "model": self.model,
                "executed": self.executed,
                "charge": self.charge,
                "score": self.score,
            },
            sort_keys=True,
        )


@dataclass
class EpisodeLog:
    """Ordered decision records for one routed stream.

    Invariant: exactly one record per query of the stream, in arrival
    order.  ``remaining`` holds the terminal per-model budget balances.
    ``meta`` carries run descriptors (seed, learned weights, config echo)
    and is serialized in the trailing summary line.
    """

    records: list[DecisionRecord] = field(default_factory=list)
    remaining: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def executed_records(self) -> list[DecisionRecord]:
        return [r for r in self.records if r.executed]

    def queued_ids(self) -> list[str]:
        return [r.query_id for r in self.records if not r.executed]

    def to_jsonl(self) -> str:
        lines = [r.to_json() for r in self.records]
        summary = {
            "kind": "summary",
            "remaining": None if self.remaining is None else [float(v) for v in self.remaining],
            "meta": self.meta,
        }
        lines.append(json.dumps(summary, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeLog":
        log = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.get("kind")
            if kind == "decision":
                log.records.append(
                    DecisionRecord(
                        query_id=obj["query_id"],
                        stage=obj["stage"],
                        model=obj["model"],
                        executed=obj["executed"],
                        charge=obj["charge"],
                        score=obj["score"],
                    )
                )
            elif kind == "summary":
                if obj.get("remaining") is not None:
                    log.remaining = np.asarray(obj["remaining"], dtype=np.float64)
                log.meta = obj.get("meta", {})
            else:
                raise ValueError(f"line {lineno}: unknown record kind {kind!r}")
        return log

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate outcome of one episode.

    performance    sum of realized scores over executed queries
    cost           sum of realized charges
    ppc            performance per unit cost (None when cost is 0)
    throughput     number of executed queries
    relative_performance
                   performance divided by the offline optimum computed on
                   estimated features (None when that reference is absent
                   or nonpositive)
    s_max          largest single realized score in the episode
    """

    performance: float
    cost: float
    ppc: float | None
    throughput: int
    relative_performance: float | None
    s_max: float

    def as_dict(self) -> dict:
        return {
            "performance": self.performance,
            "cost": self.cost,
            "ppc": self.ppc,
            "throughput": self.throughput,
            "relative_performance": self.relative_performance,
            "s_max": self.s_max,
        }


def compute_cost(model: ModelSpec, input_tokens: int, output_tokens: int) -> float:
    """Charge for running a query of ``input_tokens`` prompt tokens that
    produced ``output_tokens`` answer tokens on ``model``."""
    if input_tokens < 0 or output_tokens < 0:
        raise ValueError("token counts must be >= 0")
    return model.input_price * input_tokens + model.output_price * output_tokens


def compute_metrics(log: EpisodeLog, approx_optimum: float | None = None) -> MetricsReport:
    """Reduce an episode log to the summary metrics.

    Only executed queries earn score, incur cost, and count toward
    throughput; queued queries contribute nothing.  The reduction is a
    plain sum, so it is invariant (up to float reordering) under any
    permutation of the records.
    """
    performance = 0.0
    cost = 0.0
    throughput = 0
    s_max = 0.0
    for rec in log.records:
        if not rec.executed:
            continue
        performance += rec.score
        cost += rec.charge
        throughput += 1
        if rec.score > s_max:
            s_max = rec.score
    ppc = performance / cost if cost > 0 else None
    rp = None
    if approx_optimum is not None and approx_optimum > 0:
        rp = performance / approx_optimum
    return MetricsReport(
        performance=performance,
        cost=cost,
        ppc=ppc,
        throughput=throughput,
        relative_performance=rp,
        s_max=s_max,
    )
