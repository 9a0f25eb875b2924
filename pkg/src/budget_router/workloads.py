"""Synthetic benchmark workloads.

The generator builds a clustered embedding space in which both quality
and cost have cluster-level structure a neighbor-based estimator can
actually recover:

* models are ordered from cheap to expensive with mildly rising base
  quality, mirroring public price tables where cost spans two orders of
  magnitude but quality does not;
* every cluster has a "specialist" model, biased toward the cheap end,
  whose quality jumps on that cluster, so the best value model differs
  by region of the space;
* every (cluster, model) pair carries a verbosity multiplier on cost,
  so which model is cheap for a query also differs by region;
* on top of the cluster-level signal, each record's scores and costs
  get independent multiplicative noise of relative size ``delta``,
  which is the knob controlling how closely neighbors resemble each
  other.

Records are tagged with their cluster in provenance for debugging, but
nothing downstream reads it.
"""
from __future__ import annotations

import numpy as np

from .core import ModelSpec, Query
from .ingest import DatasetManifest, HistoricalRecord

__all__ = ["synthetic_workload"]


def synthetic_workload(n_historical: int = 12000, n_test: int = 5000,
                       n_models: int = 5, dim: int = 32, n_clusters: int = 20,
                       delta: float = 0.1, seed: int = 0) -> DatasetManifest:
    """Generate a clustered dataset with ``n_historical`` pool records
    and ``n_test`` routable queries."""
    if n_historical < 1 or n_test < 1:
        raise ValueError("need at least one historical and one test record")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    rng = np.random.default_rng(seed)

    # cheap-to-expensive cost scales and mildly rising base quality
    cost_scale = 1e-4 * np.array([1.0, 3.0, 8.0, 25.0, 80.0])[:n_models] \
        if n_models <= 5 else 1e-4 * np.logspace(0, 1.9, n_models)
    base_quality = np.linspace(0.42, 0.82, n_models)

    centers = rng.normal(0.0, 4.0, size=(n_clusters, dim))
    specialist_p = np.linspace(n_models, 1, n_models, dtype=np.float64)
    specialist_p /= specialist_p.sum()
    specialists = rng.choice(n_models, size=n_clusters, p=specialist_p)
    quality = np.clip(
        base_quality[None, :] + rng.normal(0.0, 0.05, size=(n_clusters, n_models)),
        0.05, 0.92)
    quality[np.arange(n_clusters), specialists] = np.clip(
        quality[np.arange(n_clusters), specialists] + 0.25, 0.05, 0.97)
    verbosity = np.exp(rng.normal(0.0, 0.45, size=(n_clusters, n_models)))

    def make_records(count: int, prefix: str):
        clusters = rng.integers(0, n_clusters, size=count)
        emb = centers[clusters] + rng.normal(0.0, 0.9, size=(count, dim))
        length = np.exp(rng.normal(0.0, 0.35, size=count))
        d_noise = 1.0 + delta * rng.uniform(-1.0, 1.0, size=(count, n_models))
        g_noise = 1.0 + delta * rng.uniform(-1.0, 1.0, size=(count, n_models))
        scores = np.clip(quality[clusters] * d_noise, 0.01, 1.0)
        costs = cost_scale[None, :] * verbosity[clusters] * length[:, None] * g_noise
        width = len(str(max(count - 1, 1)))
        out = []
        for idx in range(count):
            out.append((f"{prefix}{idx:0{width}d}", emb[idx], scores[idx], costs[idx]))
        return out

    historical = [HistoricalRecord(qid, e, s, c)
                  for qid, e, s, c in make_records(n_historical, "h")]
    test = [Query(query_id=qid, embedding=e, scores=s, costs=c)
            for qid, e, s, c in make_records(n_test, "q")]

    catalog = [
        ModelSpec(name=f"model-{i:02d}", index=i,
                  input_price=float(cost_scale[i]) / 1500.0,
                  output_price=float(cost_scale[i]) / 400.0)
        for i in range(n_models)
    ]
    return DatasetManifest(
        catalog=catalog,
        embedding_dimension=dim,
        historical=historical,
        test_queries=test,
        provenance={
            "generator": "synthetic_clustered",
            "seed": seed,
            "n_clusters": n_clusters,
            "delta": delta,
        },
    )
