import numpy as np
import pytest

from budget_router.core import ModelSpec, Query
from budget_router.ingest import DatasetManifest, HistoricalRecord


def make_records(n, n_models=3, dim=4, seed=0, prefix="h"):
    """Random historical records with positive costs."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        out.append(HistoricalRecord(
            query_id=f"{prefix}{i:05d}",
            embedding=rng.normal(0, 1, dim),
            scores=rng.random(n_models),
            costs=rng.random(n_models) * 1e-3 + 1e-6,
        ))
    return out


def make_queries(n, n_models=3, dim=4, seed=1, prefix="q"):
    recs = make_records(n, n_models, dim, seed, prefix)
    return [r.as_query() for r in recs]


def make_catalog(n_models):
    return [ModelSpec(name=f"model-{i}", index=i,
                      input_price=1e-7 * (i + 1), output_price=4e-7 * (i + 1))
            for i in range(n_models)]


@pytest.fixture
def tiny_manifest():
    return DatasetManifest(
        catalog=make_catalog(3),
        embedding_dimension=4,
        historical=make_records(30, seed=5),
        test_queries=make_queries(12, seed=6),
        provenance={"generator": "unit-test"},
    )
