"""Dataset loading, validation, and historical/test splitting.

Two on-disk layouts are supported.

jsonl
    A single file.  The first line is a header object with the model
    catalog, the embedding dimension, and free-form provenance.  Every
    following line is a record object with ``kind`` "historical" or
    "test", a query id, an embedding, and per-model ``scores`` and
    ``costs`` arrays.

csv
    A directory holding ``catalog.json``, ``historical.csv`` and an
    optional ``test.csv``.  Rows are ``query_id, emb_0..emb_{k-1},
    d_0..d_{M-1}, g_0..g_{M-1}``.  When rows carry no ``emb_*`` columns an
    embeddings sidecar (``query_id, e_0..e_{k-1}``) must supply them.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ModelSpec, Query, compute_cost

__all__ = [
    "ManifestError",
    "HistoricalRecord",
    "DatasetManifest",
    "load_manifest",
    "write_manifest",
    "split_dataset",
]

_COST_CONSISTENCY_REL = 1e-9


class ManifestError(ValueError):
    """Raised when a dataset fails validation; the message names the
    offending line or query id."""


@dataclass(frozen=True)
class HistoricalRecord:
    """One fully observed query from the historical pool: its embedding
    plus realized per-model scores and costs."""

    query_id: str
    embedding: np.ndarray
    scores: np.ndarray
    costs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "embedding", np.asarray(self.embedding, dtype=np.float64))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        object.__setattr__(self, "costs", np.asarray(self.costs, dtype=np.float64))

    def as_query(self) -> Query:
        return Query(
            query_id=self.query_id,
            embedding=self.embedding,
            scores=self.scores,
            costs=self.costs,
        )


@dataclass
class DatasetManifest:
    """A validated dataset: model catalog, historical records, test
    queries, and provenance notes."""

    catalog: list[ModelSpec]
    embedding_dimension: int
    historical: list[HistoricalRecord]
    test_queries: list[Query]
    provenance: dict = field(default_factory=dict)

    @property
    def n_models(self) -> int:
        return len(self.catalog)

    def validate(self) -> None:
        if not self.catalog:
            raise ManifestError("catalog is empty")
        for pos, spec in enumerate(self.catalog):
            if spec.index != pos:
                raise ManifestError(
                    f"catalog position {pos} holds model index {spec.index}; "
                    "indices must be contiguous from 0"
                )
        if not self.historical:
            raise ManifestError("historical dataset empty")
        m = self.n_models
        for rec in self.historical:
            _check_record(rec.query_id, rec.embedding, rec.scores, rec.costs,
                          self.embedding_dimension, m)
        for q in self.test_queries:
            _check_record(q.query_id, q.embedding, q.scores, q.costs,
                          self.embedding_dimension, m)
            _check_token_consistency(q, self.catalog)


def _check_record(query_id: str, embedding: np.ndarray, scores: np.ndarray,
                  costs: np.ndarray, dim: int, n_models: int) -> None:
    if embedding.shape != (dim,):
        raise ManifestError(
            f"query {query_id!r}: embedding has {embedding.shape[0] if embedding.ndim == 1 else embedding.shape} "
            f"entries, expected {dim}"
        )
    if scores.shape != (n_models,):
        raise ManifestError(
            f"query {query_id!r}: {scores.shape[0]} scores for {n_models} models"
        )
    if costs.shape != (n_models,):
        raise ManifestError(
            f"query {query_id!r}: {costs.shape[0]} costs for {n_models} models"
        )
    if np.any(costs < 0):
        raise ManifestError(f"query {query_id!r}: negative cost")


def _check_token_consistency(q: Query, catalog: Sequence[ModelSpec]) -> None:
    if q.input_tokens is None or q.output_tokens is None:
        return
    if len(q.output_tokens) != len(catalog):
        raise ManifestError(
            f"query {q.query_id!r}: {len(q.output_tokens)} output token counts "
            f"for {len(catalog)} models"
        )
    for spec in catalog:
        expected = compute_cost(spec, q.input_tokens, q.output_tokens[spec.index])
        got = float(q.costs[spec.index])
        if not math.isclose(expected, got, rel_tol=_COST_CONSISTENCY_REL, abs_tol=1e-12):
            raise ManifestError(
                f"query {q.query_id!r}: cost {got} for model {spec.name!r} does not "
                f"match token counts (expected {expected})"
            )


# ---------------------------------------------------------------------------
# jsonl layout


def _load_jsonl(path: Path, embeddings: dict[str, np.ndarray] | None) -> DatasetManifest:
    header = None
    historical: list[HistoricalRecord] = []
    test: list[Query] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            kind = obj.get("kind")
            if kind == "manifest":
                header = obj
                continue
            if header is None:
                raise ManifestError(f"line {lineno}: record before manifest header")
            if kind not in ("historical", "test"):
                raise ManifestError(f"line {lineno}: unknown record kind {kind!r}")
            try:
                qid = str(obj["query_id"])
                emb = obj.get("embedding")
                if emb is None:
                    if embeddings is None or qid not in embeddings:
                        raise ManifestError(
                            f"line {lineno}: query {qid!r} has no embedding and no sidecar entry"
                        )
                    emb = embeddings[qid]
                scores = obj["scores"]
                costs = obj["costs"]
            except KeyError as exc:
                raise ManifestError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
            if kind == "historical":
                historical.append(HistoricalRecord(qid, np.asarray(emb, dtype=np.float64),
                                                   np.asarray(scores, dtype=np.float64),
                                                   np.asarray(costs, dtype=np.float64)))
            else:
                out_tok = obj.get("output_tokens")
                test.append(Query(
                    query_id=qid,
                    embedding=np.asarray(emb, dtype=np.float64),
                    scores=np.asarray(scores, dtype=np.float64),
                    costs=np.asarray(costs, dtype=np.float64),
                    input_tokens=obj.get("input_tokens"),
                    output_tokens=None if out_tok is None else tuple(int(t) for t in out_tok),
                ))
    if header is None:
        raise ManifestError("no manifest header line found")
    catalog = [
        ModelSpec(name=m["name"], index=i,
                  input_price=float(m["input_price"]),
                  output_price=float(m["output_price"]))
        for i, m in enumerate(header.get("models", []))
    ]
    manifest = DatasetManifest(
        catalog=catalog,
        embedding_dimension=int(header["embedding_dimension"]),
        historical=historical,
        test_queries=test,
        provenance=header.get("provenance", {}),
    )
    manifest.validate()
    return manifest


def _write_jsonl(manifest: DatasetManifest, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": "manifest",
            "embedding_dimension": manifest.embedding_dimension,
            "models": [
                {"name": m.name, "input_price": m.input_price, "output_price": m.output_price}
                for m in manifest.catalog
            ],
            "provenance": manifest.provenance,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in manifest.historical:
            fh.write(json.dumps({
                "kind": "historical",
                "query_id": rec.query_id,
                "embedding": [float(v) for v in rec.embedding],
                "scores": [float(v) for v in rec.scores],
                "costs": [float(v) for v in rec.costs],
            }, sort_keys=True) + "\n")
        for q in manifest.test_queries:
            obj = {
                "kind": "test",
                "query_id": q.query_id,
                "embedding": [float(v) for v in q.embedding],
                "scores": [float(v) for v in q.scores],
                "costs": [float(v) for v in q.costs],
            }
            if q.input_tokens is not None:
                obj["input_tokens"] = q.input_tokens
            if q.output_tokens is not None:
                obj["output_tokens"] = list(q.output_tokens)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# csv layout


def _parse_csv_rows(path: Path, n_models: int,
                    embeddings: dict[str, np.ndarray] | None):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            return
        head = [h.strip() for h in head]
        if not head or head[0] != "query_id":
            raise ManifestError(f"{path.name}: first column must be query_id")
        emb_cols = [i for i, h in enumerate(head) if h.startswith("emb_")]
        d_cols = [i for i, h in enumerate(head) if h.startswith("d_")]
        g_cols = [i for i, h in enumerate(head) if h.startswith("g_")]
        if len(d_cols) != n_models or len(g_cols) != n_models:
            raise ManifestError(
                f"{path.name}: found {len(d_cols)} d_* and {len(g_cols)} g_* columns "
                f"for a catalog of {n_models} models"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            qid = row[0].strip()
            try:
                if emb_cols:
                    emb = np.array([float(row[i]) for i in emb_cols])
                elif embeddings is not None and qid in embeddings:
                    emb = embeddings[qid]
                else:
                    raise ManifestError(
                        f"{path.name} line {lineno}: query {qid!r} has no embedding "
                        "columns and no sidecar entry"
                    )
                scores = np.array([float(row[i]) for i in d_cols])
                costs = np.array([float(row[i]) for i in g_cols])
            except (ValueError, IndexError) as exc:
                if isinstance(exc, ManifestError):
                    raise
                raise ManifestError(f"{path.name} line {lineno}: {exc}") from exc
            yield qid, emb, scores, costs


def _load_csv(path: Path, embeddings: dict[str, np.ndarray] | None) -> DatasetManifest:
    if not path.is_dir():
        raise ManifestError(f"csv dataset {path} must be a directory")
    catalog_path = path / "catalog.json"
    if not catalog_path.exists():
        raise ManifestError(f"{path}: catalog.json missing")
    with open(catalog_path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    catalog = [
        ModelSpec(name=m["name"], index=i,
                  input_price=float(m["input_price"]),
                  output_price=float(m["output_price"]))
        for i, m in enumerate(header.get("models", []))
    ]
    historical = [
        HistoricalRecord(qid, emb, scores, costs)
        for qid, emb, scores, costs in _parse_csv_rows(path / "historical.csv",
                                                       len(catalog), embeddings)
    ] if (path / "historical.csv").exists() else []
    test: list[Query] = []
    if (path / "test.csv").exists():
        test = [
            Query(query_id=qid, embedding=emb, scores=scores, costs=costs)
            for qid, emb, scores, costs in _parse_csv_rows(path / "test.csv",
                                                           len(catalog), embeddings)
        ]
    manifest = DatasetManifest(
        catalog=catalog,
        embedding_dimension=int(header["embedding_dimension"]),
        historical=historical,
        test_queries=test,
        provenance=header.get("provenance", {}),
    )
    manifest.validate()
    return manifest


def _float_cell(v: float) -> str:
    # repr round-trips float64 exactly, which keeps load(write(m)) == m
    return repr(float(v))


def _write_csv(manifest: DatasetManifest, path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "catalog.json", "w", encoding="utf-8") as fh:
        json.dump({
            "embedding_dimension": manifest.embedding_dimension,
            "models": [
                {"name": m.name, "input_price": m.input_price, "output_price": m.output_price}
                for m in manifest.catalog
            ],
            "provenance": manifest.provenance,
        }, fh, sort_keys=True, indent=2)
    dim = manifest.embedding_dimension
    m = manifest.n_models
    head = (["query_id"]
            + [f"emb_{i}" for i in range(dim)]
            + [f"d_{i}" for i in range(m)]
            + [f"g_{i}" for i in range(m)])

    def rows(records):
        for rec in records:
            yield ([rec.query_id]
                   + [_float_cell(v) for v in rec.embedding]
                   + [_float_cell(v) for v in rec.scores]
                   + [_float_cell(v) for v in rec.costs])

    with open(path / "historical.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        w.writerows(rows(manifest.historical))
    with open(path / "test.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        w.writerows(rows(manifest.test_queries))


# ---------------------------------------------------------------------------
# public entry points


def _load_embedding_sidecar(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        if not head or head[0].strip() != "query_id":
            raise ManifestError(f"{path}: first column must be query_id")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[row[0].strip()] = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ManifestError(f"{path} line {lineno}: {exc}") from exc
    return out


def load_manifest(path, fmt: str = "jsonl", embeddings_path=None) -> DatasetManifest:
    """Load and validate a dataset.

    ``fmt`` selects the layout ("jsonl" or "csv").  ``embeddings_path``
    names an optional CSV sidecar supplying embeddings for records that
    do not embed their own.
    """
    path = Path(path)
    sidecar = _load_embedding_sidecar(embeddings_path) if embeddings_path else None
    if fmt == "jsonl":
        return _load_jsonl(path, sidecar)
    if fmt == "csv":
        return _load_csv(path, sidecar)
    raise ManifestError(f"unknown dataset format {fmt!r}")


def write_manifest(manifest: DatasetManifest, path, fmt: str = "jsonl") -> None:
    """Persist a manifest so that loading it back reproduces every field."""
    manifest.validate()
    path = Path(path)
    if fmt == "jsonl":
        _write_jsonl(manifest, path)
    elif fmt == "csv":
        _write_csv(manifest, path)
    else:
        raise ManifestError(f"unknown dataset format {fmt!r}")


def split_dataset(manifest: DatasetManifest, test_size: int,
                  seed: int) -> tuple[list[HistoricalRecord], list[Query]]:
    """Repartition all records of ``manifest`` into a historical pool and
    a test stream.

    The union of the two output lists is exactly the union of the input
    manifest's records; ``test_size`` of them are drawn uniformly without
    replacement (by ``seed``) into the test side and the rest stay
    historical.  Record order within each side follows the original
    manifest order.
    """
    pool: list[HistoricalRecord] = list(manifest.historical)
    for q in manifest.test_queries:
        pool.append(HistoricalRecord(q.query_id, q.embedding, q.scores, q.costs))
    n = len(pool)
    if not 0 <= test_size < n:
        raise ManifestError(
            f"test_size must be in [0, {n}) for a pool of {n} records, got {test_size}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=test_size, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    historical = [pool[i] for i in range(n) if not mask[i]]
    test = [pool[i].as_query() for i in range(n) if mask[i]]
    return historical, test
