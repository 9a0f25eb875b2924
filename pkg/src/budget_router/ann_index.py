"""Approximate nearest-neighbor search over the historical pool, plus the
exact linear-scan twin used for auditing it.

The approximate side is a layered navigable small-world graph: every
record lands on layer 0, a geometrically thinning subset is promoted to
higher layers, and queries descend greedily through the sparse layers
before running a beam search on the dense bottom layer.  Neighbor lists
are chosen with the usual diversity heuristic (a candidate is kept when
it is closer to the query than to any already kept neighbor) so the
graph stays navigable even with clustered data.

Feature estimation averages the realized per-model scores and costs of a
query's k nearest historical records; both the graph searcher and the
exact scanner can back it, so the estimation error introduced by the
graph can always be measured against the scan.

Determinism: layer draws come from a generator seeded by the build
config, inserts happen in record order, and every heap is tie-broken on
record position, so the same inputs always produce the same graph and
the same search results.  A beam as wide as the whole pool degenerates
to an exhaustive search, so that case is served by the same vectorized
scan as ``exact_knn`` and matches it bit for bit.
"""
from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ingest import HistoricalRecord

__all__ = [
    "IndexConfig",
    "NeighborSet",
    "FeatureEstimate",
    "AnnIndex",
    "ExactIndex",
    "build_index",
    "search",
    "exact_knn",
    "estimate_features",
    "save_index",
    "load_index",
]

_MAGIC = b"BRAI"
_VERSION = 1


@dataclass(frozen=True)
class IndexConfig:
    """Graph construction and search parameters.

    ``graph_degree`` caps neighbor-list length on the sparse layers;
    layer 0 allows twice that, which is the usual widening for this graph
    family.  ``build_beam`` and ``search_beam`` are the candidate-list
    widths during construction and querying.  ``distance`` is
    "euclidean" (default) or "cosine".
    """

    k_neighbors: int = 5
    graph_degree: int = 16
    build_beam: int = 100
    search_beam: int = 64
    distance: str = "euclidean"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.graph_degree < 2:
            raise ValueError("graph_degree must be >= 2")
        if self.build_beam < 1 or self.search_beam < 1:
            raise ValueError("beam widths must be >= 1")
        if self.search_beam < self.k_neighbors:
            raise ValueError("search_beam must be >= k_neighbors")
        if self.distance not in ("euclidean", "cosine"):
            raise ValueError(f"unknown distance {self.distance!r}")


@dataclass(frozen=True)
class NeighborSet:
    """Nearest historical records, closest first.

    ``positions`` are 0-based record positions in the pool, ``ids`` the
    matching query ids.  Distance ties are broken toward the lower
    position.  ``truncated`` flags a request for more neighbors than the
    pool holds.
    """

    positions: np.ndarray
    ids: tuple[str, ...]
    distances: np.ndarray
    truncated: bool = False


@dataclass(frozen=True)
class FeatureEstimate:
    """Neighbor-averaged per-model score and cost predictions."""

    scores: np.ndarray
    costs: np.ndarray
    neighbors: NeighborSet


class _VectorStore:
    """Shared storage and exact-scan machinery for both searchers."""

    def __init__(self, records: Sequence[HistoricalRecord], distance: str = "euclidean"):
        if not records:
            raise ValueError("historical dataset empty")
        self.ids: tuple[str, ...] = tuple(r.query_id for r in records)
        self.vectors = np.ascontiguousarray(
            np.stack([r.embedding for r in records]), dtype=np.float64)
        self.scores = np.ascontiguousarray(
            np.stack([r.scores for r in records]), dtype=np.float64)
        self.costs = np.ascontiguousarray(
            np.stack([r.costs for r in records]), dtype=np.float64)
        self.distance = distance
        if distance == "cosine":
            norms = np.linalg.norm(self.vectors, axis=1)
            norms[norms == 0] = 1.0
            self._unit = self.vectors / norms[:, None]
        else:
            self._unit = None

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def _dist_rows(self, rows: np.ndarray, vec: np.ndarray) -> np.ndarray:
        if self.distance == "cosine":
            n = np.linalg.norm(vec)
            unit = vec / n if n > 0 else vec
            sub = self._unit[rows] if rows is not None else self._unit
            return 1.0 - sub @ unit
        sub = self.vectors[rows] if rows is not None else self.vectors
        diff = sub - vec
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def scan(self, embedding: np.ndarray, k: int) -> NeighborSet:
        """Exhaustive k-nearest-neighbor scan over the whole pool."""
        vec = np.asarray(embedding, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"embedding has shape {vec.shape}, index dimension is {self.dim}")
        truncated = k > len(self)
        k = min(k, len(self))
        dists = self._dist_rows(None, vec)
        order = np.lexsort((np.arange(len(self)), dists))[:k]
        return NeighborSet(
            positions=order.copy(),
            ids=tuple(self.ids[i] for i in order),
            distances=dists[order].copy(),
            truncated=truncated,
        )

    def search(self, embedding: np.ndarray, k: int) -> NeighborSet:
        raise NotImplementedError

    def estimate(self, embedding: np.ndarray, k: int | None = None) -> FeatureEstimate:
        neighbors = self.search(embedding, k if k is not None else 5)
        rows = neighbors.positions
        return FeatureEstimate(
            scores=self.scores[rows].mean(axis=0),
            costs=self.costs[rows].mean(axis=0),
            neighbors=neighbors,
        )


class ExactIndex(_VectorStore):
    """Linear-scan searcher; the audit oracle for the graph index."""

    def search(self, embedding: np.ndarray, k: int) -> NeighborSet:
        return self.scan(embedding, k)


class AnnIndex(_VectorStore):
    """Layered small-world graph over the historical pool."""

    def __init__(self, records: Sequence[HistoricalRecord], config: IndexConfig):
        super().__init__(records, config.distance)
        self.config = config
        n = len(self)
        self.levels = np.zeros(n, dtype=np.int64)
        # adjacency[layer][node] -> list of neighbor positions
        self.adjacency: list[dict[int, list[int]]] = []
        self.entry_point = 0
        self.max_level = 0
        self._built = False

    # -- construction ------------------------------------------------------

    def build(self) -> "AnnIndex":
        rng = np.random.default_rng(self.config.seed)
        level_scale = 1.0 / np.log(self.config.graph_degree)
        draws = rng.random(len(self))
        for node in range(len(self)):
            level = int(np.floor(-np.log(max(draws[node], 1e-300)) * level_scale))
            self._insert(node, level)
        self._built = True
        return self

    def _degree_cap(self, layer: int) -> int:
        return self.config.graph_degree * 2 if layer == 0 else self.config.graph_degree

    def _insert(self, node: int, level: int) -> None:
        self.levels[node] = level
        while len(self.adjacency) <= level:
            self.adjacency.append({})
        for layer in range(level + 1):
            self.adjacency[layer][node] = []
        if node == 0:
            self.entry_point = 0
            self.max_level = level
            return
        vec = self.vectors[node]
        ep = self.entry_point
        ep_dist = float(self._dist_rows(np.array([ep]), vec)[0])
        for layer in range(self.max_level, level, -1):
            ep, ep_dist = self._greedy_step(vec, ep, ep_dist, layer)
        entries = [(ep_dist, ep)]
        for layer in range(min(level, self.max_level), -1, -1):
            found = self._search_layer(vec, entries, self.config.build_beam, layer,
                                       exclude=node)
            cap = self._degree_cap(layer)
            chosen = self._select_diverse(found, cap)
            self.adjacency[layer][node] = [c for _, c in chosen]
            for dist_nc, c in chosen:
                lst = self.adjacency[layer][c]
                lst.append(node)
                if len(lst) > cap:
                    arr = np.asarray(lst, dtype=np.int64)
                    dists = self._dist_rows(arr, self.vectors[c])
                    cand = sorted(zip(dists.tolist(), lst))
                    self.adjacency[layer][c] = [b for _, b in self._select_diverse(cand, cap)]
            entries = found
        if level > self.max_level:
            self.max_level = level
            self.entry_point = node

    def _greedy_step(self, vec: np.ndarray, ep: int, ep_dist: float,
                     layer: int) -> tuple[int, float]:
        improved = True
        while improved:
            improved = False
            nbrs = self.adjacency[layer].get(ep, [])
            if not nbrs:
                break
            arr = np.asarray(nbrs, dtype=np.int64)
            dists = self._dist_rows(arr, vec)
            best = int(np.argmin(dists))
            if dists[best] < ep_dist:
                ep = int(arr[best])
                ep_dist = float(dists[best])
                improved = True
        return ep, ep_dist

    def _search_layer(self, vec: np.ndarray, entries: list[tuple[float, int]],
                      beam: int, layer: int, exclude: int | None = None
                      ) -> list[tuple[float, int]]:
        """Beam search on one layer.

        ``entries`` seed the frontier as (distance, node) pairs.  Returns
        up to ``beam`` nearest nodes as (distance, node), sorted.  All heap
        ordering ties resolve on node position so runs are repeatable.
        """
        visited = {node for _, node in entries}
        if exclude is not None:
            visited.add(exclude)
        candidates = [(d, node) for d, node in entries]
        heapq.heapify(candidates)
        # worst-first heap; on distance ties the highest position is evicted
        best: list[tuple[float, int]] = [(-d, -node) for d, node in entries]
        heapq.heapify(best)
        while len(best) > beam:
            heapq.heappop(best)
        while candidates:
            dist, node = heapq.heappop(candidates)
            if len(best) >= beam and dist > -best[0][0]:
                break
            fresh = [b for b in self.adjacency[layer].get(node, []) if b not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            arr = np.asarray(fresh, dtype=np.int64)
            dists = self._dist_rows(arr, vec)
            for b, d in zip(fresh, dists.tolist()):
                if len(best) < beam:
                    heapq.heappush(best, (-d, -b))
                    heapq.heappush(candidates, (d, b))
                elif (-d, -b) > best[0]:
                    heapq.heapreplace(best, (-d, -b))
                    heapq.heappush(candidates, (d, b))
        out = sorted((-nd, -nn) for nd, nn in best)
        return [(d, int(n)) for d, n in out]

    def _select_diverse(self, candidates: list[tuple[float, int]], cap: int
                        ) -> list[tuple[float, int]]:
        """Diversity-pruned neighbor selection.

        Walk candidates closest-first; keep one when it is closer to the
        query point than to every neighbor already kept.  Rejected
        candidates backfill remaining slots in distance order.
        """
        if len(candidates) <= cap:
            # every candidate survives (diversity winners plus backfill)
            return list(candidates)
        rows = np.asarray([c for _, c in candidates], dtype=np.int64)
        dist_q = np.asarray([d for d, _ in candidates], dtype=np.float64)
        if self.distance == "cosine":
            sub = self._unit[rows]
            pair = 1.0 - sub @ sub.T
        else:
            sub = self.vectors[rows]
            sq = np.einsum("ij,ij->i", sub, sub)
            pair = sq[:, None] + sq[None, :] - 2.0 * (sub @ sub.T)
            np.maximum(pair, 0.0, out=pair)
            np.sqrt(pair, out=pair)
        blocked = np.zeros(len(candidates), dtype=bool)
        selected: list[int] = []
        rejected: list[int] = []
        for i in range(len(candidates)):
            if blocked[i]:
                rejected.append(i)
                continue
            selected.append(i)
            if len(selected) >= cap:
                break
            blocked |= pair[:, i] < dist_q
        for i in rejected:
            if len(selected) >= cap:
                break
            selected.append(i)
        return [candidates[i] for i in selected]

    # -- queries -----------------------------------------------------------

    def search(self, embedding: np.ndarray, k: int,
               beam: int | None = None) -> NeighborSet:
        if not self._built:
            raise RuntimeError("index not built; call build_index")
        vec = np.asarray(embedding, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"embedding has shape {vec.shape}, index dimension is {self.dim}")
        truncated = k > len(self)
        k = min(k, len(self))
        beam = beam if beam is not None else self.config.search_beam
        beam = max(beam, k)
        if beam >= len(self):
            # a beam spanning the pool is an exhaustive search; use the
            # vectorized scan so the result matches exact_knn exactly
            ns = self.scan(vec, k)
            return NeighborSet(ns.positions, ns.ids, ns.distances, truncated)
        ep = self.entry_point
        ep_dist = float(self._dist_rows(np.array([ep]), vec)[0])
        for layer in range(self.max_level, 0, -1):
            ep, ep_dist = self._greedy_step(vec, ep, ep_dist, layer)
        found = self._search_layer(vec, [(ep_dist, ep)], beam, 0)
        found = found[:k]
        positions = np.asarray([n for _, n in found], dtype=np.int64)
        return NeighborSet(
            positions=positions,
            ids=tuple(self.ids[i] for i in positions),
            distances=np.asarray([d for d, _ in found], dtype=np.float64),
            truncated=truncated,
        )


def build_index(records: Sequence[HistoricalRecord],
                config: IndexConfig | None = None) -> AnnIndex:
    """Construct the small-world graph over ``records``."""
    return AnnIndex(records, config or IndexConfig()).build()


def search(index: _VectorStore, embedding: np.ndarray, k: int) -> NeighborSet:
    """k nearest neighbors of ``embedding`` under ``index``."""
    return index.search(embedding, k)


def exact_knn(records: Sequence[HistoricalRecord] | _VectorStore,
              embedding: np.ndarray, k: int) -> NeighborSet:
    """Exact k nearest neighbors by full linear scan."""
    store = records if isinstance(records, _VectorStore) else ExactIndex(records)
    return store.scan(np.asarray(embedding, dtype=np.float64), k)


def estimate_features(index: _VectorStore, embedding: np.ndarray,
                      k: int) -> FeatureEstimate:
    """Predict per-model scores and costs for ``embedding`` as the
    arithmetic mean over its k nearest historical records."""
    return index.estimate(embedding, k)


# ---------------------------------------------------------------------------
# serialization


def save_index(index: AnnIndex, path) -> None:
    """Write the index to one binary file.

    Header: magic, format version, embedding dimension, record count,
    graph degree, model count.  Everything needed to answer queries (the
    vectors, the per-record score and cost matrices, the layered
    adjacency, and the build config) follows.
    """
    cfg = index.config
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIQII", _VERSION, index.dim, len(index),
                             cfg.graph_degree, index.scores.shape[1]))
        cfg_blob = json.dumps({
            "k_neighbors": cfg.k_neighbors,
            "graph_degree": cfg.graph_degree,
            "build_beam": cfg.build_beam,
            "search_beam": cfg.search_beam,
            "distance": cfg.distance,
            "seed": cfg.seed,
        }, sort_keys=True).encode()
        fh.write(struct.pack("<Q", len(cfg_blob)))
        fh.write(cfg_blob)
        ids_blob = json.dumps(list(index.ids)).encode()
        fh.write(struct.pack("<Q", len(ids_blob)))
        fh.write(ids_blob)
        fh.write(struct.pack("<QI", index.entry_point, index.max_level))
        fh.write(index.levels.astype("<i8").tobytes())
        fh.write(index.vectors.astype("<f8").tobytes())
        fh.write(index.scores.astype("<f8").tobytes())
        fh.write(index.costs.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(index.adjacency)))
        for layer in index.adjacency:
            fh.write(struct.pack("<Q", len(layer)))
            for node in sorted(layer):
                nbrs = layer[node]
                fh.write(struct.pack("<QI", node, len(nbrs)))
                fh.write(np.asarray(nbrs, dtype="<i8").tobytes())


def load_index(path) -> AnnIndex:
    """Read an index written by ``save_index``, verifying the header."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError("not an index file (bad magic)")
    off = 4
    version, dim, count, degree, n_models = struct.unpack_from("<IIQII", blob, off)
    off += struct.calcsize("<IIQII")
    if version != _VERSION:
        raise ValueError(f"unsupported index format version {version}")
    (cfg_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    cfg = IndexConfig(**json.loads(blob[off:off + cfg_len].decode()))
    off += cfg_len
    (ids_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    ids = json.loads(blob[off:off + ids_len].decode())
    off += ids_len
    entry, max_level = struct.unpack_from("<QI", blob, off)
    off += struct.calcsize("<QI")
    levels = np.frombuffer(blob, dtype="<i8", count=count, offset=off).copy()
    off += count * 8
    vectors = np.frombuffer(blob, dtype="<f8", count=count * dim, offset=off
                            ).reshape(count, dim).copy()
    off += count * dim * 8
    scores = np.frombuffer(blob, dtype="<f8", count=count * n_models, offset=off
                           ).reshape(count, n_models).copy()
    off += count * n_models * 8
    costs = np.frombuffer(blob, dtype="<f8", count=count * n_models, offset=off
                          ).reshape(count, n_models).copy()
    off += count * n_models * 8
    (n_layers,) = struct.unpack_from("<I", blob, off)
    off += 4
    adjacency: list[dict[int, list[int]]] = []
    for _ in range(n_layers):
        (n_entries,) = struct.unpack_from("<Q", blob, off)
        off += 8
        layer: dict[int, list[int]] = {}
        for _ in range(n_entries):
            node, deg = struct.unpack_from("<QI", blob, off)
            off += struct.calcsize("<QI")
            nbrs = np.frombuffer(blob, dtype="<i8", count=deg, offset=off)
            off += deg * 8
            layer[int(node)] = [int(v) for v in nbrs]
        adjacency.append(layer)
    records = [HistoricalRecord(ids[i], vectors[i], scores[i], costs[i])
               for i in range(count)]
    index = AnnIndex(records, cfg)
    index.levels = levels
    index.adjacency = adjacency
    index.entry_point = int(entry)
    index.max_level = int(max_level)
    index._built = True
    return index
