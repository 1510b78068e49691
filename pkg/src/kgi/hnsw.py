"""HNSW approximate nearest-neighbor index over passage vectors.

A multi-layer navigable graph: every vector lives at layer 0, and each node
is promoted to higher layers with exponentially decaying probability
(normalization 1/ln(M)). Search descends greedily through the upper layers,
then runs a best-first beam of width ef_search at layer 0. Degree is capped
at M per node per layer (2M at layer 0), with diversity-aware neighbor
selection during construction.

Links are kept symmetric: an edge dropped while enforcing the degree cap is
removed from both endpoints, and an edge that is the far endpoint's only
link at that layer is never dropped. Every reachability question therefore
reduces to undirected connectivity, and the layer-0 graph stays reachable
from the entry point.

Similarity is inner product (cosine is inner product over pre-normalized
vectors). Builds are deterministic given the level-assignment seed, which is
recorded in the persisted header. Deletion is unsupported: corpora are
immutable snapshots, rebuild instead.
"""

from __future__ import annotations

import heapq
import math
import random
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from kgi.corpus import Passage, retrieval_text
from kgi.embedding import Embedder
from kgi.errors import InternalError, ValidationError
from kgi.rerank import ScoredCandidate

INDEX_FILE = "dense_index.bin"
_MAGIC = b"KGIDENSE"
_METRIC_CODES = {"ip": 0, "cosine": 1}
_METRIC_NAMES = {code: name for name, code in _METRIC_CODES.items()}


class HnswIndex:
    """Build is exclusive; a built index is read-only and search is thread-safe."""

    def __init__(
        self,
        dim: int,
        M: int = 16,
        ef_construction: int = 200,
        metric: str = "ip",
        seed: int = 0,
    ):
        if M < 2:
            raise ValidationError(f"M must be >= 2, got {M}")
        if ef_construction < M:
            raise ValidationError(f"ef_construction must be >= M, got {ef_construction}")
        if metric not in _METRIC_CODES:
            raise ValidationError(f"metric must be one of {sorted(_METRIC_CODES)}, got {metric!r}")
        self.dim = dim
        self.M = M
        self.ef_construction = ef_construction
        self.metric = metric
        self.seed = seed
        self._rng = random.Random(seed)
        self._level_norm = 1.0 / math.log(M)

        self.pids: list[str] = []
        self._node_of_pid: dict[str, int] = {}
        self.levels: list[int] = []
        # adjacency[node][layer] -> list of neighbor node ids
        self.adjacency: list[list[list[int]]] = []
        self.entry_point: int | None = None
        self.max_level: int = -1

        self._capacity = 1024
        self._vectors = np.zeros((self._capacity, dim), dtype=np.float32)

    def __len__(self) -> int:
        return len(self.pids)

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors[: len(self.pids)]

    def vector_of(self, pid: str) -> np.ndarray:
        return self._vectors[self._node_of_pid[pid]]

    def __contains__(self, pid: str) -> bool:
        return pid in self._node_of_pid

    # -- construction -------------------------------------------------

    def _assign_level(self) -> int:
        return int(-math.log(self._rng.random() or 1e-12) * self._level_norm)

    def _grow(self, needed: int) -> None:
        if needed <= self._capacity:
            return
        new_capacity = max(self._capacity * 2, needed)
        grown = np.zeros((new_capacity, self.dim), dtype=np.float32)
        grown[: len(self.pids)] = self._vectors[: len(self.pids)]
        self._vectors = grown
        self._capacity = new_capacity

    def _dist_batch(self, query: np.ndarray, ids: Sequence[int]) -> np.ndarray:
        # distance = negated similarity, so smaller is closer
        return -(self._vectors[ids] @ query)

    def add(self, pid: str, vector: np.ndarray) -> None:
        if pid in self._node_of_pid:
            raise ValidationError(f"pid already indexed: {pid!r}")
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise ValidationError(
                f"vector has shape {vector.shape}, index expects ({self.dim},)"
            )
        if self.metric == "cosine":
            norm = float(np.linalg.norm(vector))
            if norm > 0:
                vector = vector / norm

        node = len(self.pids)
        level = self._assign_level()
        self._grow(node + 1)
        self._vectors[node] = vector
        self.pids.append(pid)
        self._node_of_pid[pid] = node
        self.levels.append(level)
        self.adjacency.append([[] for _ in range(level + 1)])

        if self.entry_point is None:
            self.entry_point = node
            self.max_level = level
            return

        entry = [self.entry_point]
        for layer in range(self.max_level, level, -1):
            entry = [self._search_layer(vector, entry, layer, 1)[0][1]]

        for layer in range(min(level, self.max_level), -1, -1):
            candidates = self._search_layer(vector, entry, layer, self.ef_construction)
            cap = self.M * 2 if layer == 0 else self.M
            neighbors = self._select_neighbors(vector, candidates, self.M)
            self.adjacency[node][layer] = list(neighbors)
            for neighbor in neighbors:
                links = self.adjacency[neighbor][layer]
                links.append(node)
                if len(links) > cap:
                    self._shrink(neighbor, layer, cap)
            entry = [n for _, n in candidates]

        if level > self.max_level:
            self.entry_point = node
            self.max_level = level

    def connect_components(self) -> int:
        """Bridge layer-0 components that degree-capped pruning detached from
        the entry point's component. Adds the strongest available symmetric
        edge per round, favoring endpoints with spare capacity. Returns the
        number of bridges added. Runs at the end of every batch build."""
        if self.entry_point is None:
            return 0
        cap = self.M * 2
        added = 0
        for _ in range(4 * len(self.pids)):
            seen = self._reachable_at_layer0()
            if bool(seen.all()):
                return added
            detached = np.flatnonzero(~seen)
            main = np.flatnonzero(seen)
            sims = self._vectors[detached] @ self._vectors[main].T
            order = np.argsort(-sims, axis=None)
            bridge: tuple[int, int] | None = None
            for flat in order.tolist():
                u = int(detached[flat // len(main)])
                v = int(main[flat % len(main)])
                if len(self.adjacency[u][0]) < cap and len(self.adjacency[v][0]) < cap:
                    bridge = (u, v)
                    break
            if bridge is None:
                # every candidate pair has a full endpoint: free one slot on
                # each side of the strongest pair
                flat = int(order[0])
                bridge = (int(detached[flat // len(main)]), int(main[flat % len(main)]))
                for endpoint in bridge:
                    if len(self.adjacency[endpoint][0]) >= cap:
                        self._shrink(endpoint, 0, cap - 1)
            u, v = bridge
            self.adjacency[u][0].append(v)
            self.adjacency[v][0].append(u)
            added += 1
        raise InternalError("component repair did not converge")

    def _reachable_at_layer0(self) -> np.ndarray:
        seen = np.zeros(len(self.pids), dtype=bool)
        stack = [self.entry_point]
        seen[self.entry_point] = True
        while stack:
            node = stack.pop()
            for neighbor in self.adjacency[node][0]:
                if not seen[neighbor]:
                    seen[neighbor] = True
                    stack.append(neighbor)
        return seen

    def _select_neighbors(
        self, query: np.ndarray, candidates: list[tuple[float, int]], m: int
    ) -> list[int]:
        """Diversity-aware selection: keep a candidate only if it is closer to
        the query than to every neighbor already kept, then backfill the
        nearest rejected ones up to m."""
        if len(candidates) <= m:
            return [node for _, node in candidates]
        pool = [node for _, node in candidates]
        pool_vectors = self._vectors[pool]
        # running minimum over distances from each pool member to the kept set
        closest_kept = np.full(len(pool), np.inf, dtype=np.float32)
        kept: list[int] = []
        rejected: list[int] = []
        for i, (dist, node) in enumerate(candidates):
            if len(kept) >= m:
                break
            if kept and dist >= closest_kept[i]:
                rejected.append(node)
                continue
            kept.append(node)
            np.minimum(closest_kept, -(pool_vectors @ pool_vectors[i]), out=closest_kept)
        for node in rejected:
            if len(kept) >= m:
                break
            kept.append(node)
        return kept

    def _shrink(self, owner: int, layer: int, cap: int) -> None:
        """Cut owner's link list back to cap. Dropped edges are removed from
        both endpoints. Victims are the selection heuristic's rejects,
        farthest first, but an edge that is the far endpoint's only link at
        this layer is passed over and a kept edge is dropped instead, so no
        node is ever orphaned."""
        links = self.adjacency[owner][layer]
        owner_vec = self._vectors[owner]
        pool = sorted(zip(self._dist_batch(owner_vec, links).tolist(), links))
        kept = set(self._select_neighbors(owner_vec, pool, cap))
        victims = [n for _, n in reversed(pool) if n not in kept]
        victims += [n for _, n in reversed(pool) if n in kept]
        excess = len(links) - cap
        removed: set[int] = set()
        for other in victims:
            if excess == 0:
                break
            other_links = self.adjacency[other][layer]
            if len(other_links) > 1:
                other_links.remove(owner)
                removed.add(other)
                excess -= 1
        self.adjacency[owner][layer] = [n for _, n in pool if n not in removed]

    def _search_layer(
        self, query: np.ndarray, entry: Sequence[int], layer: int, ef: int
    ) -> list[tuple[float, int]]:
        """Best-first beam of width ef; returns (distance, node) ascending."""
        visited = np.zeros(len(self.pids), dtype=bool)
        entry = list(dict.fromkeys(entry))
        visited[entry] = True
        entry_dists = self._dist_batch(query, entry)

        candidates: list[tuple[float, int]] = list(zip(entry_dists.tolist(), entry))
        heapq.heapify(candidates)
        best = [(-d, n) for d, n in candidates]
        heapq.heapify(best)
        while len(best) > ef:
            heapq.heappop(best)

        while candidates:
            dist, node = heapq.heappop(candidates)
            if len(best) >= ef and dist > -best[0][0]:
                break
            fresh = [n for n in self.adjacency[node][layer] if not visited[n]]
            if not fresh:
                continue
            visited[fresh] = True
            fresh_dists = self._dist_batch(query, fresh)
            worst = -best[0][0]
            for neighbor_dist, neighbor in zip(fresh_dists.tolist(), fresh):
                if len(best) < ef:
                    heapq.heappush(candidates, (neighbor_dist, neighbor))
                    heapq.heappush(best, (-neighbor_dist, neighbor))
                    worst = -best[0][0]
                elif neighbor_dist < worst:
                    heapq.heappush(candidates, (neighbor_dist, neighbor))
                    heapq.heapreplace(best, (-neighbor_dist, neighbor))
                    worst = -best[0][0]
        return sorted((-d, n) for d, n in best)

    # -- search -------------------------------------------------------

    def search(self, query: np.ndarray, k: int, ef_search: int) -> list[tuple[str, float]]:
        """Top-k (pid, similarity), similarity descending, ties by pid."""
        if not self.pids:
            return []
        query = np.asarray(query, dtype=np.float32)
        if query.shape != (self.dim,):
            raise ValidationError(f"query has shape {query.shape}, expected ({self.dim},)")
        if self.metric == "cosine":
            norm = float(np.linalg.norm(query))
            if norm > 0:
                query = query / norm

        entry = [self.entry_point]
        for layer in range(self.max_level, 0, -1):
            entry = [self._search_layer(query, entry, layer, 1)[0][1]]
        hits = self._search_layer(query, entry, 0, max(ef_search, k))
        scored = [(self.pids[node], -dist) for dist, node in hits]
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:k]

    # -- diagnostics --------------------------------------------------

    def structure_report(self) -> dict:
        """Degree-bound violations, link symmetry, and layer-0 reachability
        from the entry point."""
        degree_violations = 0
        asymmetric_links = 0
        for node, node_layers in enumerate(self.adjacency):
            for layer, links in enumerate(node_layers):
                cap = self.M * 2 if layer == 0 else self.M
                if len(links) > cap:
                    degree_violations += 1
                for neighbor in links:
                    if node not in self.adjacency[neighbor][layer]:
                        asymmetric_links += 1
        unreachable = 0
        if self.entry_point is not None:
            unreachable = int((~self._reachable_at_layer0()).sum())
        return {
            "n_nodes": len(self.pids),
            "max_level": self.max_level,
            "degree_violations": degree_violations,
            "asymmetric_links": asymmetric_links,
            "unreachable_from_entry": unreachable,
        }


def build_dense_index(
    passages: Iterable[Passage],
    embedder: Embedder,
    M: int = 16,
    ef_construction: int = 200,
    metric: str = "ip",
    seed: int = 0,
) -> HnswIndex:
    """Embed the title-prepended text of every passage and index it.

    Insertion order is fixed by pid so builds are reproducible for a given
    seed.
    """
    index = HnswIndex(
        dim=embedder.dim, M=M, ef_construction=ef_construction, metric=metric, seed=seed
    )
    for passage in sorted(passages, key=lambda p: p.pid):
        index.add(passage.pid, embedder.embed(retrieval_text(passage)))
    index.connect_components()
    return index


def dense_search(
    index: HnswIndex, query_vector: np.ndarray, k: int, ef_search: int = 128
) -> list[ScoredCandidate]:
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if ef_search < k:
        raise ValidationError(f"ef_search must be >= k, got ef_search={ef_search} k={k}")
    hits = index.search(query_vector, k, ef_search)
    return [
        ScoredCandidate(pid=pid, retriever_score=similarity, source="dense", retriever_rank=rank)
        for rank, (pid, similarity) in enumerate(hits, start=1)
    ]


def save_dense_index(index: HnswIndex, directory: str | Path) -> None:
    """Binary layout: header, pid table, float32 vectors, per-level adjacency."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(index.pids)
    entry = index.entry_point if index.entry_point is not None else -1
    with (directory / INDEX_FILE).open("wb") as handle:
        handle.write(_MAGIC)
        handle.write(
            struct.pack(
                "<IIIIBxxxqIii",
                1,
                index.dim,
                index.M,
                index.ef_construction,
                _METRIC_CODES[index.metric],
                index.seed,
                n,
                entry,
                index.max_level,
            )
        )
        for pid in index.pids:
            raw = pid.encode("utf-8")
            handle.write(struct.pack("<I", len(raw)))
            handle.write(raw)
        handle.write(index.vectors.astype("<f4").tobytes())
        for node_layers in index.adjacency:
            handle.write(struct.pack("<I", len(node_layers)))
            for links in node_layers:
                handle.write(struct.pack("<I", len(links)))
                handle.write(struct.pack(f"<{len(links)}I", *links))


def load_dense_index(directory: str | Path) -> HnswIndex:
    path = Path(directory) / INDEX_FILE
    with path.open("rb") as handle:
        magic = handle.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValidationError(f"{path} is not a dense index file")
        header = struct.Struct("<IIIIBxxxqIii")
        version, dim, m, efc, metric_code, seed, n, entry, max_level = header.unpack(
            handle.read(header.size)
        )
        if version != 1:
            raise ValidationError(f"unsupported dense index version {version}")
        index = HnswIndex(
            dim=dim, M=m, ef_construction=efc, metric=_METRIC_NAMES[metric_code], seed=seed
        )
        pids = []
        for _ in range(n):
            (length,) = struct.unpack("<I", handle.read(4))
            pids.append(handle.read(length).decode("utf-8"))
        vectors = np.frombuffer(handle.read(n * dim * 4), dtype="<f4").reshape(n, dim)
        adjacency = []
        for _ in range(n):
            (n_levels,) = struct.unpack("<I", handle.read(4))
            node_layers = []
            for _ in range(n_levels):
                (count,) = struct.unpack("<I", handle.read(4))
                node_layers.append(list(struct.unpack(f"<{count}I", handle.read(4 * count))))
            adjacency.append(node_layers)

    index.pids = pids
    index._node_of_pid = {pid: i for i, pid in enumerate(pids)}
    index.levels = [len(layers) - 1 for layers in adjacency]
    index.adjacency = adjacency
    index.entry_point = entry if entry >= 0 else None
    index.max_level = max_level
    index._capacity = n
    index._vectors = np.array(vectors, dtype=np.float32)
    return index
