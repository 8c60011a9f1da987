"""Disk-partitioned vector index.

Vectors are partitioned by k-means. Each partition's members form a small
navigable graph serialized to its own file; only a graph over the centroids
stays in RAM. A search probes the centroid graph for the n_probe nearest
partitions, then loads, searches, and unloads each partition's graph in turn
(at most max_resident_clusters resident at once), finally merging per-cluster
results into a global top-k with ties broken by id.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ecovector.core import Metric, RngState, VectorRecord, distance_batch
from ecovector.errors import DuplicateId, EmptyCorpus, EmptyIndex, UnknownId
from ecovector.hnsw import HnswGraph, HnswParams, OpCounter
from ecovector.storage import (
    INDEX_FORMAT_VERSION,
    FileVectorStore,
    IndexFiles,
)


@dataclass(frozen=True)
class SearchParams:
    """Query-time knobs: k results, n_probe clusters, ef_c centroid beam,
    ef_l per-cluster beam, and the resident-cluster budget."""

    k: int = 10
    n_probe: int = 8
    ef_c: int = 32
    ef_l: int = 64
    max_resident_clusters: int = 1

    def __post_init__(self):
        for name in ("k", "n_probe", "ef_c", "ef_l", "max_resident_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class SearchTrace:
    """Instrumentation for one search call."""

    distance_ops: int = 0
    edges_examined: int = 0
    centroid_ops: int = 0
    clusters_loaded: int = 0
    bytes_read: int = 0
    max_resident: int = 0
    peak_resident_bytes: int = 0
    elapsed_ms: float = 0.0
    events: list[tuple[str, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "distance_ops": self.distance_ops,
            "edges_examined": self.edges_examined,
            "centroid_ops": self.centroid_ops,
            "clusters_loaded": self.clusters_loaded,
            "bytes_read": self.bytes_read,
            "max_resident": self.max_resident,
            "peak_resident_bytes": self.peak_resident_bytes,
            "elapsed_ms": self.elapsed_ms,
        }


@dataclass
class KMeansModel:
    centroids: np.ndarray  # (n_c, dim) float32
    n_iter: int
    inertia: float


def _pairwise_sq(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2, in float64 for stable argmins
    p = points.astype(np.float64)
    c = centroids.astype(np.float64)
    d2 = (
        (p * p).sum(axis=1)[:, None]
        - 2.0 * (p @ c.T)
        + (c * c).sum(axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def kmeans_fit(
    points: np.ndarray,
    n_c: int,
    rng: RngState,
    max_iters: int = 25,
) -> tuple[KMeansModel, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    Ties in assignment go to the lowest cluster index. Empty clusters are
    repaired by re-seeding on the member of the largest cluster farthest from
    its centroid. Returns the model and an int32 assignment per row.
    """
    points = np.ascontiguousarray(points, dtype=np.float32)
    n = points.shape[0]
    if n == 0:
        raise EmptyCorpus("k-means needs at least one point")
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    if n_c > n:
        raise ValueError(f"n_c={n_c} exceeds the number of points ({n})")

    # k-means++ seeding
    chosen = [rng.uniform_index(n)]
    d2 = _pairwise_sq(points, points[chosen[-1]][None, :])[:, 0]
    while len(chosen) < n_c:
        idx = rng.weighted_index(d2.tolist())
        chosen.append(idx)
        d2 = np.minimum(d2, _pairwise_sq(points, points[idx][None, :])[:, 0])
    centroids = points[chosen].astype(np.float32).copy()

    assign = np.full(n, -1, dtype=np.int32)
    it = 0
    for it in range(1, max_iters + 1):
        dists = _pairwise_sq(points, centroids)
        new_assign = dists.argmin(axis=1).astype(np.int32)
        # empty-cluster repair: steal the farthest member of the largest cluster
        for cid in range(n_c):
            if not (new_assign == cid).any():
                counts = np.bincount(new_assign, minlength=n_c)
                big = int(counts.argmax())
                members = np.flatnonzero(new_assign == big)
                far = members[dists[members, big].argmax()]
                centroids[cid] = points[far]
                new_assign[far] = cid
        if (new_assign == assign).all():
            break
        assign = new_assign
        for cid in range(n_c):
            members = assign == cid
            if members.any():
                centroids[cid] = points[members].mean(axis=0, dtype=np.float64)
    inertia = float(_pairwise_sq(points, centroids)[np.arange(n), assign].sum())
    return KMeansModel(centroids, it, inertia), assign


@dataclass
class ClusterInfo:
    live_count: int = 0
    bytes: int = 0


class EcoVectorIndex:
    """Centroid graph in RAM, one graph file per cluster on disk."""

    def __init__(
        self,
        files: IndexFiles,
        vectors: FileVectorStore,
        centroids: np.ndarray,
        centroid_graph: HnswGraph,
        assignments: dict[int, int],
        clusters: dict[int, ClusterInfo],
        hnsw_params: HnswParams,
        metric: Metric,
        seed: int,
    ):
        self.files = files
        self.vectors = vectors
        self.centroids = centroids
        self.centroid_graph = centroid_graph
        self.assignments = assignments
        self.clusters = clusters
        self.hnsw_params = hnsw_params
        self.metric = metric
        self.seed = seed
        self.index_version = 0
        self._resident: dict[int, HnswGraph] = {}

    # -- construction ----------------------------------------------------

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])

    @property
    def n_c(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def live_count(self) -> int:
        return len(self.assignments)

    @staticmethod
    def _build_centroid_graph(
        centroids: np.ndarray,
        params: HnswParams,
        metric: Metric,
        rng: RngState,
    ) -> HnswGraph:
        graph = HnswGraph(lambda cid: centroids[cid], params, metric)
        for cid in range(centroids.shape[0]):
            graph.insert(cid, rng)
        return graph

    @classmethod
    def build(
        cls,
        records: Iterable[VectorRecord],
        index_dir: Path | str,
        n_c: int,
        hnsw_params: HnswParams | None = None,
        metric: Metric = Metric.L2,
        seed: int = 0,
        kmeans_iters: int = 25,
    ) -> "EcoVectorIndex":
        records = list(records)
        if not records:
            raise EmptyCorpus("cannot build an index from zero vectors")
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise DuplicateId("duplicate ids in the build input")
        hnsw_params = hnsw_params or HnswParams()
        matrix = np.stack([r.values for r in records])
        files = IndexFiles(index_dir)
        files.create()
        vectors = files.vector_store(matrix.shape[1])
        vectors.add_batch(ids, matrix)

        rng = RngState(seed)
        model, assign = kmeans_fit(matrix, n_c, rng.fork("kmeans"), kmeans_iters)
        assignments = {ids[i]: int(assign[i]) for i in range(len(ids))}

        clusters: dict[int, ClusterInfo] = {c: ClusterInfo() for c in range(n_c)}
        for cid in range(n_c):
            member_ids = sorted(ids[i] for i in np.flatnonzero(assign == cid))
            if not member_ids:
                continue
            graph = HnswGraph(vectors.get, hnsw_params, metric)
            crng = rng.fork(f"cluster:{cid}")
            for vid in member_ids:
                graph.insert(vid, crng)
            nbytes = files.write_graph(files.cluster_path(cid), graph)
            clusters[cid] = ClusterInfo(live_count=len(member_ids), bytes=nbytes)

        centroid_graph = cls._build_centroid_graph(
            model.centroids, hnsw_params, metric, rng.fork("centroids")
        )
        files.write_graph(files.centroid_graph_path(), centroid_graph)
        files.write_centroids(model.centroids)
        files.write_assignments(assignments)

        index = cls(
            files,
            vectors,
            model.centroids,
            centroid_graph,
            assignments,
            clusters,
            hnsw_params,
            metric,
            seed,
        )
        index._write_manifest()
        return index

    def _write_manifest(self) -> None:
        self.files.write_manifest(
            {
                "format_version": INDEX_FORMAT_VERSION,
                "dim": self.dim,
                "n_c": self.n_c,
                "metric": self.metric.value,
                "seed": self.seed,
                "index_version": self.index_version,
                "live_count": self.live_count,
                "hnsw": {
                    "m": self.hnsw_params.m,
                    "max_m0": self.hnsw_params.max_m0,
                    "ef_construction": self.hnsw_params.ef_construction,
                    "alpha": self.hnsw_params.alpha,
                    "ml": self.hnsw_params.ml,
                    "k_reconnect": self.hnsw_params.k_reconnect,
                },
                "clusters": [
                    {
                        "id": cid,
                        "live_count": info.live_count,
                        "bytes": info.bytes,
                        "file": self.files.cluster_path(cid).name
                        if info.live_count
                        else None,
                    }
                    for cid, info in sorted(self.clusters.items())
                ],
            }
        )

    @classmethod
    def load(cls, index_dir: Path | str) -> "EcoVectorIndex":
        files = IndexFiles(index_dir)
        manifest = files.read_manifest()
        if manifest["format_version"] != INDEX_FORMAT_VERSION:
            raise ValueError(
                f"unsupported index format version {manifest['format_version']}"
            )
        h = manifest["hnsw"]
        hnsw_params = HnswParams(
            m=h["m"],
            max_m0=h["max_m0"],
            ef_construction=h["ef_construction"],
            alpha=h["alpha"],
            ml=h["ml"],
            k_reconnect=h["k_reconnect"],
        )
        metric = Metric(manifest["metric"])
        centroids = files.read_centroids(manifest["n_c"], manifest["dim"])
        vectors = files.vector_store(manifest["dim"])
        assignments = files.read_assignments()
        clusters = {
            entry["id"]: ClusterInfo(entry["live_count"], entry["bytes"])
            for entry in manifest["clusters"]
        }
        centroid_graph = files.read_graph(
            files.centroid_graph_path(),
            lambda cid: centroids[cid],
            hnsw_params,
            metric,
        )
        index = cls(
            files,
            vectors,
            centroids,
            centroid_graph,
            assignments,
            clusters,
            hnsw_params,
            metric,
            manifest["seed"],
        )
        index.index_version = manifest["index_version"]
        return index

    # -- cluster residency -------------------------------------------------

    def _load_cluster(self, cid: int, trace: SearchTrace | None) -> HnswGraph:
        path = self.files.cluster_path(cid)
        data = path.read_bytes()
        graph = self.files.read_graph(path, self.vectors.get, self.hnsw_params, self.metric)
        self._resident[cid] = graph
        if trace is not None:
            trace.clusters_loaded += 1
            trace.bytes_read += len(data)
            trace.events.append(("load", cid))
            trace.max_resident = max(trace.max_resident, len(self._resident))
        return graph

    def _unload_cluster(self, cid: int, trace: SearchTrace | None) -> None:
        self._resident.pop(cid, None)
        if trace is not None:
            trace.events.append(("unload", cid))

    @property
    def resident_clusters(self) -> int:
        return len(self._resident)

    def centroid_resident_bytes(self) -> int:
        return self.centroids.nbytes + self.centroid_graph.memory_bytes()

    # -- search ------------------------------------------------------------

    def search(
        self,
        query,
        params: SearchParams | None = None,
        trace: SearchTrace | None = None,
    ) -> list[tuple[int, float]]:
        """Global top-k as (id, distance), ascending, ties by smaller id."""
        params = params or SearchParams()
        if self.live_count == 0:
            raise EmptyIndex("search on an index with no live vectors")
        t0 = time.perf_counter()
        counter = OpCounter()
        probe = self.centroid_graph.search(
            query, k=params.n_probe, ef=params.ef_c, counter=counter
        )
        if trace is not None:
            trace.centroid_ops = counter.distances
        merged: list[tuple[float, int]] = []
        peak_cluster_bytes = 0
        try:
            for cid, _ in probe:
                if self.clusters[cid].live_count == 0:
                    continue  # empty clusters are skipped silently
                while len(self._resident) >= params.max_resident_clusters:
                    self._unload_cluster(next(iter(self._resident)), trace)
                graph = self._load_cluster(cid, trace)
                k_local = min(params.k, self.clusters[cid].live_count)
                hits = graph.search(query, k=k_local, ef=params.ef_l, counter=counter)
                merged.extend((d, vid) for vid, d in hits)
                peak_cluster_bytes = max(peak_cluster_bytes, graph.memory_bytes())
        finally:
            for cid in list(self._resident):
                self._unload_cluster(cid, trace)
        merged.sort()
        if trace is not None:
            trace.distance_ops = counter.distances
            trace.edges_examined = counter.edges
            trace.peak_resident_bytes = self.centroid_resident_bytes() + peak_cluster_bytes
            trace.elapsed_ms = (time.perf_counter() - t0) * 1e3
        return [(vid, d) for d, vid in merged[: params.k]]

    # -- updates -----------------------------------------------------------

    def _nearest_centroid(self, vec: np.ndarray) -> int:
        d = distance_batch(vec, self.centroids, Metric.L2)
        return int(d.argmin())  # argmin takes the first minimum: lowest id wins ties

    def insert(self, record: VectorRecord) -> int:
        """Route a new vector to its nearest cluster; returns the cluster id."""
        if record.id in self.assignments:
            raise DuplicateId(f"id {record.id} is already live in the index")
        self.vectors.add_batch([record.id], record.values[None, :])
        cid = self._nearest_centroid(record.values)
        info = self.clusters[cid]
        if info.live_count == 0:
            graph = HnswGraph(self.vectors.get, self.hnsw_params, self.metric)
        else:
            graph = self._load_cluster(cid, None)
        graph.insert(record.id, RngState(self.seed).fork(f"insert:{record.id}"))
        info.bytes = self.files.write_graph(self.files.cluster_path(cid), graph)
        info.live_count += 1
        self._unload_cluster(cid, None)
        self.assignments[record.id] = cid
        self.index_version += 1
        self.files.write_assignments(self.assignments)
        self._write_manifest()
        return cid

    def delete(self, vector_id: int) -> int:
        """Remove a live vector; returns the cluster it lived in."""
        cid = self.assignments.get(vector_id)
        if cid is None:
            raise UnknownId(f"id {vector_id} is not live in the index")
        graph = self._load_cluster(cid, None)
        graph.delete(vector_id)
        info = self.clusters[cid]
        info.live_count -= 1
        if info.live_count == 0:
            self.files.cluster_path(cid).unlink(missing_ok=True)
            info.bytes = 0
        else:
            info.bytes = self.files.write_graph(self.files.cluster_path(cid), graph)
        self._unload_cluster(cid, None)
        del self.assignments[vector_id]
        self.index_version += 1
        self.files.write_assignments(self.assignments)
        self._write_manifest()
        return cid

    def rebuild(self, n_c: int | None = None) -> "EcoVectorIndex":
        """Re-partition all live vectors from scratch (centroids retrain here)."""
        records = [VectorRecord(vid, self.vectors.get(vid)) for vid in sorted(self.assignments)]
        rebuilt = EcoVectorIndex.build(
            records,
            self.files.root,
            n_c or self.n_c,
            self.hnsw_params,
            self.metric,
            self.seed,
        )
        rebuilt.index_version = self.index_version + 1
        rebuilt._write_manifest()
        return rebuilt
