"""Hierarchical navigable small-world graph with update support.

The graph stores only ids and adjacency; vectors are resolved on demand
through a caller-supplied ``vector_source``, so the same structure serves both
the RAM-resident centroid layer and cluster graphs loaded from disk.

Deletion repairs the neighborhood it tears open: every former neighbor of the
removed node is re-wired from the union of its surviving neighbors, the
removed node's other former neighbors, and a beam-searched set of nearby live
nodes, then re-pruned to its degree cap. Edges stay symmetric at every level
after every operation.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from ecovector import kernels
from ecovector.core import Metric, RngState, as_f32
from ecovector.errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyGraph,
    UnknownId,
)

VectorSource = Callable[[int], np.ndarray]


@dataclass(frozen=True)
class HnswParams:
    """Construction parameters.

    m: target degree above level 0 (cap per level).
    max_m0: degree cap at level 0; defaults to 2*m.
    ef_construction: beam width while inserting; must be >= m.
    alpha: pruning slack >= 1. At 1.0 a candidate is dropped when some
        already-kept neighbor is strictly closer to it than the target is;
        larger values keep progressively more near-duplicates.
    ml: level-sampling scale; defaults to 1/ln(m).
    k_reconnect: extra nearby nodes considered when re-wiring neighbors of a
        deleted node; defaults to 2*m.
    """

    m: int = 8
    max_m0: int | None = None
    ef_construction: int = 64
    alpha: float = 1.0
    ml: float | None = None
    k_reconnect: int | None = None

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if self.max_m0 is None:
            object.__setattr__(self, "max_m0", 2 * self.m)
        if self.max_m0 < self.m:
            raise ValueError("max_m0 must be >= m")
        if self.ef_construction < self.m:
            raise ValueError("ef_construction must be >= m")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1.0")
        if self.ml is None:
            object.__setattr__(self, "ml", 1.0 / math.log(self.m))
        if self.ml <= 0:
            raise ValueError("ml must be positive")
        if self.k_reconnect is None:
            object.__setattr__(self, "k_reconnect", 2 * self.m)
        if self.k_reconnect < 1:
            raise ValueError("k_reconnect must be >= 1")


class OpCounter:
    """Counters threaded through searches.

    distances counts actual kernel invocations (each node scored once per
    traversal thanks to the visited set). edges counts neighbor links
    examined, including ones skipped as already visited; this is the
    granularity analytical ef*M cost expressions are written in.
    """

    __slots__ = ("distances", "edges")

    def __init__(self):
        self.distances = 0
        self.edges = 0


def get_random_level(ml: float, rng: RngState) -> int:
    """Draw a node level: floor(-ln(u) * ml) with u uniform in (0, 1].

    P(level >= l) = exp(-l/ml); u == 1.0 maps to level 0.
    """
    u = 1.0 - rng.random()
    return int(-math.log(u) * ml)


class HnswGraph:
    """Mutable multi-level proximity graph over externally stored vectors."""

    def __init__(
        self,
        vector_source: VectorSource,
        params: HnswParams | None = None,
        metric: Metric = Metric.L2,
        dim: int | None = None,
    ):
        self.params = params or HnswParams()
        self.metric = metric
        self.dim = dim
        self._source = vector_source
        # id -> neighbor-id list per level 0..levels[id]
        self.neighbors: dict[int, list[list[int]]] = {}
        # retained for tombstones so revival reuses the stored level
        self.levels: dict[int, int] = {}
        self.is_deleted: dict[int, bool] = {}
        self.entry_point: int | None = None
        self.max_level: int = 0
        self._vec_cache: dict[int, np.ndarray] = {}

    # -- vector access -----------------------------------------------------

    def _vec(self, node_id: int) -> np.ndarray:
        vec = self._vec_cache.get(node_id)
        if vec is None:
            try:
                vec = as_f32(self._source(node_id))
            except KeyError:
                raise UnknownId(f"no vector for id {node_id}") from None
            if self.dim is not None and vec.shape[0] != self.dim:
                raise DimensionMismatch(
                    f"vector for id {node_id} has dim {vec.shape[0]}, graph has {self.dim}"
                )
            self._vec_cache[node_id] = vec
        return vec

    def _dist(self, qvec: np.ndarray, node_id: int, counter: OpCounter | None) -> float:
        if counter is not None:
            counter.distances += 1
        vec = self._vec(node_id)
        if self.metric == Metric.L2:
            return kernels.l2_sq(qvec, vec)
        if self.metric == Metric.INNER_PRODUCT:
            return kernels.ip_dist(qvec, vec)
        return kernels.cosine_dist(qvec, vec)

    def _pair_dist(self, a: int, b: int, counter: OpCounter | None = None) -> float:
        return self._dist(self._vec(a), b, counter)

    # -- introspection -----------------------------------------------------

    def is_live(self, node_id: int) -> bool:
        return node_id in self.neighbors and not self.is_deleted.get(node_id, False)

    def live_ids(self) -> Iterator[int]:
        for node_id in self.neighbors:
            if not self.is_deleted.get(node_id, False):
                yield node_id

    @property
    def live_count(self) -> int:
        return sum(1 for _ in self.live_ids())

    def __len__(self) -> int:
        return self.live_count

    def __contains__(self, node_id: int) -> bool:
        return self.is_live(node_id)

    def neighbor_list(self, node_id: int, level: int) -> list[int]:
        return list(self.neighbors[node_id][level])

    def _cap(self, level: int) -> int:
        return self.params.max_m0 if level == 0 else self.params.m

    def memory_bytes(self) -> int:
        """Resident footprint: cached vectors plus 8 bytes per adjacency slot."""
        vec_bytes = sum(v.nbytes for v in self._vec_cache.values())
        link_bytes = 8 * sum(
            len(lst) for lists in self.neighbors.values() for lst in lists
        )
        return vec_bytes + link_bytes

    # -- traversal ---------------------------------------------------------

    def _greedy_descent(
        self, cur: int, qvec: np.ndarray, level: int, counter: OpCounter | None
    ) -> int:
        cur_dist = self._dist(qvec, cur, counter)
        improved = True
        while improved:
            improved = False
            for nb in self.neighbors[cur][level]:
                if counter is not None:
                    counter.edges += 1
                if nb < 0 or self.is_deleted.get(nb, False):
                    continue
                d = self._dist(qvec, nb, counter)
                if d < cur_dist:
                    cur, cur_dist = nb, d
                    improved = True
                    break
        return cur

    def _beam(
        self,
        entries: Iterable[int],
        qvec: np.ndarray,
        level: int,
        ef: int,
        counter: OpCounter | None = None,
        exclude: int | None = None,
    ) -> list[tuple[float, int]]:
        """Best-first expansion keeping the ef closest live nodes to qvec.

        Returns (distance, id) pairs sorted ascending, ties by id. With ef at
        least the size of the connected component this visits all of it.
        """
        visited: set[int] = set()
        cand: list[tuple[float, int]] = []
        # worst-first heap: invert both keys so heap[0] is the (dist, id) max
        res: list[tuple[float, int]] = []
        for e in entries:
            if e in visited or e == exclude:
                continue
            visited.add(e)
            if self.is_deleted.get(e, False):
                continue
            d = self._dist(qvec, e, counter)
            heapq.heappush(cand, (d, e))
            heapq.heappush(res, (-d, -e))
        while len(res) > ef:
            heapq.heappop(res)
        while cand:
            d, v = heapq.heappop(cand)
            if len(res) >= ef and d > -res[0][0]:
                break
            for nb in self.neighbors[v][level]:
                if counter is not None:
                    counter.edges += 1
                if nb < 0 or nb in visited or nb == exclude:
                    continue
                visited.add(nb)
                if self.is_deleted.get(nb, False):
                    continue
                dn = self._dist(qvec, nb, counter)
                if len(res) < ef or (-dn, -nb) > res[0]:
                    heapq.heappush(cand, (dn, nb))
                    heapq.heappush(res, (-dn, -nb))
                    if len(res) > ef:
                        heapq.heappop(res)
        return sorted((-nd, -nid) for nd, nid in res)

    # -- construction ------------------------------------------------------

    def expand_candidates(
        self,
        cur: int,
        target_id: int,
        level: int,
        ef: int,
        counter: OpCounter | None = None,
    ) -> list[tuple[float, int]]:
        """Beam outward from cur toward target_id's vector at one level."""
        if not self.is_live(cur):
            raise UnknownId(f"start node {cur} is not live")
        return self._beam(
            [cur], self._vec(target_id), level, ef, counter, exclude=target_id
        )

    def robust_prune(
        self,
        candidates: list[tuple[float, int]],
        alpha: float,
        max_m: int,
        target_id: int,
    ) -> list[int]:
        """Select up to max_m diverse neighbors for target_id.

        Candidates are (distance-to-target, id); scanned ascending, a
        candidate c is kept unless some already-kept a has
        alpha * dist(c, a) < dist(c, target).
        """
        kept: list[int] = []
        for d, c in sorted(candidates):
            if c == target_id or c in kept or self.is_deleted.get(c, False):
                continue
            if any(alpha * self._pair_dist(c, a) < d for a in kept):
                continue
            kept.append(c)
            if len(kept) >= max_m:
                break
        return kept

    def _drop_edge(self, a: int, b: int, level: int) -> None:
        lst = self.neighbors[a][level]
        try:
            lst.remove(b)
        except ValueError:
            pass

    def _reprune_overflow(self, node: int, level: int) -> None:
        lst = self.neighbors[node][level]
        cap = self._cap(level)
        if len(lst) <= cap:
            return
        scored = [(self._pair_dist(node, x), x) for x in lst]
        new = self.robust_prune(scored, self.params.alpha, cap, node)
        dropped = set(lst) - set(new)
        self.neighbors[node][level] = new
        for x in dropped:
            self._drop_edge(x, node, level)

    def connect_two_way(self, node_id: int, chosen: list[int], level: int) -> None:
        """Install node_id's neighbor list and the reciprocal edges.

        Any neighbor whose list overflows its cap is re-pruned; edges dropped
        by that re-prune are removed from both endpoints.
        """
        self.neighbors[node_id][level] = list(chosen)
        for n in chosen:
            lst = self.neighbors[n][level]
            if node_id not in lst:
                lst.append(node_id)
            self._reprune_overflow(n, level)

    def insert(
        self, node_id: int, rng: RngState | None = None, *, level: int | None = None
    ) -> int:
        """Insert node_id (vector comes from the source); returns its level.

        Re-inserting a tombstoned id revives it, reusing its stored level when
        that level is positive. Inserting a live id raises DuplicateId.
        """
        if self.is_live(node_id):
            raise DuplicateId(f"id {node_id} is already live")
        vec = self._vec(node_id)
        if self.dim is None:
            self.dim = int(vec.shape[0])
        if level is not None:
            lvl = level
        else:
            lvl = self.levels.get(node_id, 0)
            if lvl <= 0:
                if rng is None:
                    raise ValueError("rng is required to draw a level for a new id")
                lvl = get_random_level(self.params.ml, rng)
        if self.entry_point is None:
            self.neighbors[node_id] = [[] for _ in range(lvl + 1)]
            self.levels[node_id] = lvl
            self.is_deleted[node_id] = False
            self.entry_point = node_id
            self.max_level = lvl
            return lvl
        cur = self.entry_point
        for l in range(self.max_level, lvl, -1):
            cur = self._greedy_descent(cur, vec, l, None)
        self.neighbors[node_id] = [[] for _ in range(lvl + 1)]
        self.levels[node_id] = lvl
        for l in range(min(lvl, self.max_level), -1, -1):
            cand = self.expand_candidates(cur, node_id, l, self.params.ef_construction)
            chosen = self.robust_prune(cand, self.params.alpha, self._cap(l), node_id)
            self.connect_two_way(node_id, chosen, l)
        self.is_deleted[node_id] = False
        if lvl > self.max_level:
            self.max_level = lvl
            self.entry_point = node_id
        return lvl

    # -- deletion ----------------------------------------------------------

    def _select_new_entry(self, excluding: int) -> int | None:
        best: tuple[int, int] | None = None  # (-level, id)
        for nid in self.live_ids():
            if nid == excluding:
                continue
            key = (-self.levels[nid], nid)
            if best is None or key < best:
                best = key
        return None if best is None else best[1]

    def _set_neighbors_symmetric(self, node: int, level: int, new_list: list[int]) -> None:
        old = self.neighbors[node][level]
        old_set, new_set = set(old), set(new_list)
        self.neighbors[node][level] = list(new_list)
        for x in old_set - new_set:
            self._drop_edge(x, node, level)
        for x in new_set - old_set:
            lst = self.neighbors[x][level]
            if node not in lst:
                lst.append(node)
            self._reprune_overflow(x, level)

    def delete(self, label: int, k_reconnect: int | None = None) -> None:
        """Remove a live node, re-wiring its former neighbors at every level."""
        if not self.is_live(label):
            raise UnknownId(f"id {label} is not live")
        if k_reconnect is None:
            k_reconnect = self.params.k_reconnect
        if label == self.entry_point:
            repl = self._select_new_entry(label)
            if repl is None:
                self.neighbors.pop(label)
                self.is_deleted[label] = True
                self.entry_point = None
                self.max_level = 0
                return
            self.entry_point = repl
            self.max_level = self.levels[repl]
        elif self.levels[label] == self.max_level:
            self.max_level = max(
                (self.levels[n] for n in self.live_ids() if n != label), default=0
            )
        for l in range(0, self.levels[label] + 1):
            old_nbrs = [
                nb for nb in self.neighbors[label][l]
                if not self.is_deleted.get(nb, False)
            ]
            for nb in old_nbrs:
                self._drop_edge(nb, label, l)
            self.neighbors[label][l] = []
            for nb in old_nbrs:
                pool = set(self.neighbors[nb][l])
                pool.update(x for x in old_nbrs if x != nb)
                near = self._beam(old_nbrs, self._vec(nb), l, k_reconnect, exclude=label)
                pool.update(nid for _, nid in near)
                pool.discard(nb)
                pool.discard(label)
                scored = [(self._pair_dist(nb, x), x) for x in pool]
                new_list = self.robust_prune(scored, self.params.alpha, self._cap(l), nb)
                self._set_neighbors_symmetric(nb, l, new_list)
        self.neighbors.pop(label)
        self.is_deleted[label] = True
        self._vec_cache.pop(label, None)

    # -- search ------------------------------------------------------------

    def search(
        self,
        query,
        k: int,
        ef: int | None = None,
        counter: OpCounter | None = None,
    ) -> list[tuple[int, float]]:
        """Top-k live nodes for a query vector: (id, distance) ascending,
        ties broken by smaller id. ef defaults to 2*k."""
        if k <= 0:
            raise ValueError(f"k must be positive, got {k}")
        if self.entry_point is None:
            raise EmptyGraph("search on an empty graph")
        qvec = as_f32(query)
        if self.dim is not None and qvec.shape[0] != self.dim:
            raise DimensionMismatch(
                f"query has dim {qvec.shape[0]}, graph has {self.dim}"
            )
        if ef is None:
            ef = 2 * k
        ef = max(ef, k)
        cur = self.entry_point
        for l in range(self.max_level, 0, -1):
            cur = self._greedy_descent(cur, qvec, l, counter)
        found = self._beam([cur], qvec, 0, ef, counter)
        return [(nid, d) for d, nid in found[:k]]

    # -- consistency checks (used heavily by tests) -------------------------

    def validate(self) -> None:
        """Assert structural invariants; raises AssertionError on violation."""
        for nid, lists in self.neighbors.items():
            assert len(lists) == self.levels[nid] + 1, f"node {nid} level/list mismatch"
            assert not self.is_deleted.get(nid, False), f"tombstone {nid} kept adjacency"
            for l, lst in enumerate(lists):
                assert len(lst) <= self._cap(l), f"degree cap violated at {nid} level {l}"
                assert len(set(lst)) == len(lst), f"duplicate edges at {nid} level {l}"
                for nb in lst:
                    assert nb != nid, f"self-edge at {nid}"
                    assert nb in self.neighbors, f"edge {nid}->{nb} to missing node"
                    assert self.levels[nb] >= l, f"edge {nid}->{nb} above {nb}'s level"
                    assert nid in self.neighbors[nb][l], (
                        f"asymmetric edge {nid}->{nb} at level {l}"
                    )
        if self.entry_point is not None:
            assert self.is_live(self.entry_point), "entry point is not live"
            live_max = max((self.levels[n] for n in self.live_ids()), default=0)
            assert self.max_level == live_max, "max_level out of sync"
