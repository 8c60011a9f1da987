"""Persistence: binary graph files, record tables, vector files, index layout.

Graph file format (all integers little-endian):

    magic "ECOV" | version u16 | dim u32 | node_count u32
    per node, ascending id:
        id u64 | level u16 | per level 0..level: count u16, count * u64 ids
    deleted bitmap: ceil(node_count / 8) bytes, bit i = record i tombstoned

Serialization compacts: tombstoned nodes are omitted and edges to them are
dropped, so the bitmap of a freshly written file is all zeros. File size is
computable from the header counts alone.
"""

from __future__ import annotations

import json
import os
import sqlite3
import struct
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ecovector.core import Metric, as_f32
from ecovector.errors import DanglingReference, GraphFormatError, UnknownId
from ecovector.hnsw import HnswGraph, HnswParams

GRAPH_MAGIC = b"ECOV"
GRAPH_FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHII")
_NODE_HEAD = struct.Struct("<QH")
_COUNT = struct.Struct("<H")


# -- graph serialization -----------------------------------------------------


def serialized_graph_size(graph: HnswGraph) -> int:
    """Exact byte size serialize_graph will produce, from counts alone."""
    live = [i for i in graph.neighbors if not graph.is_deleted.get(i, False)]
    total = _HEADER.size
    for nid in live:
        total += _NODE_HEAD.size
        for lst in graph.neighbors[nid]:
            kept = sum(1 for nb in lst if not graph.is_deleted.get(nb, False))
            total += _COUNT.size + 8 * kept
    total += (len(live) + 7) // 8
    return total


def serialize_graph(graph: HnswGraph) -> bytes:
    """Write the live structure of a graph to bytes (tombstones compacted)."""
    live = sorted(i for i in graph.neighbors if not graph.is_deleted.get(i, False))
    out = bytearray()
    out += _HEADER.pack(GRAPH_MAGIC, GRAPH_FORMAT_VERSION, graph.dim or 0, len(live))
    for nid in live:
        lists = graph.neighbors[nid]
        out += _NODE_HEAD.pack(nid, graph.levels[nid])
        for lst in lists:
            kept = [nb for nb in lst if not graph.is_deleted.get(nb, False)]
            out += _COUNT.pack(len(kept))
            out += struct.pack(f"<{len(kept)}Q", *kept)
    out += bytes((len(live) + 7) // 8)  # all-live bitmap
    return bytes(out)


def deserialize_graph(
    data: bytes,
    vector_source,
    params: HnswParams | None = None,
    metric: Metric = Metric.L2,
) -> HnswGraph:
    """Parse graph bytes; rejects bad magic, version, truncation, trailing data.

    The entry point is recomputed deterministically: smallest id among the
    nodes at the highest level.
    """
    if len(data) < _HEADER.size:
        raise GraphFormatError("truncated header")
    magic, version, dim, node_count = _HEADER.unpack_from(data, 0)
    if magic != GRAPH_MAGIC:
        raise GraphFormatError(f"bad magic {magic!r}")
    if version != GRAPH_FORMAT_VERSION:
        raise GraphFormatError(f"unsupported format version {version}")
    pos = _HEADER.size
    graph = HnswGraph(vector_source, params, metric, dim=dim or None)
    order: list[int] = []
    try:
        for _ in range(node_count):
            nid, level = _NODE_HEAD.unpack_from(data, pos)
            pos += _NODE_HEAD.size
            lists: list[list[int]] = []
            for _ in range(level + 1):
                (count,) = _COUNT.unpack_from(data, pos)
                pos += _COUNT.size
                lists.append(list(struct.unpack_from(f"<{count}Q", data, pos)))
                pos += 8 * count
            if nid in graph.neighbors:
                raise GraphFormatError(f"duplicate node id {nid}")
            graph.neighbors[nid] = lists
            graph.levels[nid] = level
            order.append(nid)
    except struct.error:
        raise GraphFormatError("truncated node records") from None
    bitmap_len = (node_count + 7) // 8
    if len(data) - pos != bitmap_len:
        raise GraphFormatError("bad file length")
    bitmap = data[pos:]
    for i, nid in enumerate(order):
        graph.is_deleted[nid] = bool(bitmap[i // 8] >> (i % 8) & 1)
    for nid, lists in graph.neighbors.items():
        for lst in lists:
            for nb in lst:
                if nb not in graph.neighbors:
                    raise GraphFormatError(f"edge {nid}->{nb} to unknown node")
    live = [n for n in order if not graph.is_deleted[n]]
    if live:
        graph.max_level = max(graph.levels[n] for n in live)
        graph.entry_point = min(
            n for n in live if graph.levels[n] == graph.max_level
        )
    return graph


def graph_signature(graph: HnswGraph) -> dict:
    """Live structure as plain data, for structural-equality comparisons."""
    return {
        nid: (
            graph.levels[nid],
            tuple(
                tuple(nb for nb in lst if not graph.is_deleted.get(nb, False))
                for lst in graph.neighbors[nid]
            ),
        )
        for nid in sorted(graph.neighbors)
        if not graph.is_deleted.get(nid, False)
    }


def write_atomic(path: Path | str, data: bytes) -> None:
    """Write via a temp file in the same directory and rename over the target."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# -- record tables ------------------------------------------------------------


@dataclass(frozen=True)
class DocumentRow:
    document_id: int
    path: str
    title: str


@dataclass(frozen=True)
class EmbeddingRow:
    embedding_id: int
    document_id: int
    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", as_f32(self.vector))

    def __eq__(self, other):
        return (
            isinstance(other, EmbeddingRow)
            and self.embedding_id == other.embedding_id
            and self.document_id == other.document_id
            and np.array_equal(self.vector, other.vector)
        )


@dataclass(frozen=True)
class MetadataRow:
    chunk_id: int
    document_id: int
    embedding_offset: int
    char_span: tuple[int, int]


class RecordStore(ABC):
    """Three tables: documents, embeddings, chunk metadata.

    Upserts replace by primary key; embedding and metadata rows must reference
    an existing document. Deleting a document cascades to its embeddings and
    metadata rows.
    """

    @abstractmethod
    def upsert_document(self, row: DocumentRow) -> None: ...

    @abstractmethod
    def get_document(self, document_id: int) -> DocumentRow: ...

    @abstractmethod
    def delete_document(self, document_id: int) -> None: ...

    @abstractmethod
    def document_ids(self) -> list[int]: ...

    @abstractmethod
    def upsert_embedding(self, row: EmbeddingRow) -> None: ...

    @abstractmethod
    def get_embedding(self, embedding_id: int) -> EmbeddingRow: ...

    @abstractmethod
    def delete_embedding(self, embedding_id: int) -> None: ...

    @abstractmethod
    def embedding_ids_for_document(self, document_id: int) -> list[int]: ...

    @abstractmethod
    def upsert_metadata(self, row: MetadataRow) -> None: ...

    @abstractmethod
    def get_metadata(self, chunk_id: int) -> MetadataRow: ...

    @abstractmethod
    def delete_metadata(self, chunk_id: int) -> None: ...

    @abstractmethod
    def metadata_for_document(self, document_id: int) -> list[MetadataRow]: ...

    @abstractmethod
    def counts(self) -> dict[str, int]: ...

    def close(self) -> None:
        pass

    def fetch_chunk_text(self, chunk_id: int) -> str:
        """Resolve a chunk to its exact substring of the source document."""
        meta = self.get_metadata(chunk_id)
        doc = self.get_document(meta.document_id)
        text = Path(doc.path).read_text(encoding="utf-8")
        start, end = meta.char_span
        return text[start:end]


class MemoryStore(RecordStore):
    """Dict-backed store for tests and ephemeral pipelines."""

    def __init__(self):
        self._docs: dict[int, DocumentRow] = {}
        self._embs: dict[int, EmbeddingRow] = {}
        self._meta: dict[int, MetadataRow] = {}

    def upsert_document(self, row: DocumentRow) -> None:
        self._docs[row.document_id] = row

    def get_document(self, document_id: int) -> DocumentRow:
        try:
            return self._docs[document_id]
        except KeyError:
            raise UnknownId(f"document {document_id} not found") from None

    def delete_document(self, document_id: int) -> None:
        if document_id not in self._docs:
            raise UnknownId(f"document {document_id} not found")
        del self._docs[document_id]
        self._embs = {k: v for k, v in self._embs.items() if v.document_id != document_id}
        self._meta = {k: v for k, v in self._meta.items() if v.document_id != document_id}

    def document_ids(self) -> list[int]:
        return sorted(self._docs)

    def _check_doc(self, document_id: int) -> None:
        if document_id not in self._docs:
            raise DanglingReference(f"document {document_id} does not exist")

    def upsert_embedding(self, row: EmbeddingRow) -> None:
        self._check_doc(row.document_id)
        self._embs[row.embedding_id] = row

    def get_embedding(self, embedding_id: int) -> EmbeddingRow:
        try:
            return self._embs[embedding_id]
        except KeyError:
            raise UnknownId(f"embedding {embedding_id} not found") from None

    def delete_embedding(self, embedding_id: int) -> None:
        if embedding_id not in self._embs:
            raise UnknownId(f"embedding {embedding_id} not found")
        del self._embs[embedding_id]

    def embedding_ids_for_document(self, document_id: int) -> list[int]:
        return sorted(k for k, v in self._embs.items() if v.document_id == document_id)

    def upsert_metadata(self, row: MetadataRow) -> None:
        self._check_doc(row.document_id)
        self._meta[row.chunk_id] = row

    def get_metadata(self, chunk_id: int) -> MetadataRow:
        try:
            return self._meta[chunk_id]
        except KeyError:
            raise UnknownId(f"chunk {chunk_id} not found") from None

    def delete_metadata(self, chunk_id: int) -> None:
        if chunk_id not in self._meta:
            raise UnknownId(f"chunk {chunk_id} not found")
        del self._meta[chunk_id]

    def metadata_for_document(self, document_id: int) -> list[MetadataRow]:
        return sorted(
            (v for v in self._meta.values() if v.document_id == document_id),
            key=lambda r: r.chunk_id,
        )

    def counts(self) -> dict[str, int]:
        return {
            "documents": len(self._docs),
            "embeddings": len(self._embs),
            "metadata": len(self._meta),
        }


class SqliteStore(RecordStore):
    """File-backed store; safe for multi-threaded use via a single lock."""

    def __init__(self, path: Path | str):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._lock = threading.Lock()
        with self._lock:
            self._conn.execute("PRAGMA foreign_keys = ON")
            self._conn.executescript(
                """
                CREATE TABLE IF NOT EXISTS documents (
                    document_id INTEGER PRIMARY KEY,
                    path TEXT NOT NULL,
                    title TEXT NOT NULL
                );
                CREATE TABLE IF NOT EXISTS embeddings (
                    embedding_id INTEGER PRIMARY KEY,
                    document_id INTEGER NOT NULL
                        REFERENCES documents(document_id) ON DELETE CASCADE,
                    vector BLOB NOT NULL
                );
                CREATE TABLE IF NOT EXISTS metadata (
                    chunk_id INTEGER PRIMARY KEY,
                    document_id INTEGER NOT NULL
                        REFERENCES documents(document_id) ON DELETE CASCADE,
                    embedding_offset INTEGER NOT NULL,
                    span_start INTEGER NOT NULL,
                    span_end INTEGER NOT NULL
                );
                CREATE INDEX IF NOT EXISTS idx_emb_doc ON embeddings(document_id);
                CREATE INDEX IF NOT EXISTS idx_meta_doc ON metadata(document_id);
                """
            )
            self._conn.commit()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def upsert_document(self, row: DocumentRow) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO documents VALUES (?, ?, ?)",
                (row.document_id, row.path, row.title),
            )
            self._conn.commit()

    def get_document(self, document_id: int) -> DocumentRow:
        with self._lock:
            got = self._conn.execute(
                "SELECT document_id, path, title FROM documents WHERE document_id = ?",
                (document_id,),
            ).fetchone()
        if got is None:
            raise UnknownId(f"document {document_id} not found")
        return DocumentRow(*got)

    def delete_document(self, document_id: int) -> None:
        with self._lock:
            cur = self._conn.execute(
                "DELETE FROM documents WHERE document_id = ?", (document_id,)
            )
            self._conn.commit()
        if cur.rowcount == 0:
            raise UnknownId(f"document {document_id} not found")

    def document_ids(self) -> list[int]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT document_id FROM documents ORDER BY document_id"
            ).fetchall()
        return [r[0] for r in rows]

    def upsert_embedding(self, row: EmbeddingRow) -> None:
        blob = row.vector.astype("<f4").tobytes()
        try:
            with self._lock:
                self._conn.execute(
                    "INSERT OR REPLACE INTO embeddings VALUES (?, ?, ?)",
                    (row.embedding_id, row.document_id, blob),
                )
                self._conn.commit()
        except sqlite3.IntegrityError:
            raise DanglingReference(
                f"document {row.document_id} does not exist"
            ) from None

    def get_embedding(self, embedding_id: int) -> EmbeddingRow:
        with self._lock:
            got = self._conn.execute(
                "SELECT embedding_id, document_id, vector FROM embeddings"
                " WHERE embedding_id = ?",
                (embedding_id,),
            ).fetchone()
        if got is None:
            raise UnknownId(f"embedding {embedding_id} not found")
        return EmbeddingRow(got[0], got[1], np.frombuffer(got[2], dtype="<f4"))

    def delete_embedding(self, embedding_id: int) -> None:
        with self._lock:
            cur = self._conn.execute(
                "DELETE FROM embeddings WHERE embedding_id = ?", (embedding_id,)
            )
            self._conn.commit()
        if cur.rowcount == 0:
            raise UnknownId(f"embedding {embedding_id} not found")

    def embedding_ids_for_document(self, document_id: int) -> list[int]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT embedding_id FROM embeddings WHERE document_id = ?"
                " ORDER BY embedding_id",
                (document_id,),
            ).fetchall()
        return [r[0] for r in rows]

    def upsert_metadata(self, row: MetadataRow) -> None:
        try:
            with self._lock:
                self._conn.execute(
                    "INSERT OR REPLACE INTO metadata VALUES (?, ?, ?, ?, ?)",
                    (
                        row.chunk_id,
                        row.document_id,
                        row.embedding_offset,
                        row.char_span[0],
                        row.char_span[1],
                    ),
                )
                self._conn.commit()
        except sqlite3.IntegrityError:
            raise DanglingReference(
                f"document {row.document_id} does not exist"
            ) from None

    def get_metadata(self, chunk_id: int) -> MetadataRow:
        with self._lock:
            got = self._conn.execute(
                "SELECT chunk_id, document_id, embedding_offset, span_start, span_end"
                " FROM metadata WHERE chunk_id = ?",
                (chunk_id,),
            ).fetchone()
        if got is None:
            raise UnknownId(f"chunk {chunk_id} not found")
        return MetadataRow(got[0], got[1], got[2], (got[3], got[4]))

    def delete_metadata(self, chunk_id: int) -> None:
        with self._lock:
            cur = self._conn.execute(
                "DELETE FROM metadata WHERE chunk_id = ?", (chunk_id,)
            )
            self._conn.commit()
        if cur.rowcount == 0:
            raise UnknownId(f"chunk {chunk_id} not found")

    def metadata_for_document(self, document_id: int) -> list[MetadataRow]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT chunk_id, document_id, embedding_offset, span_start, span_end"
                " FROM metadata WHERE document_id = ? ORDER BY chunk_id",
                (document_id,),
            ).fetchall()
        return [MetadataRow(r[0], r[1], r[2], (r[3], r[4])) for r in rows]

    def counts(self) -> dict[str, int]:
        with self._lock:
            docs = self._conn.execute("SELECT COUNT(*) FROM documents").fetchone()[0]
            embs = self._conn.execute("SELECT COUNT(*) FROM embeddings").fetchone()[0]
            meta = self._conn.execute("SELECT COUNT(*) FROM metadata").fetchone()[0]
        return {"documents": docs, "embeddings": embs, "metadata": meta}


# -- vector stores -------------------------------------------------------------


class MemoryVectorStore:
    """id -> float32 vector map kept in RAM."""

    def __init__(self):
        self._vecs: dict[int, np.ndarray] = {}

    def get(self, vector_id: int) -> np.ndarray:
        try:
            return self._vecs[vector_id]
        except KeyError:
            raise UnknownId(f"no vector for id {vector_id}") from None

    def add_batch(self, ids, matrix) -> None:
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        for i, vid in enumerate(ids):
            self._vecs[int(vid)] = matrix[i]

    def ids(self) -> list[int]:
        return sorted(self._vecs)

    def __contains__(self, vector_id: int) -> bool:
        return vector_id in self._vecs

    def __len__(self) -> int:
        return len(self._vecs)


class FileVectorStore:
    """Append-only vector storage: ids.u64 + vectors.f32, read via memmap.

    Rows for ids that were deleted upstream simply become unreferenced;
    compaction is out of scope.
    """

    def __init__(self, directory: Path | str, dim: int):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.dim = int(dim)
        self._ids_path = self.dir / "ids.u64"
        self._vec_path = self.dir / "vectors.f32"
        self._ids_path.touch(exist_ok=True)
        self._vec_path.touch(exist_ok=True)
        self._mmap: np.memmap | None = None
        self._row_of: dict[int, int] = {}
        self._reload()

    def _reload(self) -> None:
        ids = np.fromfile(self._ids_path, dtype="<u8")
        self._row_of = {int(v): i for i, v in enumerate(ids)}
        n = len(ids)
        if n:
            self._mmap = np.memmap(
                self._vec_path, dtype="<f4", mode="r", shape=(n, self.dim)
            )
        else:
            self._mmap = None

    def add_batch(self, ids, matrix) -> None:
        matrix = np.ascontiguousarray(matrix, dtype="<f4")
        if matrix.ndim != 2 or matrix.shape[1] != self.dim:
            raise ValueError(f"expected shape (n, {self.dim}), got {matrix.shape}")
        with open(self._ids_path, "ab") as fh:
            fh.write(np.asarray(ids, dtype="<u8").tobytes())
        with open(self._vec_path, "ab") as fh:
            fh.write(matrix.tobytes())
        self._reload()

    def get(self, vector_id: int) -> np.ndarray:
        row = self._row_of.get(vector_id)
        if row is None:
            raise UnknownId(f"no vector for id {vector_id}")
        return np.array(self._mmap[row])

    def ids(self) -> list[int]:
        return sorted(self._row_of)

    def __contains__(self, vector_id: int) -> bool:
        return vector_id in self._row_of

    def __len__(self) -> int:
        return len(self._row_of)


# -- index directory ------------------------------------------------------------


INDEX_FORMAT_VERSION = 1


class IndexFiles:
    """File layout of one index directory.

    manifest.json         parameters, dimension, cluster ids, format version
    centroids.f32         n_c * dim float32, little-endian
    assignments.bin       rows of (id u64, cluster u32)
    centroid_graph.ecov   graph file over centroid ids
    clusters/<c>.ecov     one graph file per non-empty cluster
    vectors/              FileVectorStore payload
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.clusters_dir = self.root / "clusters"
        self.manifest_path = self.root / "manifest.json"

    def create(self) -> None:
        self.clusters_dir.mkdir(parents=True, exist_ok=True)

    def exists(self) -> bool:
        return self.manifest_path.is_file()

    def write_manifest(self, manifest: dict) -> None:
        payload = json.dumps(manifest, indent=2, sort_keys=True).encode()
        write_atomic(self.manifest_path, payload)

    def read_manifest(self) -> dict:
        if not self.exists():
            raise FileNotFoundError(f"no manifest at {self.manifest_path}")
        return json.loads(self.manifest_path.read_text())

    def write_centroids(self, centroids: np.ndarray) -> None:
        write_atomic(self.root / "centroids.f32", centroids.astype("<f4").tobytes())

    def read_centroids(self, n_c: int, dim: int) -> np.ndarray:
        data = np.fromfile(self.root / "centroids.f32", dtype="<f4")
        return data.reshape(n_c, dim)

    def write_assignments(self, assignments: dict[int, int]) -> None:
        out = bytearray()
        for vid in sorted(assignments):
            out += struct.pack("<QI", vid, assignments[vid])
        write_atomic(self.root / "assignments.bin", bytes(out))

    def read_assignments(self) -> dict[int, int]:
        data = (self.root / "assignments.bin").read_bytes()
        step = struct.calcsize("<QI")
        if len(data) % step:
            raise GraphFormatError("assignments file has a partial row")
        return {
            vid: cid
            for vid, cid in struct.iter_unpack("<QI", data)
        }

    def cluster_path(self, cluster_id: int) -> Path:
        return self.clusters_dir / f"cluster_{cluster_id:06d}.ecov"

    def centroid_graph_path(self) -> Path:
        return self.root / "centroid_graph.ecov"

    def write_graph(self, path: Path, graph: HnswGraph) -> int:
        data = serialize_graph(graph)
        write_atomic(path, data)
        return len(data)

    def read_graph(
        self,
        path: Path,
        vector_source,
        params: HnswParams | None,
        metric: Metric,
    ) -> HnswGraph:
        return deserialize_graph(path.read_bytes(), vector_source, params, metric)

    def vector_store(self, dim: int) -> FileVectorStore:
        return FileVectorStore(self.root / "vectors", dim)
