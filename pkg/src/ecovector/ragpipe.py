"""End-to-end orchestration: chunk and embed documents, build and update the
partitioned index plus the three record tables, and answer queries by
retrieve -> reduce -> prompt -> generate with a TTFT breakdown.

Embedding and generation are pluggable clients. The bundled test doubles
(DeterministicHashEmbedder, EchoStub) are fully offline and deterministic.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ecovector.core import Metric, VectorRecord
from ecovector.errors import (
    EcoVectorError,
    EmptyCorpus,
    EmptyIndex,
    GenerationUnavailable,
    UnknownId,
)
from ecovector.hnsw import HnswParams
from ecovector.index import EcoVectorIndex, SearchParams, SearchTrace
from ecovector.scr import (
    ReducedDocument,
    RetrievedDocument,
    ScrParams,
    run_scr,
    whitespace_tokens,
)
from ecovector.storage import (
    DocumentRow,
    EmbeddingRow,
    MetadataRow,
    RecordStore,
    SqliteStore,
)

_TOKEN_RE = re.compile(r"\S+")

PROMPT_TEMPLATE_VERSION = "v1"
NO_CONTEXT_ANSWER = "No indexed context is available to answer this question."


def chunk_spans(text: str, chunk_tokens: int = 128) -> list[tuple[int, int]]:
    """Character spans covering runs of chunk_tokens whitespace tokens.

    Spans index into the original text, so slicing reproduces the chunk
    (leading/trailing whitespace excluded, interior whitespace preserved).
    """
    if chunk_tokens < 1:
        raise ValueError("chunk_tokens must be >= 1")
    matches = list(_TOKEN_RE.finditer(text))
    spans = []
    for i in range(0, len(matches), chunk_tokens):
        group = matches[i : i + chunk_tokens]
        spans.append((group[0].start(), group[-1].end()))
    return spans


class DeterministicHashEmbedder:
    """Offline bag-of-hashed-tokens embedder, L2-normalized.

    Same text always maps to the same unit vector; tokens sharing a document
    pull its vector toward theirs, so topically similar texts land close.
    """

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            for token in text.lower().split():
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                slot = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                out[i, slot] += sign
            norm = float(np.linalg.norm(out[i]))
            if norm == 0.0:
                out[i, 0] = 1.0
            else:
                out[i] /= norm
        return out


class ExternalEndpointEmbedder:
    """HTTP embedder: POST {"texts": [...]} -> {"vectors": [[...], ...]}."""

    def __init__(self, url: str, dim: int, timeout_s: float = 30.0):
        self.url = url
        self.dim = dim
        self.timeout_s = timeout_s

    def embed(self, texts: list[str]) -> np.ndarray:
        import httpx

        try:
            response = httpx.post(
                self.url, json={"texts": list(texts)}, timeout=self.timeout_s
            )
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise EcoVectorError(f"embedding endpoint failed: {exc}") from exc
        vectors = np.asarray(response.json()["vectors"], dtype=np.float32)
        if vectors.shape != (len(texts), self.dim):
            raise EcoVectorError(
                f"embedding endpoint returned shape {vectors.shape}, "
                f"expected {(len(texts), self.dim)}"
            )
        return vectors


class EchoStub:
    """Offline generation stub: a short deterministic summary of the prompt."""

    def generate(self, prompt: str, stream: bool = False) -> Iterator[str]:
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:8]
        pieces = [
            "[stub-answer",
            f" tokens={whitespace_tokens(prompt)}",
            f" digest={digest}",
            "]",
        ]
        return iter(pieces)


class ExternalEndpointClient:
    """HTTP generator: POST {"prompt": ..., "stream": bool}.

    Non-streaming responses carry {"text": ...}; streaming responses are
    newline-delimited JSON objects {"token": ...}.
    """

    def __init__(self, url: str, timeout_s: float = 120.0):
        self.url = url
        self.timeout_s = timeout_s

    def generate(self, prompt: str, stream: bool = False) -> Iterator[str]:
        import httpx

        try:
            if not stream:
                response = httpx.post(
                    self.url,
                    json={"prompt": prompt, "stream": False},
                    timeout=self.timeout_s,
                )
                response.raise_for_status()
                return iter([response.json()["text"]])
            return self._stream(prompt)
        except httpx.HTTPError as exc:
            raise GenerationUnavailable(f"generation endpoint failed: {exc}") from exc

    def _stream(self, prompt: str) -> Iterator[str]:
        import httpx

        try:
            with httpx.stream(
                "POST",
                self.url,
                json={"prompt": prompt, "stream": True},
                timeout=self.timeout_s,
            ) as response:
                response.raise_for_status()
                for line in response.iter_lines():
                    if line:
                        yield json.loads(line)["token"]
        except httpx.HTTPError as exc:
            raise GenerationUnavailable(f"generation endpoint failed: {exc}") from exc


@dataclass(frozen=True)
class Reference:
    doc_id: int
    title: str
    score: float


@dataclass
class Timings:
    """TTFT decomposition, all milliseconds. ttft_ms is measured wall time to
    the first generated token; the three stage fields are measured around
    their stages and sum to ttft_ms up to timer resolution."""

    retrieval_ms: float = 0.0
    scr_ms: float = 0.0
    generation_first_token_ms: float = 0.0
    ttft_ms: float = 0.0
    total_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "retrieval_ms": self.retrieval_ms,
            "scr_ms": self.scr_ms,
            "generation_first_token_ms": self.generation_first_token_ms,
            "ttft_ms": self.ttft_ms,
            "total_ms": self.total_ms,
        }


@dataclass
class QueryResult:
    query_id: str
    answer: str
    references: list[Reference]
    timings: Timings
    prompt: str
    reduced: list[ReducedDocument] = field(default_factory=list)
    trace: SearchTrace | None = None


def render_prompt(reduced: list[ReducedDocument], titles: dict[int, str], query: str) -> str:
    """Versioned prompt template: titled context blocks in reduction order,
    then the question."""
    blocks = [
        f"[{titles.get(r.doc_id, f'doc {r.doc_id}')}]\n{r.text}"
        for r in reduced
        if r.text
    ]
    context = "\n\n".join(blocks)
    return (
        "Use the context below to answer the question.\n\n"
        f"{context}\n\nQuestion: {query}\nAnswer:"
    )


class Pipeline:
    """Owns the index, the record store, and the two model clients."""

    def __init__(
        self,
        index: EcoVectorIndex,
        store: RecordStore,
        embedder,
        generator,
        scr_params: ScrParams | None = None,
        search_params: SearchParams | None = None,
    ):
        self.index = index
        self.store = store
        self.embedder = embedder
        self.generator = generator
        self.scr_params = scr_params or ScrParams()
        self.search_params = search_params or SearchParams()
        self._query_counter = 0

    # -- construction ------------------------------------------------------

    @staticmethod
    def _chunk_document(text: str, chunk_tokens: int) -> list[tuple[int, int]]:
        return chunk_spans(text, chunk_tokens)

    @classmethod
    def build(
        cls,
        doc_paths: Iterable[Path | str],
        index_dir: Path | str,
        embedder,
        generator=None,
        n_c: int = 16,
        chunk_tokens: int = 128,
        hnsw_params: HnswParams | None = None,
        scr_params: ScrParams | None = None,
        search_params: SearchParams | None = None,
        metric: Metric = Metric.L2,
        seed: int = 0,
        store: RecordStore | None = None,
        titles: list[str] | None = None,
    ) -> "Pipeline":
        index_dir = Path(index_dir)
        index_dir.mkdir(parents=True, exist_ok=True)
        paths = [Path(p) for p in doc_paths]
        if not paths:
            raise EmptyCorpus("no documents to index")
        if titles is not None and len(titles) != len(paths):
            raise ValueError("titles must parallel doc_paths")
        store = store or SqliteStore(index_dir / "tables.db")
        records: list[VectorRecord] = []
        chunk_id = 0
        texts_to_embed: list[str] = []
        pending: list[tuple[int, int, tuple[int, int]]] = []  # chunk, doc, span
        for doc_id, path in enumerate(paths):
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise EcoVectorError(f"cannot read {path}: {exc}") from exc
            title = titles[doc_id] if titles else path.stem
            store.upsert_document(DocumentRow(doc_id, str(path), title))
            for offset, span in enumerate(cls._chunk_document(text, chunk_tokens)):
                store.upsert_metadata(MetadataRow(chunk_id, doc_id, offset, span))
                texts_to_embed.append(text[span[0] : span[1]])
                pending.append((chunk_id, doc_id, span))
                chunk_id += 1
        if not pending:
            raise EmptyCorpus("documents contained no tokens to index")
        vectors = np.asarray(embedder.embed(texts_to_embed), dtype=np.float32)
        for (cid, doc_id, _), vec in zip(pending, vectors):
            store.upsert_embedding(EmbeddingRow(cid, doc_id, vec))
            records.append(VectorRecord(cid, vec))
        index = EcoVectorIndex.build(
            records,
            index_dir / "index",
            n_c=min(n_c, len(records)),
            hnsw_params=hnsw_params,
            metric=metric,
            seed=seed,
        )
        return cls(index, store, embedder, generator or EchoStub(),
                   scr_params, search_params)

    @classmethod
    def load(
        cls,
        index_dir: Path | str,
        embedder,
        generator=None,
        scr_params: ScrParams | None = None,
        search_params: SearchParams | None = None,
    ) -> "Pipeline":
        index_dir = Path(index_dir)
        index = EcoVectorIndex.load(index_dir / "index")
        store = SqliteStore(index_dir / "tables.db")
        return cls(index, store, embedder, generator or EchoStub(),
                   scr_params, search_params)

    # -- maintenance ---------------------------------------------------------

    def _next_ids(self) -> tuple[int, int]:
        doc_ids = self.store.document_ids()
        next_doc = max(doc_ids) + 1 if doc_ids else 0
        next_chunk = 0
        for doc_id in doc_ids:
            for row in self.store.metadata_for_document(doc_id):
                next_chunk = max(next_chunk, row.chunk_id + 1)
        return next_doc, next_chunk

    def update(
        self,
        add_paths: Iterable[Path | str] = (),
        remove_doc_ids: Iterable[int] = (),
        chunk_tokens: int = 128,
    ) -> dict:
        removed_chunks = 0
        for doc_id in remove_doc_ids:
            if doc_id not in self.store.document_ids():
                raise UnknownId(f"document {doc_id} is not indexed")
            for eid in self.store.embedding_ids_for_document(doc_id):
                self.index.delete(eid)
                removed_chunks += 1
            self.store.delete_document(doc_id)
        next_doc, next_chunk = self._next_ids()
        added_chunks = 0
        added_docs = 0
        for path in add_paths:
            path = Path(path)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise EcoVectorError(f"cannot read {path}: {exc}") from exc
            doc_id = next_doc
            next_doc += 1
            added_docs += 1
            self.store.upsert_document(DocumentRow(doc_id, str(path), path.stem))
            spans = self._chunk_document(text, chunk_tokens)
            texts = [text[a:b] for a, b in spans]
            vectors = (
                np.asarray(self.embedder.embed(texts), dtype=np.float32)
                if texts
                else np.zeros((0, self.index.dim), dtype=np.float32)
            )
            for offset, (span, vec) in enumerate(zip(spans, vectors)):
                cid = next_chunk
                next_chunk += 1
                self.store.upsert_metadata(MetadataRow(cid, doc_id, offset, span))
                self.store.upsert_embedding(EmbeddingRow(cid, doc_id, vec))
                self.index.insert(VectorRecord(cid, vec))
                added_chunks += 1
        return {
            "added_documents": added_docs,
            "added_chunks": added_chunks,
            "removed_chunks": removed_chunks,
            "live_vectors": self.index.live_count,
            "index_version": self.index.index_version,
        }

    def status(self) -> dict:
        counts = self.store.counts()
        return {
            "files": counts["documents"],
            "vectors": self.index.live_count,
            "index_version": self.index.index_version,
        }

    def document(self, doc_id: int) -> dict:
        row = self.store.get_document(doc_id)
        return {
            "doc_id": doc_id,
            "title": row.title,
            "text": Path(row.path).read_text(encoding="utf-8"),
        }

    # -- querying ------------------------------------------------------------

    def _retrieve_documents(
        self, query_vec: np.ndarray, k: int, trace: SearchTrace
    ) -> list[RetrievedDocument]:
        params = SearchParams(
            k=k,
            n_probe=self.search_params.n_probe,
            ef_c=self.search_params.ef_c,
            ef_l=self.search_params.ef_l,
            max_resident_clusters=self.search_params.max_resident_clusters,
        )
        try:
            hits = self.index.search(query_vec, params, trace)
        except EmptyIndex:
            return []
        seen: set[int] = set()
        docs = []
        for chunk_id, _ in hits:
            doc_id = self.store.get_metadata(chunk_id).document_id
            if doc_id in seen:
                continue
            seen.add(doc_id)
            row = self.store.get_document(doc_id)
            text = Path(row.path).read_text(encoding="utf-8")
            docs.append(RetrievedDocument(doc_id, row.title, text))
        return docs

    def _prepare(self, text: str, k: int | None):
        """Retrieval + reduction + prompt; returns everything but generation."""
        query_id = f"q{self._query_counter:06d}"
        self._query_counter += 1
        k = k or self.search_params.k
        trace = SearchTrace()
        t0 = time.perf_counter()
        query_vec = self.embedder.embed([text])[0]
        docs = self._retrieve_documents(query_vec, k, trace)
        t1 = time.perf_counter()
        timings = Timings(retrieval_ms=(t1 - t0) * 1e3)
        if not docs:
            return query_id, None, [], timings, trace, t0
        reduced = run_scr(query_vec, docs, self.scr_params, self.embedder)
        titles = {d.doc_id: d.title for d in docs}
        prompt = render_prompt(reduced, titles, text)
        references = [Reference(r.doc_id, titles[r.doc_id], r.best_score) for r in reduced]
        timings.scr_ms = (time.perf_counter() - t1) * 1e3
        return query_id, prompt, (reduced, references), timings, trace, t0

    def answer_query(self, text: str, k: int | None = None) -> QueryResult:
        query_id, prompt, bundle, timings, trace, t0 = self._prepare(text, k)
        if prompt is None:
            timings.ttft_ms = timings.total_ms = (time.perf_counter() - t0) * 1e3
            return QueryResult(query_id, NO_CONTEXT_ANSWER, [], timings, "", [], trace)
        reduced, references = bundle
        t2 = time.perf_counter()
        stream = self.generator.generate(prompt, stream=False)
        pieces = []
        first_token_at = None
        for piece in stream:
            if first_token_at is None:
                first_token_at = time.perf_counter()
            pieces.append(piece)
        end = time.perf_counter()
        if first_token_at is None:
            first_token_at = end
        timings.generation_first_token_ms = (first_token_at - t2) * 1e3
        timings.ttft_ms = (first_token_at - t0) * 1e3
        timings.total_ms = (end - t0) * 1e3
        return QueryResult(
            query_id, "".join(pieces), references, timings, prompt, reduced, trace
        )

    def stream_query(self, text: str, k: int | None = None):
        """Returns (result, token_iterator). The result's answer and timings
        are finalized once the iterator is exhausted."""
        query_id, prompt, bundle, timings, trace, t0 = self._prepare(text, k)
        if prompt is None:
            timings.ttft_ms = timings.total_ms = (time.perf_counter() - t0) * 1e3
            result = QueryResult(query_id, NO_CONTEXT_ANSWER, [], timings, "", [], trace)
            return result, iter([NO_CONTEXT_ANSWER])
        reduced, references = bundle
        result = QueryResult(query_id, "", references, timings, prompt, reduced, trace)

        def tokens() -> Iterator[str]:
            t2 = time.perf_counter()
            pieces = []
            first_token_at = None
            for piece in self.generator.generate(prompt, stream=True):
                if first_token_at is None:
                    first_token_at = time.perf_counter()
                    timings.generation_first_token_ms = (first_token_at - t2) * 1e3
                    timings.ttft_ms = (first_token_at - t0) * 1e3
                pieces.append(piece)
                yield piece
            result.answer = "".join(pieces)
            timings.total_ms = (time.perf_counter() - t0) * 1e3

        return result, tokens()
