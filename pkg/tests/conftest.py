from __future__ import annotations

import math

import numpy as np
import pytest

from ecovector.core import RngState, VectorRecord


def make_vectors(n: int, dim: int, seed: int, normalize: bool = False) -> dict[int, np.ndarray]:
    """Deterministic random float32 vectors keyed by id 0..n-1."""
    rs = np.random.RandomState(seed)
    mat = rs.randn(n, dim).astype(np.float32)
    if normalize:
        mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    return {i: mat[i] for i in range(n)}


def make_mixture(n: int, dim: int, n_centers: int, noise: float, seed: int):
    """Blob-mixture corpus resembling clustered embeddings.

    Returns (matrix, centers, the consumed RandomState) so callers can draw
    queries from the same stream.
    """
    rs = np.random.RandomState(seed)
    centers = rs.randn(n_centers, dim).astype(np.float32) * 4.0
    assign = rs.randint(0, n_centers, size=n)
    points = (centers[assign] + rs.randn(n, dim) * noise).astype(np.float32)
    return points, centers, rs


class ScriptedEmbedder:
    """Maps exact known texts to 2-d vectors with a chosen cosine similarity
    against the query direction [1, 0]. Unknown text raises KeyError."""

    QUERY_VECTOR = np.array([1.0, 0.0], dtype=np.float32)

    def __init__(self, scores: dict[str, float]):
        self.scores = dict(scores)

    def embed(self, texts):
        out = np.zeros((len(texts), 2), dtype=np.float32)
        for i, text in enumerate(texts):
            s = self.scores[text]
            out[i] = (s, math.sqrt(1.0 - s * s))
        return out


TIRAMISU_SENTENCES = [
    "Tiramisu began as a layered dessert in northern Italy.",
    "Its name translates roughly to pick me up.",
    "Good results depend on fresh mascarpone and strong espresso.",
    "Keep ladyfinger biscuits, cocoa powder, and three eggs within reach.",
    "Whisk the yolks with sugar, fold in mascarpone, then dip each biscuit in cooled espresso and layer them.",
    "Spread the cream between layers and rest the dish for four hours in the fridge.",
    "A dusting of cocoa right before serving keeps the top from going damp.",
    "Some cooks add a splash of coffee liqueur for depth.",
    "Serve chilled squares on cold plates.",
    "Leftovers keep for two days when covered.",
]

TIRAMISU_WINDOW_SCORES = [0.3, 0.4, 0.9, 0.5, 0.2]

TIRAMISU_MERGED = " ".join(TIRAMISU_SENTENCES[3:7])


def tiramisu_fixture():
    """Three retrieved docs and a scripted embedder reproducing the worked
    reduction: doc B holds five two-sentence chunks scored
    [0.3, 0.4, 0.9, 0.5, 0.2]; docs A and C score 0.7 and 0.4."""
    from ecovector.scr import RetrievedDocument, ScrParams

    doc_a = RetrievedDocument(
        1,
        "Espresso Basics",
        "Pull espresso shots just before assembling any dessert. "
        "Cool the coffee fully so the biscuits do not turn to mush.",
    )
    doc_b = RetrievedDocument(2, "Tiramisu Recipe", " ".join(TIRAMISU_SENTENCES))
    doc_c = RetrievedDocument(
        3,
        "Plating Notes",
        "Chilled plates keep layered desserts firm at the table. "
        "Wipe each rim before the plate leaves the kitchen.",
    )
    params = ScrParams(sliding_window_size=2, overlap_size=0, context_extension_size=1)
    scores = {
        " ".join(TIRAMISU_SENTENCES[i : i + 2]): TIRAMISU_WINDOW_SCORES[i // 2]
        for i in range(0, 10, 2)
    }
    scores[doc_a.text] = 0.7
    scores[doc_c.text] = 0.4
    return [doc_a, doc_b, doc_c], ScriptedEmbedder(scores), params


def records_of(vectors: dict[int, np.ndarray]) -> list[VectorRecord]:
    return [VectorRecord(i, v) for i, v in sorted(vectors.items())]


@pytest.fixture
def rng() -> RngState:
    return RngState(20240817)
