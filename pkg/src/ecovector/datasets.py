"""Dataset file formats.

Vector sets use the fvecs/ivecs flat binary convention: every vector is a
little-endian u32 dimension prefix followed by that many 4-byte values
(float32 for fvecs, int32 for ivecs). Text corpora use JSON lines with one
{"title": ..., "text": ...} object per document.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from ecovector.errors import DatasetFormatError
from ecovector.storage import write_atomic


def _write_vecs(path: Path | str, matrix: np.ndarray, dtype: str) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] == 0:
        raise DatasetFormatError(f"expected a (n, dim) matrix, got {matrix.shape}")
    n, dim = matrix.shape
    body = np.empty((n, dim + 1), dtype="<u4")
    body[:, 0] = dim
    body[:, 1:] = matrix.astype(dtype).view("<u4")
    write_atomic(Path(path), body.tobytes())


def _read_vecs(path: Path | str, dtype: str) -> np.ndarray:
    raw = np.fromfile(path, dtype="<u4")
    if raw.size == 0:
        raise DatasetFormatError(f"{path}: empty vector file")
    dim = int(raw[0])
    if dim < 1:
        raise DatasetFormatError(f"{path}: vector dimension prefix {dim}")
    if raw.size % (dim + 1) != 0:
        raise DatasetFormatError(f"{path}: truncated or mixed-dimension payload")
    table = raw.reshape(-1, dim + 1)
    if not (table[:, 0] == dim).all():
        raise DatasetFormatError(f"{path}: inconsistent dimension prefixes")
    return np.ascontiguousarray(table[:, 1:]).view(dtype).astype(dtype, copy=False)


def write_fvecs(path: Path | str, matrix: np.ndarray) -> None:
    _write_vecs(path, matrix, "<f4")


def read_fvecs(path: Path | str) -> np.ndarray:
    return _read_vecs(path, "<f4")


def write_ivecs(path: Path | str, matrix: np.ndarray) -> None:
    _write_vecs(path, matrix, "<i4")


def read_ivecs(path: Path | str) -> np.ndarray:
    return _read_vecs(path, "<i4")


def write_jsonl_corpus(path: Path | str, rows: list[dict]) -> None:
    lines = []
    for row in rows:
        if set(row) != {"title", "text"}:
            raise DatasetFormatError(
                f"corpus rows need exactly title and text, got {sorted(row)}"
            )
        lines.append(json.dumps(row, ensure_ascii=False))
    write_atomic(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def read_jsonl_corpus(path: Path | str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(row, dict) or set(row) != {"title", "text"}:
                raise DatasetFormatError(
                    f"{path}:{lineno}: corpus rows need exactly title and text"
                )
            rows.append(row)
    return rows


_SLUG_RE = re.compile(r"[^a-z0-9]+")


def extract_corpus(path: Path | str, out_dir: Path | str) -> tuple[list[Path], list[str]]:
    """Materialize a JSONL corpus as one UTF-8 text file per document.

    Returns (paths, titles) parallel lists ready for Pipeline.build.
    """
    rows = read_jsonl_corpus(path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths, titles = [], []
    for i, row in enumerate(rows):
        slug = _SLUG_RE.sub("-", row["title"].lower()).strip("-") or "doc"
        doc_path = out_dir / f"{i:05d}-{slug[:48]}.txt"
        doc_path.write_text(row["text"], encoding="utf-8")
        paths.append(doc_path)
        titles.append(row["title"])
    return paths, titles
