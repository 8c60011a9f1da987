"""Operator entry points: build, update, search, query, bench, serve.

Values resolve flag > ECOVECTOR_* environment variable > --config JSON file >
built-in default. The config file mirrors the constructor parameters of the
types it configures and rejects unknown keys at every level.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from ecovector import datasets
from ecovector.core import VectorRecord, brute_force_topk
from ecovector.costmodel import CostModelParams, validate_trace
from ecovector.errors import DatasetFormatError, EcoVectorError, InvalidConfig
from ecovector.hnsw import HnswParams
from ecovector.index import EcoVectorIndex, SearchParams, SearchTrace
from ecovector.ragpipe import (
    DeterministicHashEmbedder,
    EchoStub,
    ExternalEndpointClient,
    ExternalEndpointEmbedder,
    Pipeline,
)
from ecovector.scr import ScrParams
from ecovector.storage import IndexFiles

ENV_PREFIX = "ECOVECTOR_"

_TOP_KEYS = {
    "index_dir", "dim", "n_c", "chunk_tokens", "seed",
    "hnsw", "search", "scr", "costmodel", "endpoints",
}
_SECTION_KEYS = {
    "hnsw": {"m", "max_m0", "ef_construction", "alpha", "ml", "k_reconnect"},
    "search": {"k", "n_probe", "ef_c", "ef_l", "max_resident_clusters"},
    "scr": {"sliding_window_size", "overlap_size", "context_extension_size"},
    "costmodel": {"m_h", "m_prime", "m_pq", "nbits", "ef_h"},
    "endpoints": {"embed", "generate"},
}

BENCH_COLUMNS = [
    "label", "n_probe", "ef_l", "k", "recall_at_k", "qps",
    "mean_distance_ops", "mean_edges", "mean_bytes_read", "mean_clusters_loaded",
    "model_search_ops", "ops_ratio", "edges_ratio", "ops_in_band",
    "model_compute_ms", "model_disk_ms", "model_energy_j",
]


def load_config(path: Path | str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidConfig(f"config {path} must hold a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in _SECTION_KEYS.items():
        sub = raw.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise InvalidConfig(f"config section {section!r} must be an object")
        unknown = set(sub) - allowed
        if unknown:
            raise InvalidConfig(f"unknown {section} keys: {sorted(unknown)}")
    return raw


def _resolve(flag, env_name: str, config_value, default, cast):
    if flag is not None:
        return flag
    raw = os.environ.get(ENV_PREFIX + env_name)
    if raw is not None:
        try:
            return cast(raw)
        except ValueError as exc:
            raise InvalidConfig(f"bad {ENV_PREFIX}{env_name}={raw!r}") from exc
    if config_value is not None:
        return config_value
    return default


@dataclass
class Settings:
    index_dir: Path | None
    dim: int
    n_c: int
    chunk_tokens: int
    seed: int
    hnsw: HnswParams
    search: SearchParams
    scr: ScrParams
    cost_overrides: dict = field(default_factory=dict)
    endpoint_embed: str | None = None
    endpoint_generate: str | None = None
    csv_out: Path | None = None


def resolve_settings(args: argparse.Namespace) -> Settings:
    def flag(name):
        return getattr(args, name, None)

    config_path = _resolve(flag("config"), "CONFIG", None, None, Path)
    cfg = load_config(config_path) if config_path else {}

    def section(name) -> dict:
        return cfg.get(name) or {}

    index_dir = _resolve(flag("index_dir"), "INDEX_DIR", cfg.get("index_dir"), None, Path)
    search_cfg = section("search")
    try:
        hnsw = HnswParams(**section("hnsw"))
        scr = ScrParams(**section("scr"))
        search = SearchParams(
            k=_resolve(flag("k"), "K", search_cfg.get("k"), 10, int),
            n_probe=_resolve(flag("n_probe"), "N_PROBE", search_cfg.get("n_probe"), 8, int),
            ef_c=_resolve(flag("ef_c"), "EF_C", search_cfg.get("ef_c"), 32, int),
            ef_l=_resolve(flag("ef_l"), "EF_L", search_cfg.get("ef_l"), 64, int),
            max_resident_clusters=search_cfg.get("max_resident_clusters", 1),
        )
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from exc
    return Settings(
        index_dir=Path(index_dir) if index_dir is not None else None,
        dim=_resolve(flag("dim"), "DIM", cfg.get("dim"), 64, int),
        n_c=_resolve(flag("nc"), "NC", cfg.get("n_c"), 16, int),
        chunk_tokens=cfg.get("chunk_tokens", 128),
        seed=_resolve(flag("seed"), "SEED", cfg.get("seed"), 0, int),
        hnsw=hnsw,
        search=search,
        scr=scr,
        cost_overrides=dict(section("costmodel")),
        endpoint_embed=_resolve(
            flag("endpoint_embed"), "ENDPOINT_EMBED", section("endpoints").get("embed"), None, str
        ),
        endpoint_generate=_resolve(
            flag("endpoint_generate"), "ENDPOINT_GENERATE",
            section("endpoints").get("generate"), None, str,
        ),
        csv_out=_resolve(flag("csv_out"), "CSV_OUT", None, None, Path),
    )


def _require_index_dir(settings: Settings) -> Path:
    if settings.index_dir is None:
        raise InvalidConfig("--index-dir is required (flag, env, or config)")
    return settings.index_dir


def _make_embedder(settings: Settings, dim: int):
    if settings.endpoint_embed:
        return ExternalEndpointEmbedder(settings.endpoint_embed, dim=dim)
    return DeterministicHashEmbedder(dim=dim)


def _make_generator(settings: Settings):
    if settings.endpoint_generate:
        return ExternalEndpointClient(settings.endpoint_generate)
    return EchoStub()


def _index_dim(index_dir: Path) -> int:
    return int(IndexFiles(index_dir / "index").read_manifest()["dim"])


def _load_pipeline(settings: Settings) -> Pipeline:
    index_dir = _require_index_dir(settings)
    embedder = _make_embedder(settings, _index_dim(index_dir))
    return Pipeline.load(
        index_dir,
        embedder,
        generator=_make_generator(settings),
        scr_params=settings.scr,
        search_params=settings.search,
    )


# -- subcommands -------------------------------------------------------------


def cmd_build(args: argparse.Namespace) -> None:
    settings = resolve_settings(args)
    index_dir = _require_index_dir(settings)
    if args.jsonl:
        paths, titles = datasets.extract_corpus(args.jsonl, index_dir / "docs")
    else:
        corpus = Path(args.corpus)
        if not corpus.is_dir():
            raise EcoVectorError(f"corpus directory not found: {corpus}")
        paths = sorted(
            p for p in corpus.iterdir() if p.suffix in {".txt", ".md"} and p.is_file()
        )
        titles = None
    pipeline = Pipeline.build(
        paths,
        index_dir,
        embedder=_make_embedder(settings, settings.dim),
        n_c=settings.n_c,
        chunk_tokens=settings.chunk_tokens,
        hnsw_params=settings.hnsw,
        scr_params=settings.scr,
        search_params=settings.search,
        seed=settings.seed,
        titles=titles,
    )
    status = pipeline.status()
    print(f"{status['files']:,} Files, {status['vectors']:,} Vectors")
    print(f"index dir: {index_dir}")
    pipeline.store.close()


def cmd_update(args: argparse.Namespace) -> None:
    settings = resolve_settings(args)
    pipeline = _load_pipeline(settings)
    report = pipeline.update(
        add_paths=[Path(p) for p in args.add],
        remove_doc_ids=[int(d) for d in args.remove],
        chunk_tokens=settings.chunk_tokens,
    )
    status = pipeline.status()
    print(
        f"added {report['added_documents']} documents "
        f"({report['added_chunks']} chunks), "
        f"removed {report['removed_chunks']} chunks"
    )
    print(f"{status['files']:,} Files, {status['vectors']:,} Vectors")
    pipeline.store.close()


def cmd_search(args: argparse.Namespace) -> None:
    settings = resolve_settings(args)
    index_dir = _require_index_dir(settings)
    index = EcoVectorIndex.load(index_dir / "index")
    embedder = _make_embedder(settings, index.dim)
    query = embedder.embed([args.text])[0]
    hits = index.search(query, settings.search)
    print(f"{'rank':>4}  {'id':>10}  distance")
    for rank, (vid, dist) in enumerate(hits, start=1):
        print(f"{rank:>4}  {vid:>10}  {dist:.6f}")


def cmd_query(args: argparse.Namespace) -> None:
    settings = resolve_settings(args)
    pipeline = _load_pipeline(settings)
    result = pipeline.answer_query(args.text, k=settings.search.k)
    print(result.answer)
    if result.references:
        print()
        print("References:")
        for i, ref in enumerate(result.references, start=1):
            print(f"  {i}. [{ref.title}] (doc {ref.doc_id}, score {ref.score:.4f})")
    t = result.timings
    print()
    print(
        f"timings: retrieval {t.retrieval_ms:.2f} ms | scr {t.scr_ms:.2f} ms | "
        f"first token {t.generation_first_token_ms:.2f} ms | "
        f"ttft {t.ttft_ms:.2f} ms | total {t.total_ms:.2f} ms"
    )
    pipeline.store.close()


def _bench_point(
    index: EcoVectorIndex,
    queries: np.ndarray,
    truth: list[set[int]],
    label: str,
    params: SearchParams,
    model: CostModelParams,
) -> dict:
    sums = {"distance_ops": 0, "edges_examined": 0, "bytes_read": 0, "clusters_loaded": 0}
    hit = 0
    t0 = time.perf_counter()
    for qi in range(queries.shape[0]):
        trace = SearchTrace()
        found = index.search(queries[qi], params, trace)
        hit += len(truth[qi] & {vid for vid, _ in found})
        for key in sums:
            sums[key] += getattr(trace, key)
    elapsed = time.perf_counter() - t0
    n_q = queries.shape[0]
    mean = SimpleNamespace(**{key: value / n_q for key, value in sums.items()})
    vt = validate_trace(mean, model)
    edges_ratio = (
        vt["measured_edges"] / vt["model_search_ops"] if vt["model_search_ops"] else 0.0
    )
    return {
        "label": label,
        "n_probe": params.n_probe,
        "ef_l": params.ef_l,
        "k": params.k,
        "recall_at_k": f"{hit / (n_q * params.k):.4f}",
        "qps": f"{n_q / elapsed if elapsed > 0 else 0.0:.2f}",
        "mean_distance_ops": f"{vt['measured_distance_ops']:.1f}",
        "mean_edges": f"{vt['measured_edges']:.1f}",
        "mean_bytes_read": f"{vt['measured_bytes_read']:.1f}",
        "mean_clusters_loaded": f"{vt['clusters_loaded']:.2f}",
        "model_search_ops": f"{vt['model_search_ops']:.1f}",
        "ops_ratio": f"{vt['ops_ratio']:.4f}",
        "edges_ratio": f"{edges_ratio:.4f}",
        "ops_in_band": str(vt["ops_in_band"]).lower(),
        "model_compute_ms": f"{vt['compute_time_ms']:.6f}",
        "model_disk_ms": f"{vt['disk_time_ms']:.6f}",
        "model_energy_j": f"{vt['energy_joules']:.3e}",
    }


def cmd_bench(args: argparse.Namespace) -> None:
    settings = resolve_settings(args)
    index_dir = _require_index_dir(settings)
    base = datasets.read_fvecs(args.vectors)
    queries = datasets.read_fvecs(args.queries)
    if base.shape[1] != queries.shape[1]:
        raise DatasetFormatError(
            f"dimension mismatch: base {base.shape[1]}, queries {queries.shape[1]}"
        )
    n = base.shape[0]
    k = min(settings.search.k, n)

    records = [VectorRecord(i, base[i]) for i in range(n)]
    index = EcoVectorIndex.build(
        records,
        index_dir / "bench_index",
        n_c=min(settings.n_c, n),
        hnsw_params=settings.hnsw,
        seed=settings.seed,
    )

    if args.ground_truth:
        gt = datasets.read_ivecs(args.ground_truth)
        if gt.shape[0] != queries.shape[0] or gt.shape[1] < k:
            raise DatasetFormatError(
                f"ground truth shape {gt.shape} does not cover "
                f"{queries.shape[0]} queries at k={k}"
            )
        truth = [set(map(int, gt[qi, :k])) for qi in range(gt.shape[0])]
    else:
        truth = [
            {vid for vid, _ in brute_force_topk(queries[qi], records, k)}
            for qi in range(queries.shape[0])
        ]

    pinned_probe = _resolve(args.n_probe, "N_PROBE", None, None, int)
    pinned_ef = _resolve(args.ef_l, "EF_L", None, None, int)
    if pinned_probe is not None:
        probe_sweep = [min(pinned_probe, index.n_c)]
    else:
        probe_sweep = []
        step = 1
        while step < index.n_c:
            probe_sweep.append(step)
            step *= 2
        probe_sweep.append(index.n_c)
    ef_sweep = [pinned_ef] if pinned_ef is not None else [32, 64]

    def model_for(n_probe: int, ef_l: int) -> CostModelParams:
        kwargs = dict(
            n=n, n_c=index.n_c, d=base.shape[1], n_probe=n_probe,
            m_prime=settings.hnsw.m, ef_c=settings.search.ef_c, ef_l=ef_l,
        )
        kwargs.update(settings.cost_overrides)
        return CostModelParams(**kwargs)

    rows = []
    for ef_l in ef_sweep:
        for n_probe in probe_sweep:
            params = SearchParams(
                k=k, n_probe=n_probe, ef_c=settings.search.ef_c, ef_l=ef_l,
                max_resident_clusters=settings.search.max_resident_clusters,
            )
            rows.append(_bench_point(index, queries, truth, "sweep", params, model_for(n_probe, ef_l)))
    exact_ef = max(k, max(info.live_count for info in index.clusters.values()), 1)
    exact = SearchParams(
        k=k, n_probe=index.n_c, ef_c=max(settings.search.ef_c, index.n_c), ef_l=exact_ef,
        max_resident_clusters=settings.search.max_resident_clusters,
    )
    rows.append(
        _bench_point(index, queries, truth, "exact", exact, model_for(index.n_c, exact_ef))
    )

    if settings.csv_out:
        with open(settings.csv_out, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=BENCH_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {len(rows)} rows to {settings.csv_out}")
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def cmd_serve(args: argparse.Namespace) -> None:
    import uvicorn

    from ecovector.service import create_app

    settings = resolve_settings(args)
    app = create_app(_load_pipeline(settings))
    uvicorn.run(app, host=args.host, port=args.port)


# -- parser -------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--index-dir", type=Path, help="index workspace directory")
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--seed", type=int, help="deterministic seed")


def _add_search_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, help="results per query")
    parser.add_argument("--n-probe", type=int, help="clusters probed per query")
    parser.add_argument("--ef-c", type=int, help="centroid-graph beam width")
    parser.add_argument("--ef-l", type=int, help="cluster-graph beam width")


def _add_endpoint_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--endpoint-embed", help="HTTP embedder URL")
    parser.add_argument("--endpoint-generate", help="HTTP generator URL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecovector",
        description="Disk-partitioned vector search with selective content reduction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="index a document corpus")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus", type=Path, help="directory of .txt/.md files")
    src.add_argument("--jsonl", type=Path, help="JSON-lines corpus file")
    p.add_argument("--dim", type=int, help="embedding dimension")
    p.add_argument("--nc", type=int, help="number of clusters")
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("update", help="add and remove documents in place")
    _add_common(p)
    p.add_argument("--add", nargs="*", default=[], help="document files to add")
    p.add_argument("--remove", nargs="*", default=[], type=int, help="doc ids to remove")
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("search", help="nearest-neighbor lookup, id/distance table")
    _add_common(p)
    p.add_argument("--text", required=True, help="query text")
    _add_search_flags(p)
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("query", help="retrieve, reduce, and answer")
    _add_common(p)
    p.add_argument("--text", required=True, help="question text")
    _add_search_flags(p)
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="recall/QPS/ops sweep over fvecs data")
    _add_common(p)
    p.add_argument("--vectors", type=Path, required=True, help="base fvecs file")
    p.add_argument("--queries", type=Path, required=True, help="query fvecs file")
    p.add_argument("--ground-truth", type=Path, help="ivecs file; brute force if absent")
    p.add_argument("--nc", type=int, help="number of clusters")
    _add_search_flags(p)
    p.add_argument("--csv-out", type=Path, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP facade")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    _add_search_flags(p)
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (EcoVectorError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
