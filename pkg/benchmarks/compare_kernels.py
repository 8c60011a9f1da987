"""Time the compiled distance kernels against the NumPy fallback.

Microbenchmarks call both implementation modules directly (the public facade
picks one at import time); the end-to-end rows rebuild a small graph index in
a subprocess per backend with ECOVECTOR_KERNEL forced, since graph code binds
the kernels at import.

Usage:
    python3 benchmarks/compare_kernels.py [--dim 64] [--n 20000] [--repeats 5]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from ecovector.kernels import _pykernels

try:
    from ecovector.kernels import _ckernels
except ImportError:
    _ckernels = None

PAIR_KERNELS = ("l2_sq", "ip_dist", "cosine_dist")
BATCH_KERNELS = ("l2_sq_batch", "ip_dist_batch", "cosine_dist_batch")

END_TO_END = """
import time
import numpy as np
from ecovector.core import VectorRecord
from ecovector.hnsw import HnswGraph, HnswParams, RngState
import ecovector.kernels as kernels

rs = np.random.RandomState(13)
mat = rs.randn({n}, {dim}).astype(np.float32)
vectors = {{i: mat[i] for i in range({n})}}
t0 = time.perf_counter()
graph = HnswGraph(vectors.__getitem__, HnswParams(m=8, ef_construction=32))
rng = RngState(1)
for vid in range({n}):
    graph.insert(vid, rng)
build_s = time.perf_counter() - t0
queries = rs.randn(100, {dim}).astype(np.float32)
t0 = time.perf_counter()
for q in queries:
    graph.search(q, k=10, ef=64)
search_s = time.perf_counter() - t0
print(f"{{kernels.BACKEND}} {{build_s:.3f}} {{search_s:.4f}}")
"""


def best_of(fn, repeats):
    took = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        took.append(time.perf_counter() - t0)
    return min(took)


def bench_pairwise(mod, name, pairs, repeats):
    fn = getattr(mod, name)

    def run():
        for a, b in pairs:
            fn(a, b)

    return best_of(run, repeats)


def bench_batch(mod, name, q, mat, repeats):
    fn = getattr(mod, name)
    return best_of(lambda: fn(q, mat), repeats)


def end_to_end(backend, n, dim):
    env = dict(os.environ, ECOVECTOR_KERNEL=backend)
    code = END_TO_END.format(n=n, dim=dim)
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    got_backend, build_s, search_s = out.stdout.split()
    assert got_backend == backend, f"subprocess ran {got_backend}, wanted {backend}"
    return float(build_s), float(search_s)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--n", type=int, default=20_000, help="batch rows / pair count")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument(
        "--graph-n", type=int, default=2_000, help="vectors in the end-to-end graph"
    )
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args(argv)

    if _ckernels is None:
        print("compiled backend is not built; showing the fallback only")
    backends = [("python", _pykernels)] + ([("compiled", _ckernels)] if _ckernels else [])

    rs = np.random.RandomState(7)
    mat = rs.randn(args.n, args.dim).astype(np.float32)
    q = rs.randn(args.dim).astype(np.float32)
    pairs = [(mat[i], mat[-1 - i]) for i in range(min(args.n, 2_000))]

    print(f"{'kernel':<18} " + " ".join(f"{name:>12}" for name, _ in backends) + "      speedup")
    rows = [(name, bench_pairwise, (pairs, args.repeats)) for name in PAIR_KERNELS]
    rows += [(name, bench_batch, (q, mat, args.repeats)) for name in BATCH_KERNELS]
    for name, runner, extra in rows:
        times = [runner(mod, name, *extra) for _, mod in backends]
        cells = " ".join(f"{t * 1e3:>10.2f}ms" for t in times)
        speedup = f"{times[0] / times[-1]:>9.1f}x" if len(times) == 2 else f"{'n/a':>10}"
        print(f"{name:<18} {cells} {speedup}")

    if args.skip_end_to_end or _ckernels is None:
        return 0
    print()
    print(f"end-to-end: insert {args.graph_n} vectors (m=8, efc=32), 100 searches")
    for backend in ("python", "compiled"):
        build_s, search_s = end_to_end(backend, args.graph_n, args.dim)
        print(f"{backend:<10} build {build_s:>7.2f}s   search {search_s * 10:>7.2f}ms/query")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
