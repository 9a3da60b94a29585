#!/usr/bin/env python3
"""Time the gather/scatter kernels on both backends over identical inputs.

Runs each primitive (scatter_add_rows, segment_sum, segment_max) and one full
graph-encoder forward at a few edge counts, once per available backend, and
prints a table of medians plus the numpy/numba speedup.  Outputs are compared
bitwise across backends before timing; a mismatch aborts the run.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--sizes E1,E2,...]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rmnp import kernels
from rmnp.dataset import HeteroGraph
from rmnp.encoders import encode_graph, init_hgn_params
from rmnp.numerics import Rng


def _median_time(fn, repeats: int) -> float:
    fn()  # warmup (numba compiles here)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _make_inputs(n_edges: int, n_nodes: int, d: int, rng: np.random.Generator):
    index = rng.integers(0, n_nodes, size=n_edges)
    rows = rng.normal(size=(n_edges, d))
    scores = rng.normal(size=n_edges)
    return index, rows, scores


def _make_graph_case(n_edges: int, n_nodes: int, d: int, seed: int):
    nprng = np.random.default_rng(seed)
    edges = nprng.integers(0, n_nodes, size=(n_edges, 2))
    graph = HeteroGraph(n_nodes, ("follows", "mentions"),
                        (edges[: n_edges // 2], edges[n_edges // 2 :]))
    params = init_hgn_params(d, d, d, graph.n_relations, 1, Rng(seed))
    h = Rng(seed + 1).standard_normal((n_nodes, d))
    return graph, h, params


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--sizes", default="2000,20000,200000",
                    help="comma-separated edge counts")
    ap.add_argument("--dim", type=int, default=64)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    backends = kernels.available_backends()
    if "numba" not in backends:
        print("note: numba unavailable, timing numpy only")

    rows_out = []
    for n_edges in sizes:
        n_nodes = max(n_edges // 10, 4)
        index, rows, scores = _make_inputs(n_edges, n_nodes, args.dim,
                                           np.random.default_rng(n_edges))
        graph_case = _make_graph_case(n_edges, n_nodes, args.dim, seed=1)
        cases = {
            "scatter_add_rows": lambda: kernels.scatter_add_rows(index, rows, n_nodes),
            "segment_sum": lambda: kernels.segment_sum(rows, index, n_nodes),
            "segment_max": lambda: kernels.segment_max(scores, index, n_nodes),
            "encode_graph": lambda: encode_graph(*graph_case).data,
        }
        for name, fn in cases.items():
            results, medians = {}, {}
            for backend in backends:
                kernels.set_backend(backend)
                results[backend] = fn()
                medians[backend] = _median_time(fn, args.repeats)
            if len(backends) == 2 and not np.array_equal(results["numba"],
                                                         results["numpy"]):
                raise SystemExit(f"{name}: backend outputs differ at E={n_edges}")
            rows_out.append((name, n_edges, medians))

    print(f"\n{'kernel':<18} {'edges':>8} " +
          " ".join(f"{b + ' (ms)':>12}" for b in backends) +
          ("  speedup" if len(backends) == 2 else ""))
    for name, n_edges, medians in rows_out:
        line = f"{name:<18} {n_edges:>8} " + \
               " ".join(f"{medians[b] * 1e3:>12.3f}" for b in backends)
        if len(backends) == 2:
            line += f"  {medians['numpy'] / medians['numba']:>6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
