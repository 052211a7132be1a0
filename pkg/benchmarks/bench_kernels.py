#!/usr/bin/env python3
"""Time the numba kernels against their plain Python/numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--nodes 60]

Each row runs the same inputs through both paths, checks the outputs agree,
and reports best-of-N wall time. The numpy side is what runs when
CFT2NN_DISABLE_NUMBA=1 is set.
"""
import argparse
import time

import numpy as np

from cft2nn._accel import HAS_NUMBA, USE_NUMBA
from cft2nn.filtration import _brandes, _closeness, degree_centrality
from cft2nn.graph import Graph
from cft2nn.persistence import (
    GridRange,
    _persistence_pairs,
    _raster_kernel,
    _raster_numpy,
    build_sublevel_filtration,
)


def best_of(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def random_graph(rng, n, p):
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return Graph.from_edges(n, np.column_stack([iu[0][keep], iu[1][keep]]))


def cases(rng, nodes, points, resolution):
    g = random_graph(rng, nodes, 4.0 / nodes)
    indptr, indices = g.csr()
    yield "brandes", _brandes, (indptr, indices, g.node_count)
    yield "closeness", _closeness, (indptr, indices, g.node_count)

    fc = build_sublevel_filtration(g, degree_centrality(g))
    e = fc.edges
    args = (fc.vertex_values, np.ascontiguousarray(e[:, 0]), np.ascontiguousarray(e[:, 1]),
            fc.edge_values, fc.stream_dims, fc.stream_ids)
    yield "ph_pairs", _persistence_pairs, args

    grid = GridRange(0.0, 1.0, 0.0, 1.0)
    bx, py = rng.random(points), rng.random(points)
    w = py / grid.pers_max
    edges = np.linspace(0.0, 1.0, resolution + 1)
    yield "raster", (_raster_kernel, _raster_numpy), (bx, py, w, edges, edges, 0.05, 0.05)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nodes", type=int, default=60)
    ap.add_argument("--points", type=int, default=40)
    ap.add_argument("--resolution", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not USE_NUMBA:
        print("numba " + ("disabled by CFT2NN_DISABLE_NUMBA" if HAS_NUMBA else "not installed")
              + "; only the fallback path is timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<12}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, fn, fargs in cases(rng, args.nodes, args.points, args.resolution):
        fast, slow = fn if isinstance(fn, tuple) else (fn, fn.py_func)
        t_slow = best_of(slow, fargs, args.repeat)
        if USE_NUMBA:
            a, b = fast(*fargs), slow(*fargs)
            for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
                np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12)
            t_fast = best_of(fast, fargs, args.repeat)
            print(f"{name:<12}{t_fast * 1e3:>12.3f}{t_slow * 1e3:>12.3f}{t_slow / t_fast:>9.1f}x")
        else:
            print(f"{name:<12}{'-':>12}{t_slow * 1e3:>12.3f}{'-':>10}")


if __name__ == "__main__":
    main()
