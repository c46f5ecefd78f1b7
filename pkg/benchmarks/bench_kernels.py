"""Compiled versus pure-Python kernels on realistic inputs.

Run from the repository root::

    python3 benchmarks/bench_kernels.py [--resolution 64] [--repeat 3]

The inputs are a projected double cover of the flat sheet (max-flow on its
face dual graph) and the separated sphere (self-intersection count).
"""

import argparse
import time

import numpy as np

from udfmesh import _kernels
from udfmesh.covering import learn_covering_map
from udfmesh.field import build_analytic_oracle
from udfmesh.isoextract import extract_double_cover
from udfmesh.separation import build_dual_graph, select_component_closed, select_source_sink


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - start)
    return min(times), result


def projected(shape, r, k):
    oracle = build_analytic_oracle(shape)
    return learn_covering_map(extract_double_cover(oracle, r, k), oracle)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--resolution", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    k = args.resolution
    r = 0.64 / k  # comfortably above the 1/(2k) lower bound

    impls = _kernels.backends()
    if "cython" not in impls:
        print("compiled kernels are not built; only the fallback will be timed")

    sheet = projected("sheet", r, k)
    graph = build_dual_graph(sheet)
    source, sink = select_source_sink(graph, sheet, 0)
    terminal = np.zeros(graph.n_nodes, dtype=np.int8)
    terminal[source], terminal[sink] = 1, 2
    sphere = select_component_closed(projected("sphere", r, k))

    rows = []
    for name, impl in sorted(impls.items()):
        t_flow, (flow, _) = best_of(
            lambda: impl.maxflow(graph.n_nodes, graph.u, graph.v, graph.capacity, terminal), args.repeat
        )
        t_hits, hits = best_of(lambda: impl.count_intersecting_pairs(sphere.vertices, sphere.faces), args.repeat)
        rows.append((name, t_flow, flow, t_hits, hits))

    print(f"k={k} r={r:g}: dual graph {graph.n_nodes} nodes / {len(graph.u)} edges, sphere {sphere.n_faces} faces")
    print(f"{'backend':<8} {'maxflow [s]':>12} {'intersections [s]':>18}  results")
    for name, t_flow, flow, t_hits, hits in rows:
        print(f"{name:<8} {t_flow:12.4f} {t_hits:18.4f}  flow={flow:.6g} pairs={hits}")
    by_name = {row[0]: row[1:] for row in rows}
    if len(by_name) == 2:
        py, cy = by_name["python"], by_name["cython"]
        print(f"speed-up: maxflow x{py[0] / cy[0]:.1f}, intersections x{py[2] / cy[2]:.1f}")
        assert py[1] == cy[1] and py[3] == cy[3], "backends disagree"


if __name__ == "__main__":
    main()
