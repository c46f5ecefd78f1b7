"""Peel one layer off a projected double cover.

The two layers of a projected open surface meet along a fold seam where
adjacent faces lie almost back to back.  A minimum s-t cut on the face dual
graph, with capacities that grow exponentially with the dihedral angle, runs
along that seam.  Closed surfaces need no cut: their layers are already
disjoint components.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import _kernels
from .mesh import _face_pairs, concatenate, connected_components, edge_table

logger = logging.getLogger(__name__)

ANGLE_GAIN = 200.0
MAX_EXPONENT = 690.0
REGION_FRACTION = 0.05
BALANCE_TOLERANCE = 0.15
FAILURES_PER_HALVING = 5
MAX_RESEEDS = 20
TWIN_RADIUS_FACTOR = 3.0


class SeparationError(RuntimeError):
    """No acceptable cut could be produced."""


@dataclass
class DualGraph:
    """Face dual graph.

    Node ``i`` is face ``i``; edge ``e`` joins faces ``u[e]`` and ``v[e]``
    across a mesh edge shared by exactly those two faces.
    """

    n_nodes: int
    u: np.ndarray
    v: np.ndarray
    alpha: np.ndarray
    capacity: np.ndarray
    alpha_min: float

    def csr(self):
        """Neighbour lists as ``(indptr, indices)``, each list sorted by node id."""
        n = self.n_nodes
        adj = sparse.coo_matrix(
            (np.ones(2 * len(self.u)), (np.r_[self.u, self.v], np.r_[self.v, self.u])), shape=(n, n)
        ).tocsr()
        adj.sort_indices()
        return adj.indptr, adj.indices


@dataclass
class CutAttempt:
    source: np.ndarray
    sink: np.ndarray
    source_side: np.ndarray
    cut_edges: np.ndarray
    flow: float
    cut_capacity: float
    sizes: tuple
    accepted: bool = False
    region_fraction: float = REGION_FRACTION

    def summary(self):
        return {
            "source": len(self.source),
            "sink": len(self.sink),
            "sizes": [int(s) for s in self.sizes],
            "cut_edges": len(self.cut_edges),
            "flow": float(self.flow),
            "accepted": bool(self.accepted),
            "region_fraction": float(self.region_fraction),
        }


def dihedral_angles(n1, n2):
    """Angle between two faces measured through the material.

    Coplanar neighbours give ``pi``; faces folded back to back give 0.
    """
    cross = np.linalg.norm(np.cross(n1, n2), axis=1)
    dot = np.einsum("ij,ij->i", n1, n2)
    return np.pi - np.arctan2(cross, dot)


def build_dual_graph(mesh):
    """Dual graph with capacities ``exp(min(200 (alpha - alpha_min), 690))``."""
    table = edge_table(mesh.faces)
    if np.any(table.counts > 2):
        raise ValueError(f"{int((table.counts > 2).sum())} non-manifold edges; cannot build the dual graph")
    _, fa, fb, _, _ = _face_pairs(table)
    normals = mesh.face_normals()
    alpha = dihedral_angles(normals[fa], normals[fb])
    alpha_min = float(alpha.min()) if len(alpha) else 0.0
    capacity = np.exp(np.minimum(ANGLE_GAIN * (alpha - alpha_min), MAX_EXPONENT))
    return DualGraph(mesh.n_faces, fa, fb, alpha, capacity, alpha_min)


def _bfs(indptr, indices, seed, limit=None):
    """BFS order from ``seed`` (neighbours in id order) and hop distances."""
    dist = np.full(len(indptr) - 1, -1, dtype=np.int64)
    dist[seed] = 0
    order = [seed]
    queue = deque([seed])
    while queue and (limit is None or len(order) < limit):
        p = queue.popleft()
        for q in indices[indptr[p] : indptr[p + 1]]:
            if dist[q] < 0:
                dist[q] = dist[p] + 1
                order.append(q)
                queue.append(q)
                if limit is not None and len(order) >= limit:
                    break
    return np.array(order, dtype=np.int64), dist


def _region_size(n_nodes, fraction):
    return max(1, math.ceil(fraction * n_nodes))


def _twin_seed(dist, centroids, seed, radius):
    """Face near ``seed`` in space but far from it along the surface."""
    d2 = np.einsum("ij,ij->i", centroids - centroids[seed], centroids - centroids[seed])
    near = np.flatnonzero(d2 <= radius * radius)
    if len(near):
        best = near[np.argmax(dist[near])]
        if dist[best] > 0:
            return int(best)
    return int(np.argmax(dist))


def select_source_sink(graph, mesh, rng=0, region_fraction=REGION_FRACTION, r=None):
    """Grow disjoint source and sink regions of ``ceil(fraction * N)`` faces each.

    The sink seed is the face within ``3 r`` of the source seed (Euclidean)
    that is farthest from it in hops; without ``r`` or a usable candidate,
    the globally farthest face is used.  Raises ``SeparationError`` after 20
    reseeds that all produce overlapping regions.
    """
    rng = np.random.default_rng(rng)
    indptr, indices = graph.csr()
    n = graph.n_nodes
    size = _region_size(n, region_fraction)
    if r is None:
        r = mesh.meta.get("r")
    radius = TWIN_RADIUS_FACTOR * r if r is not None else -1.0
    centroids = mesh.centroids()
    for _ in range(MAX_RESEEDS):
        seed = int(rng.integers(n))
        _, dist = _bfs(indptr, indices, seed)
        source, _ = _bfs(indptr, indices, seed, size)
        twin = _twin_seed(dist, centroids, seed, radius)
        sink, _ = _bfs(indptr, indices, twin, size)
        if not np.intersect1d(source, sink).size:
            return source, sink
    raise SeparationError(f"no disjoint source/sink regions after {MAX_RESEEDS} reseeds")


def min_st_cut(graph, source, sink):
    """Minimum cut separating the source region from the sink region.

    Region nodes are attached to their terminal with unbounded capacity.
    """
    terminal = np.zeros(graph.n_nodes, dtype=np.int8)
    terminal[source] = 1
    terminal[sink] = 2
    flow, side = _kernels.maxflow(graph.n_nodes, graph.u, graph.v, graph.capacity, terminal)
    side = np.asarray(side, dtype=bool)
    cut = np.flatnonzero(side[graph.u] != side[graph.v])
    cut_capacity = float(graph.capacity[cut].sum())
    # max-flow / min-cut duality
    assert math.isclose(flow, cut_capacity, rel_tol=1e-9, abs_tol=1e-9), (flow, cut_capacity)
    n1 = int(side.sum())
    return CutAttempt(source, sink, side, cut, flow, cut_capacity, (n1, graph.n_nodes - n1))


def split_and_accept(mesh, attempt):
    """Split along the cut; accepted when the face counts differ by < 15 %."""
    m1 = mesh.submesh(np.flatnonzero(attempt.source_side))
    m2 = mesh.submesh(np.flatnonzero(~attempt.source_side))
    accepted = abs(m1.n_faces - m2.n_faces) < BALANCE_TOLERANCE * mesh.n_faces
    attempt.accepted = bool(accepted)
    return m1, m2, attempt.accepted


def _largest(components):
    return max(range(len(components)), key=lambda i: (len(components[i]), -i))


def cut_layers(mesh, rng=0, region_fraction=REGION_FRACTION, r=None):
    """Repeat cut attempts on a connected mesh until one is balanced.

    Returns ``(layer, attempts)``.  The region fraction halves after every 5
    rejected cuts; once a region would hold less than one face the search
    stops with ``SeparationError``.
    """
    rng = np.random.default_rng(rng)
    graph = build_dual_graph(mesh)
    attempts = []
    fraction = region_fraction
    failures = 0
    while True:
        if fraction * graph.n_nodes < 1:
            raise SeparationError(f"cannot separate: no balanced cut after {len(attempts)} attempts")
        source, sink = select_source_sink(graph, mesh, rng, fraction, r)
        attempt = min_st_cut(graph, source, sink)
        attempt.region_fraction = fraction
        m1, m2, ok = split_and_accept(mesh, attempt)
        attempts.append(attempt)
        logger.debug("cut attempt %d: sizes %s accepted %s", len(attempts), attempt.sizes, ok)
        if ok:
            return (m1 if m1.n_faces >= m2.n_faces else m2), attempts
        failures += 1
        if failures % FAILURES_PER_HALVING == 0:
            fraction /= 2.0


def separate_layers(mesh, rng=0, region_fraction=REGION_FRACTION, r=None, keep_all=False):
    """Single layer of an open double-covered surface.

    Only the largest connected component is cut; the others are dropped, or
    appended unchanged with ``keep_all``.  Attempt summaries go to
    ``meta["separation_attempts"]``.
    """
    if mesh.is_empty():
        raise SeparationError("cannot separate an empty mesh")
    comps = connected_components(mesh)
    big = _largest(comps)
    layer, attempts = cut_layers(mesh.submesh(comps[big]), rng, region_fraction, r)
    parts = [layer]
    if keep_all:
        parts += [mesh.submesh(c) for i, c in enumerate(comps) if i != big]
    out = concatenate(parts, meta={**mesh.meta, "stage": "separated"})
    out.meta["separation_attempts"] = [a.summary() for a in attempts]
    return out


def select_component_closed(mesh, keep_all=False):
    """Connected component with the most faces (ties go to the lower id)."""
    if mesh.is_empty():
        raise SeparationError("cannot select a component of an empty mesh")
    comps = connected_components(mesh)
    if keep_all:
        return mesh.with_vertices(mesh.vertices, stage="separated")
    out = mesh.submesh(comps[_largest(comps)])
    out.meta["stage"] = "separated"
    return out
