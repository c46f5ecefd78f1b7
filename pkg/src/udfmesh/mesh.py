"""Indexed triangle meshes and their topology.

Topology queries work purely on the face index array; geometry only enters
through areas, normals, sampling and the self-intersection count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _cc

from . import _kernels
from .field import PointCloud

_FACE_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass
class TriangleMesh:
    """Vertices ``(V, 3)`` float64 and faces ``(F, 3)`` int64.

    ``meta`` carries provenance tags such as the offset ``r``, the
    marching-cubes resolution ``k`` and the pipeline ``stage``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])):
                raise ValueError("face with repeated vertex")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("non-finite vertex position")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def is_empty(self):
        return len(self.faces) == 0

    def with_vertices(self, vertices, **meta):
        """Same connectivity, new positions."""
        return TriangleMesh(vertices, self.faces, {**self.meta, **meta})

    def submesh(self, face_ids):
        """Faces ``face_ids`` with the used vertices re-indexed compactly, keeping their order."""
        face_ids = np.asarray(face_ids, dtype=np.int64)
        sub = self.faces[face_ids]
        used, inverse = np.unique(sub.ravel(), return_inverse=True)
        return TriangleMesh(self.vertices[used], inverse.reshape(-1, 3), dict(self.meta))

    def face_normals(self, normalize=True):
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        if normalize:
            length = np.linalg.norm(n, axis=1)
            n = np.divide(n, length[:, None], out=np.zeros_like(n), where=length[:, None] > 0)
        return n

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def centroids(self):
        return self.vertices[self.faces].mean(axis=1)


@dataclass
class EdgeTable:
    edges: np.ndarray  # (E, 2) sorted vertex pairs
    face_edges: np.ndarray  # (F, 3) edge id of face edge (j, j+1)
    counts: np.ndarray  # (E,) incident face count


def edge_table(faces):
    faces = np.asarray(faces, dtype=np.int64)
    pairs = np.sort(faces[:, _FACE_EDGES].reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    return EdgeTable(edges.reshape(-1, 2), inverse.reshape(-1, 3), counts)


def _face_pairs(table):
    """Adjacent face pairs across edges with exactly two incident faces.

    Returns ``(edge_ids, face_a, face_b, local_a, local_b)``.
    """
    flat = table.face_edges.ravel()
    order = np.argsort(flat, kind="stable")
    manifold = table.counts[flat[order]] == 2
    occ = order[manifold].reshape(-1, 2)
    fa, fb = occ[:, 0] // 3, occ[:, 1] // 3
    return flat[occ[:, 0]], fa, fb, occ[:, 0] % 3, occ[:, 1] % 3


def face_adjacency(mesh):
    """Sparse symmetric face adjacency across shared edges (any multiplicity)."""
    table = edge_table(mesh.faces)
    flat = table.face_edges.ravel()
    order = np.argsort(flat, kind="stable")
    e_sorted = flat[order]
    same = e_sorted[1:] == e_sorted[:-1]
    a, b = order[:-1][same] // 3, order[1:][same] // 3
    n = mesh.n_faces
    adj = sparse.coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    return (adj + adj.T).tocsr()


def connected_components(mesh):
    """Edge-connected face sets, ordered by their lowest face id."""
    if mesh.is_empty():
        return []
    n, labels = _cc(face_adjacency(mesh), directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n + 1))
    return [order[bounds[i] : bounds[i + 1]] for i in range(n)]


def _vertex_connected_count(faces, n_vertices):
    if len(faces) == 0:
        return 0
    rows = np.repeat(faces[:, 0], 2)
    cols = faces[:, 1:].ravel()
    g = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_vertices, n_vertices))
    _, labels = _cc(g, directed=False)
    return len(np.unique(labels[np.unique(faces)]))


def _incidence_clusters(faces, table):
    """Label each face corner ``3*f + c`` by its fan cluster around the vertex.

    Corners at the same vertex join when their faces share an edge with
    exactly two incident faces; edges with more faces do not connect fans.
    """
    n_inc = 3 * len(faces)
    fe = table.face_edges
    occ_edge = fe.ravel()
    occ_face = np.repeat(np.arange(len(faces)), 3)
    occ_local = np.tile(np.arange(3), len(faces))
    keep = table.counts[occ_edge] == 2
    # each edge occurrence (local j) touches corners j and j+1 of its face
    rec_edge = np.concatenate([occ_edge[keep], occ_edge[keep]])
    ca = occ_local[keep]
    cb = (occ_local[keep] + 1) % 3
    fk = occ_face[keep]
    rec_corner = np.concatenate([ca, cb])
    rec_face = np.concatenate([fk, fk])
    rec_vertex = faces[rec_face, rec_corner]
    rec_inc = 3 * rec_face + rec_corner
    order = np.lexsort((rec_inc, rec_vertex, rec_edge))
    pairs = rec_inc[order].reshape(-1, 2)
    g = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n_inc, n_inc))
    _, labels = _cc(g, directed=False)
    return labels


def split_nonmanifold(mesh):
    """Split vertices into one copy per fan and detach faces along edges shared by > 2 faces.

    The result has no non-manifold vertices or edges.  Faces that still sit
    on a non-manifold edge after splitting are dropped.
    """
    faces = mesh.faces
    verts = mesh.vertices
    while len(faces):
        table = edge_table(faces)
        labels = _incidence_clusters(faces, table)
        keys = faces.ravel().astype(np.int64) * (3 * len(faces)) + labels
        uniq, new_ids = np.unique(keys, return_inverse=True)
        verts = verts[uniq // (3 * len(faces))]
        faces = new_ids.reshape(-1, 3)
        table = edge_table(faces)
        bad = table.counts > 2
        if not bad.any():
            break
        faces = faces[~np.any(bad[table.face_edges], axis=1)]
        used, inv = np.unique(faces, return_inverse=True)
        verts, faces = verts[used], inv.reshape(-1, 3)
    return TriangleMesh(verts, faces, dict(mesh.meta))


def boundary_loops(mesh):
    """Closed cycles of boundary edges (edges with exactly one incident face).

    Loops start at the lowest unused boundary edge; at branch points the walk
    continues to the lowest-index neighbour.
    """
    if mesh.is_empty():
        return []
    table = edge_table(mesh.faces)
    bedges = table.edges[table.counts == 1]
    if len(bedges) == 0:
        return []
    nbrs = {}
    for eid, (a, b) in enumerate(bedges.tolist()):
        nbrs.setdefault(a, []).append((b, eid))
        nbrs.setdefault(b, []).append((a, eid))
    for lst in nbrs.values():
        lst.sort()
    used = np.zeros(len(bedges), dtype=bool)
    loops = []
    for start_eid in range(len(bedges)):
        if used[start_eid]:
            continue
        used[start_eid] = True
        start, cur = bedges[start_eid].tolist()
        loop = [start]
        while cur != start:
            loop.append(cur)
            nxt = next(((v, e) for v, e in nbrs[cur] if not used[e]), None)
            if nxt is None:
                break
            used[nxt[1]] = True
            cur = nxt[0]
        loops.append(loop)
    return loops


def _orientable_faces(mesh):
    """Per-face flag: does the face's component admit a consistent orientation?

    Builds the orientation double cover (each face has a kept and a flipped
    sheet); a component is orientable iff the two sheets of a face stay
    disconnected.
    """
    n = mesh.n_faces
    _, fa, fb, la, lb = _face_pairs(edge_table(mesh.faces))
    same = mesh.faces[fa, la] == mesh.faces[fb, lb]
    dst = np.where(same, fb + n, fb)
    rows = np.concatenate([fa, fa + n])
    cols = np.concatenate([dst, (dst + n) % (2 * n)])
    g = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(2 * n, 2 * n))
    _, labels = _cc(g, directed=False)
    return labels[:n] != labels[n:], same


def check_orientation(mesh):
    """Return ``(orientable, consistently_wound)``.

    Adjacent faces are consistently wound when they traverse their shared
    edge in opposite directions.  A mesh is orientable when flipping some
    subset of faces makes every adjacent pair consistent.  Only edges with
    exactly two incident faces take part.
    """
    if mesh.is_empty():
        return True, True
    ok, same = _orientable_faces(mesh)
    return bool(ok.all()), not bool(same.any())


@dataclass
class TopologyReport:
    n_vertices: int
    n_edges: int
    n_faces: int
    betti0: int
    boundaries: int
    tau_v: float
    tau_e: float
    closed: bool
    orientable: bool
    consistently_wound: bool
    nonmanifold_vertices: int
    nonmanifold_edges: int
    component_genus: list = field(default_factory=list)
    component_euler: list = field(default_factory=list)
    component_boundaries: list = field(default_factory=list)

    @property
    def euler(self):
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def genus(self) -> Optional[int]:
        """Total genus, or ``None`` if any component is non-orientable."""
        if any(g is None for g in self.component_genus):
            return None
        return int(sum(self.component_genus))

    def as_dict(self):
        return {
            "V": self.n_vertices,
            "E": self.n_edges,
            "F": self.n_faces,
            "euler": self.euler,
            "betti0": self.betti0,
            "boundaries": self.boundaries,
            "genus": self.genus,
            "tau_v": self.tau_v,
            "tau_e": self.tau_e,
            "closed": self.closed,
            "orientable": self.orientable,
            "consistently_wound": self.consistently_wound,
            "component_genus": self.component_genus,
            "component_boundaries": self.component_boundaries,
        }


def topology_report(mesh):
    """Counts, manifoldness fractions, boundaries, components and genus.

    Non-manifold vertices are those whose incident faces split into more than
    one fan.  Boundaries and genus are computed after splitting such vertices
    and detaching non-manifold edges.
    """
    faces = mesh.faces
    if len(faces) == 0:
        return TopologyReport(0, 0, 0, 0, 0, 0.0, 0.0, True, True, True, 0, 0)
    table = edge_table(faces)
    used = np.unique(faces)
    V, E, F = len(used), len(table.edges), len(faces)
    nm_edges = int(np.count_nonzero(table.counts > 2))

    labels = _incidence_clusters(faces, table)
    vc = np.unique(np.stack([faces.ravel(), labels]), axis=1)
    fans = np.bincount(vc[0], minlength=mesh.n_vertices)
    nm_verts = int(np.count_nonzero(fans > 1))

    split = split_nonmanifold(mesh)
    comp_genus, comp_chi, comp_b = [], [], []
    total_b = 0
    if not split.is_empty():
        orient_mask = _orientable_faces(split)[0]
        for comp in connected_components(split):
            sub = split.submesh(comp)
            t = edge_table(sub.faces)
            chi = sub.n_vertices - len(t.edges) + sub.n_faces
            b = len(boundary_loops(sub))
            total_b += b
            comp_chi.append(int(chi))
            comp_b.append(b)
            if orient_mask[comp].all():
                comp_genus.append((2 - chi - b) // 2)
            else:
                comp_genus.append(None)
    orientable, wound = check_orientation(mesh)
    return TopologyReport(
        n_vertices=V,
        n_edges=E,
        n_faces=F,
        betti0=_vertex_connected_count(faces, mesh.n_vertices),
        boundaries=total_b,
        tau_v=nm_verts / V,
        tau_e=nm_edges / E,
        closed=bool(np.all(table.counts == 2)),
        orientable=orientable and all(g is not None for g in comp_genus),
        consistently_wound=wound,
        nonmanifold_vertices=nm_verts,
        nonmanifold_edges=nm_edges,
        component_genus=comp_genus,
        component_euler=comp_chi,
        component_boundaries=comp_b,
    )


def sample_surface(mesh, n, seed=0):
    """``n`` area-uniform surface samples (fixed-seed deterministic)."""
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    fid = rng.choice(mesh.n_faces, size=n, p=areas / total)
    u = np.sqrt(rng.random(n))
    w = rng.random(n)
    tri = mesh.vertices[mesh.faces[fid]]
    pts = (1.0 - u)[:, None] * tri[:, 0] + (u * (1.0 - w))[:, None] * tri[:, 1] + (u * w)[:, None] * tri[:, 2]
    return PointCloud(pts)


def count_self_intersections(mesh):
    """Number of intersecting triangle pairs that share no vertex."""
    if mesh.n_faces < 2:
        return 0
    return _kernels.count_intersecting_pairs(mesh.vertices, mesh.faces)


def count_flipped_pairs(mesh):
    """Adjacent face pairs whose unit normals point in opposing directions."""
    if mesh.n_faces < 2:
        return 0
    _, fa, fb, _, _ = _face_pairs(edge_table(mesh.faces))
    n = mesh.face_normals()
    return int(np.count_nonzero(np.einsum("ij,ij->i", n[fa], n[fb]) < 0))


def concatenate(meshes, meta=None):
    """Disjoint union of meshes, in the given order."""
    meshes = list(meshes)
    if not meshes:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), dict(meta or {}))
    offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
    verts = np.concatenate([m.vertices for m in meshes])
    faces = np.concatenate([m.faces + o for m, o in zip(meshes, offsets)])
    return TriangleMesh(verts, faces, dict(meshes[0].meta if meta is None else meta))
