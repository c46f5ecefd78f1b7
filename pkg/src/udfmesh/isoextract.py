"""Offset thickness validation and extraction of the dilated double cover.

The double cover is the iso-surface ``{f = r}`` of the unsigned distance
field: the boundary of the set of points within distance ``r`` of the
target surface.  It is extracted with marching cubes on a lattice that pads
the unit box so the offset surface never touches the lattice boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._mctable import CORNERS, EDGES, FACES, case_table
from .field import sample_nodes
from .mesh import TriangleMesh

logger = logging.getLogger(__name__)

ON_ISO_NUDGE = 1e-12


class ThicknessError(ValueError):
    pass


class EmptyExtractionError(RuntimeError):
    pass


@dataclass
class ThicknessReport:
    r: float
    k: int
    d_max: float
    lower_bound: float
    eta_min_half: Optional[float]
    verdict: str  # valid | below-lower | above-upper | unknown-upper

    @property
    def usable(self):
        return self.verdict in ("valid", "unknown-upper")


def validate_thickness(r, k, d_max=0.0, eta_min=None):
    """Check ``max(1/(2k), d_max) <= r <= eta_min / 2``.

    Without a known minimal gap size the upper bound cannot be checked and
    the verdict is ``"unknown-upper"`` when the lower bound holds.
    """
    if not r > 0:
        raise ThicknessError(f"offset r must be positive, got {r}")
    if int(k) != k or k < 2:
        raise ThicknessError(f"resolution k must be an integer >= 2, got {k}")
    if d_max < 0:
        raise ThicknessError(f"d_max must be non-negative, got {d_max}")
    lower = max(1.0 / (2 * int(k)), float(d_max))
    half_gap = None if eta_min is None else eta_min / 2.0
    if r < lower:
        verdict = "below-lower"
    elif half_gap is None:
        verdict = "unknown-upper"
    elif r > half_gap:
        verdict = "above-upper"
    else:
        verdict = "valid"
    return ThicknessReport(float(r), int(k), float(d_max), lower, half_gap, verdict)


@dataclass
class ScalarLattice:
    """Field samples at the nodes of a regular lattice, x-fastest.

    ``dims`` counts nodes per axis; node ``(i, j, l)`` sits at
    ``origin + spacing * (i, j, l)``.
    """

    dims: tuple
    origin: np.ndarray
    spacing: np.ndarray
    values: np.ndarray

    @property
    def k(self):
        return self.dims[0] - 1

    @property
    def bbox(self):
        return np.stack([self.origin, self.origin + self.spacing * (np.array(self.dims) - 1)])

    def node_positions(self):
        nx, ny, nz = self.dims
        idx = np.arange(nx * ny * nz)
        ijk = np.stack([idx % nx, (idx // nx) % ny, idx // (nx * ny)], axis=1)
        return self.origin + ijk * self.spacing


def sample_lattice(oracle, k, bbox, upper=None):
    """Evaluate ``oracle`` on the ``(k+1)^3`` nodes spanning ``bbox``.

    ``upper`` clamps values from above (see :func:`extraction_cap`).
    """
    if k < 2:
        raise ValueError("lattice resolution must be >= 2")
    bbox = np.asarray(bbox, dtype=np.float64)
    axes = [np.linspace(bbox[0, a], bbox[1, a], k + 1) for a in range(3)]
    values = sample_nodes(oracle, axes, upper=upper)
    spacing = (bbox[1] - bbox[0]) / k
    return ScalarLattice((k + 1,) * 3, bbox[0].copy(), spacing, values)


def extraction_cap(iso, spacing):
    """Value above which a lattice sample cannot affect the iso-surface.

    A distance field is 1-Lipschitz, so both ends of any edge crossing
    ``iso`` lie below ``iso + edge length``; clamping larger values changes
    neither the cube configurations nor any interpolated vertex.
    """
    return float(iso + 2.0 * np.linalg.norm(spacing))


def padded_unit_box(r, k):
    """Unit box grown by whole cells covering at least ``r + 2/k`` on every side.

    Returns ``(bbox, cells_per_axis)``; the cell edge stays exactly ``1/k``.
    """
    pad = math.ceil(round((r + 2.0 / k) * k, 9))
    lo, hi = -pad / k, 1.0 + pad / k
    return np.array([[lo] * 3, [hi] * 3]), k + 2 * pad


def marching_cubes(lattice, iso):
    """Welded, outward-oriented triangle mesh of ``{f = iso}``.

    Nodes with ``f < iso`` are inside.  Values exactly equal to ``iso`` are
    nudged up by ``1e-12`` first.  Ambiguous faces are resolved with the
    asymptotic decider.  Triangle normals point towards increasing ``f``.
    Returns an empty mesh when the level set misses the lattice.
    """
    nx, ny, nz = lattice.dims
    f = np.asarray(lattice.values, dtype=np.float64)
    f = np.where(f == iso, f + ON_ISO_NUDGE, f)
    g = (f - iso).reshape(nz, ny, nx)
    inside = g < 0

    config = np.zeros((nz - 1, ny - 1, nx - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        config |= inside[dz : nz - 1 + dz, dy : ny - 1 + dy, dx : nx - 1 + dx].astype(np.int64) << c
    config = config.ravel()
    active = np.flatnonzero((config != 0) & (config != 255))
    if len(active) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), {"iso": float(iso)})

    cx = active % (nx - 1)
    cy = (active // (nx - 1)) % (ny - 1)
    cz = active // ((nx - 1) * (ny - 1))
    base = cx + nx * (cy + ny * cz)
    corner_offset = CORNERS @ np.array([1, nx, nx * ny])
    gc = g.ravel()[base[:, None] + corner_offset[None, :]]  # (n, 8)

    facebits = np.zeros(len(active), dtype=np.int64)
    for fi, (corners, _, _) in enumerate(FACES):
        a, b, c, d = (gc[:, q] for q in corners)
        ia, ib, ic, id_ = a < 0, b < 0, c < 0, d < 0
        amb = (ia == ic) & (ib == id_) & (ia != ib)
        # bilinear saddle value; its sign says which diagonal pair is joined
        num = a * c - b * d
        den = a + c - b - d
        saddle = np.divide(num, den, out=np.zeros_like(num), where=amb)
        joined = amb & (saddle < 0)
        facebits |= joined.astype(np.int64) << fi

    row_of_key, tri_table, cen_table = case_table()
    rows = row_of_key[config[active] * 64 + facebits]
    tris = tri_table[rows]  # (n, T, 3)
    valid = tris[:, :, 0] >= 0

    n_nodes = nx * ny * nz
    edge_corner = np.array([a for a, _, _ in EDGES])
    edge_axis = np.array([ax for _, _, ax in EDGES])
    local_gid = 3 * (base[:, None] + corner_offset[edge_corner][None, :]) + edge_axis[None, :]
    n_cen = cen_table.shape[1]
    centre_gid = 3 * n_nodes + np.arange(len(active))[:, None] * n_cen + np.arange(n_cen)[None, :]
    gid_table = np.concatenate([local_gid, centre_gid], axis=1)  # (n, 12 + C)

    cube_of_tri = np.broadcast_to(np.arange(len(active))[:, None], valid.shape)[valid]
    tri_local = tris[valid]  # (M, 3), cube-major order
    tri_gid = gid_table[cube_of_tri[:, None], tri_local]
    uniq, inverse = np.unique(tri_gid.ravel(), return_inverse=True)
    faces = inverse.reshape(-1, 3)

    verts = np.empty((len(uniq), 3))
    on_edge = uniq < 3 * n_nodes
    eg = uniq[on_edge]
    node_a, axis = eg // 3, eg % 3
    node_b = node_a + np.array([1, nx, nx * ny])[axis]
    gflat = g.ravel()
    ga, gb = gflat[node_a], gflat[node_b]
    t = ga / (ga - gb)
    pa = _node_xyz(node_a, lattice)
    pb = _node_xyz(node_b, lattice)
    verts[on_edge] = pa + t[:, None] * (pb - pa)

    if not on_edge.all():
        cg = uniq[~on_edge] - 3 * n_nodes
        cube, slot = cg // n_cen, cg % n_cen
        loops = cen_table[rows[cube], slot]  # (m, 12) local edge ids, -1 padded
        member = loops >= 0
        ids = local_gid[cube[:, None], np.where(member, loops, 0)]
        pos = verts[np.searchsorted(uniq, ids)]
        verts[~on_edge] = (pos * member[:, :, None]).sum(axis=1) / member.sum(axis=1)[:, None]

    return TriangleMesh(verts, faces, {"iso": float(iso)})


def _node_xyz(nodes, lattice):
    nx, ny, _ = lattice.dims
    ijk = np.stack([nodes % nx, (nodes // nx) % ny, nodes // (nx * ny)], axis=1)
    return lattice.origin + ijk * lattice.spacing


def extract_double_cover(oracle, r, k, d_max=0.0, eta_min=None, force=False):
    """Marching cubes at iso-value ``r`` over the padded unit box at cell size ``1/k``.

    Raises :class:`ThicknessError` when ``r`` is below the lower bound unless
    ``force`` is set, and :class:`EmptyExtractionError` when nothing is found.
    """
    report = validate_thickness(r, k, d_max, eta_min)
    if report.verdict == "below-lower":
        msg = f"r={r} is below the lower bound {report.lower_bound:.6g} for k={k}"
        if not force:
            raise ThicknessError(msg)
        logger.warning("%s; continuing because force is set", msg)
    elif report.verdict == "unknown-upper":
        logger.info("minimal gap size unknown; upper bound on r not checked")
    elif report.verdict == "above-upper":
        logger.warning("r=%g exceeds half the minimal gap size %g", r, report.eta_min_half)
    bbox, cells = padded_unit_box(r, k)
    upper = extraction_cap(r, np.full(3, 1.0 / k)) if getattr(oracle, "lipschitz", False) else None
    lattice = sample_lattice(oracle, cells, bbox, upper=upper)
    mesh = marching_cubes(lattice, r)
    if mesh.is_empty():
        raise EmptyExtractionError(f"no surface at iso r={r}")
    mesh.meta.update(r=float(r), k=int(k), stage="double-cover")
    return mesh
