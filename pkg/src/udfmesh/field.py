"""Unsigned distance oracles: point clouds, dense grids and analytic shapes.

All oracles evaluate batches of query points of shape ``(N, 3)`` and return
non-negative distances of shape ``(N,)`` and gradients of shape ``(N, 3)``.
A single ``(3,)`` query is accepted too and returns a scalar / ``(3,)``.

Learned fields are not evaluated here directly; bake them externally into the
``UDFG`` grid format and load them with :func:`read_udfg`.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import shapes as _shapes

logger = logging.getLogger(__name__)

UNIT_BOX = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
# distances below this have an undefined gradient; we return zero there
DEGENERATE_DISTANCE = 1e-9

UDFG_MAGIC = b"UDFG"
UDFG_VERSION = 1
_UDFG_HEADER = struct.Struct("<4sIIII3d3d")


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(-1, 3)
    if not np.all(np.isfinite(x)):
        raise ValueError("query points must be finite")
    return x, single


def _unit_or_zero(delta, dist):
    g = np.zeros_like(delta)
    ok = dist >= DEGENERATE_DISTANCE
    g[ok] = delta[ok] / dist[ok, None]
    return g


class FieldOracle:
    """Base class for unsigned distance evaluators.

    Parameters
    ----------
    bbox : array_like, shape (2, 3)
        Axis-aligned box (min corner, max corner) in world units.
    gradient_mode : {"analytic", "finite-difference"}
        ``"finite-difference"`` replaces the closed-form gradient with central
        differences using ``h = 1e-4 * bbox diagonal``.
    """

    kind = "abstract"
    # exact distance fields are 1-Lipschitz; lattice extraction relies on it
    # to clamp far-away samples
    lipschitz = True

    def __init__(self, bbox=UNIT_BOX, gradient_mode="analytic"):
        self.bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 3)
        if gradient_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown gradient mode {gradient_mode!r}")
        self.gradient_mode = gradient_mode

    @property
    def fd_step(self):
        return 1e-4 * float(np.linalg.norm(self.bbox[1] - self.bbox[0]))

    def eval(self, x):
        x, single = _batch(x)
        d = self._eval(x)
        return d[0] if single else d

    def grad(self, x):
        x, single = _batch(x)
        if self.gradient_mode == "finite-difference":
            g = self._fd_grad(x)
        else:
            g = self._value_and_grad(x)[1]
        return g[0] if single else g

    def value_and_grad(self, x):
        """Distances and gradients in one pass (shares the nearest-point search)."""
        x, single = _batch(x)
        if self.gradient_mode == "finite-difference":
            d, g = self._eval(x), self._fd_grad(x)
        else:
            d, g = self._value_and_grad(x)
        if single:
            return d[0], g[0]
        return d, g

    def eval_bounded(self, x, upper):
        """``min(f(x), upper)``; subclasses may skip work for far queries."""
        x, single = _batch(x)
        d = self._eval_bounded(x, float(upper))
        return d[0] if single else d

    def _eval_bounded(self, x, upper):
        return np.minimum(self._eval(x), upper)

    def _fd_grad(self, x):
        h = self.fd_step
        g = np.empty_like(x)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            g[:, axis] = (self._eval(x + e) - self._eval(x - e)) / (2.0 * h)
        return g

    def _eval(self, x):
        raise NotImplementedError

    def _value_and_grad(self, x):
        raise NotImplementedError


class ConstantField(FieldOracle):
    """``f(x) = c`` everywhere; only useful as a test double."""

    kind = "constant"

    def __init__(self, value, bbox=UNIT_BOX):
        super().__init__(bbox)
        if value < 0:
            raise ValueError("an unsigned distance cannot be negative")
        self.value = float(value)

    def _eval(self, x):
        return np.full(len(x), self.value)

    def _value_and_grad(self, x):
        return self._eval(x), np.zeros_like(x)


class PointCloud:
    """Sample points plus a lazily built k-d tree.

    Nearest-point ties are broken by the lowest point index.
    """

    def __init__(self, points):
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts
        self._tree = None

    def __len__(self):
        return len(self.points)

    @property
    def index(self):
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def nearest(self, x, workers=1, upper=np.inf):
        """Return ``(distance, index)`` of the nearest sample for each query.

        Queries with no sample closer than ``upper`` get distance ``inf`` and
        index ``len(self)``.
        """
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        k = min(4, n)
        dist, idx = self.index.query(x, k=k, workers=workers, distance_upper_bound=upper)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]
        # the tree's own distances may round differently; recompute, then
        # resolve exact ties by index
        found = idx < n
        pts = self.points[np.where(found, idx, 0)]
        exact = np.where(found, np.linalg.norm(x[:, None, :] - pts, axis=2), np.inf)
        best = exact.min(axis=1)
        masked = np.where(found & (exact == best[:, None]), idx, np.iinfo(np.int64).max)
        nearest = np.minimum(masked.min(axis=1), n)
        return best, nearest


class PointCloudField(FieldOracle):
    """Exact distance to the nearest sample point."""

    kind = "point-cloud"

    def __init__(self, cloud, bbox=None, workers=1):
        if bbox is None:
            bbox = np.stack([cloud.points.min(axis=0), cloud.points.max(axis=0)])
        super().__init__(bbox)
        self.cloud = cloud
        self.workers = workers

    def _eval(self, x):
        return self.cloud.nearest(x, self.workers)[0]

    def _eval_bounded(self, x, upper):
        # a small slack keeps the tree's rounding from dropping borderline hits
        return np.minimum(self.cloud.nearest(x, self.workers, upper * (1 + 1e-9) + 1e-12)[0], upper)

    def _value_and_grad(self, x):
        dist, idx = self.cloud.nearest(x, self.workers)
        return dist, _unit_or_zero(x - self.cloud.points[idx], dist)


@dataclass
class DenseGrid:
    """Samples on a regular lattice, stored x-fastest.

    ``values[x + nx * (y + ny * z)]`` is the sample at lattice node ``(x, y, z)``.
    """

    dims: tuple
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.validate()

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ValueError(f"grid dims must be three integers >= 2, got {self.dims}")
        if self.values.size != self.dims[0] * self.dims[1] * self.dims[2]:
            raise ValueError(f"expected {np.prod(self.dims)} grid values, got {self.values.size}")
        if not np.all(self.bbox_max > self.bbox_min):
            raise ValueError("grid bbox must have positive extent on every axis")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("grid values must be finite and non-negative")

    def as_volume(self):
        """Values as a ``(nz, ny, nx)`` view."""
        nx, ny, nz = self.dims
        return self.values.reshape(nz, ny, nx)


def write_udfg(grid, path):
    nx, ny, nz = grid.dims
    header = _UDFG_HEADER.pack(UDFG_MAGIC, UDFG_VERSION, nx, ny, nz, *grid.bbox_min, *grid.bbox_max)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(grid.values, dtype="<f4").tobytes())


def read_udfg(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _UDFG_HEADER.size:
        raise ValueError(f"{path}: truncated UDFG header")
    magic, version, nx, ny, nz, *box = _UDFG_HEADER.unpack_from(blob)
    if magic != UDFG_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != UDFG_VERSION:
        raise ValueError(f"{path}: unsupported UDFG version {version}")
    count = nx * ny * nz
    body = blob[_UDFG_HEADER.size :]
    if len(body) != 4 * count:
        raise ValueError(f"{path}: expected {4 * count} value bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return DenseGrid((nx, ny, nz), box[:3], box[3:], values)


class GridField(FieldOracle):
    """Trilinear interpolation of a :class:`DenseGrid`.

    Queries outside the box are clamped onto it; ``clamped_queries`` counts
    how often that happened.
    """

    kind = "grid"
    lipschitz = False

    def __init__(self, grid, gradient_mode="analytic"):
        super().__init__(np.stack([grid.bbox_min, grid.bbox_max]), gradient_mode)
        self.grid = grid
        self._vol = grid.as_volume()
        self._cells = np.array(grid.dims, dtype=np.float64) - 1.0
        self._scale = self._cells / (grid.bbox_max - grid.bbox_min)
        self.clamped_queries = 0

    def _locate(self, x):
        lo, hi = self.grid.bbox_min, self.grid.bbox_max
        outside = np.any((x < lo) | (x > hi), axis=1)
        n_out = int(outside.sum())
        if n_out:
            self.clamped_queries += n_out
            logger.warning("%d grid queries outside the bbox were clamped", n_out)
        u = (np.clip(x, lo, hi) - lo) * self._scale
        i = np.minimum(np.floor(u).astype(np.int64), np.array(self.grid.dims) - 2)
        return i, u - i

    def _corners(self, i):
        v = self._vol
        x0, y0, z0 = i[:, 0], i[:, 1], i[:, 2]
        x1, y1, z1 = x0 + 1, y0 + 1, z0 + 1
        return (
            v[z0, y0, x0], v[z0, y0, x1], v[z0, y1, x0], v[z0, y1, x1],
            v[z1, y0, x0], v[z1, y0, x1], v[z1, y1, x0], v[z1, y1, x1],
        )  # fmt: skip

    def _eval(self, x):
        i, t = self._locate(x)
        c000, c100, c010, c110, c001, c101, c011, c111 = self._corners(i)
        tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
        c00 = c000 + tx * (c100 - c000)
        c10 = c010 + tx * (c110 - c010)
        c01 = c001 + tx * (c101 - c001)
        c11 = c011 + tx * (c111 - c011)
        c0 = c00 + ty * (c10 - c00)
        c1 = c01 + ty * (c11 - c01)
        return c0 + tz * (c1 - c0)

    def _value_and_grad(self, x):
        i, t = self._locate(x)
        c000, c100, c010, c110, c001, c101, c011, c111 = self._corners(i)
        tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
        c00 = c000 + tx * (c100 - c000)
        c10 = c010 + tx * (c110 - c010)
        c01 = c001 + tx * (c101 - c001)
        c11 = c011 + tx * (c111 - c011)
        c0 = c00 + ty * (c10 - c00)
        c1 = c01 + ty * (c11 - c01)
        value = c0 + tz * (c1 - c0)

        dx0 = (1 - ty) * (c100 - c000) + ty * (c110 - c010)
        dx1 = (1 - ty) * (c101 - c001) + ty * (c111 - c011)
        gx = (1 - tz) * dx0 + tz * dx1
        gy = (1 - tz) * (c10 - c00) + tz * (c11 - c01)
        gz = c1 - c0
        g = np.stack([gx, gy, gz], axis=1) * self._scale
        return value, g


class AnalyticField(FieldOracle):
    """``|distance|`` to an analytic shape from :mod:`udfmesh.shapes`."""

    kind = "analytic"

    def __init__(self, shape, bbox=UNIT_BOX, gradient_mode="analytic"):
        super().__init__(bbox, gradient_mode)
        self.shape = shape

    def _eval(self, x):
        return self.shape.distance(x)

    def _value_and_grad(self, x):
        cp = self.shape.closest_point(x)
        delta = x - cp
        dist = self.shape.distance(x)
        return dist, _unit_or_zero(delta, np.linalg.norm(delta, axis=1))


class TransformedField(FieldOracle):
    """Rigidly moved copy of another field: ``g(x) = f(R^T (x - t))``."""

    kind = "transformed"

    def __init__(self, base, rotation, translation=(0.0, 0.0, 0.0)):
        super().__init__(base.bbox, base.gradient_mode)
        self.base = base
        self.rotation = np.asarray(rotation, dtype=np.float64)
        self.translation = np.asarray(translation, dtype=np.float64)

    def _local(self, x):
        return (x - self.translation) @ self.rotation

    def _eval(self, x):
        return self.base._eval(self._local(x))

    def _value_and_grad(self, x):
        d, g = self.base._value_and_grad(self._local(x))
        return d, g @ self.rotation.T


def closest_point_on_triangles(p, a, b, c):
    """Closest point to ``p[i]`` on triangle ``(a[i], b[i], c[i])``, all ``(N, 3)``.

    Region classification over vertices, edges and interior; degenerate
    triangles fall back to the nearest of their three edges.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        out = a + ab * (vb * denom)[:, None] + ac * (vc * denom)[:, None]
        # edge regions, later assignments take precedence
        t = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out[m] = a[m] + t[m, None] * ab[m]
        t = d2 / (d2 - d6)
        m2 = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out[m2] = a[m2] + t[m2, None] * ac[m2]
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m3 = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        out[m3] = b[m3] + t[m3, None] * (c[m3] - b[m3])
    # vertex regions
    m = (d1 <= 0) & (d2 <= 0)
    out[m] = a[m]
    m = (d3 >= 0) & (d4 <= d3)
    out[m] = b[m]
    m = (d6 >= 0) & (d5 <= d6)
    out[m] = c[m]
    # near-collinear triangles make the region tests unreliable
    nrm = np.cross(ab, ac)
    scale = np.einsum("ij,ij->i", ab, ab) * np.einsum("ij,ij->i", ac, ac)
    bad = ~np.all(np.isfinite(out), axis=1) | (np.einsum("ij,ij->i", nrm, nrm) <= 1e-20 * scale)
    if bad.any():
        cands = [_closest_on_segment(p[bad], u[bad], v[bad]) for u, v in ((a, b), (b, c), (c, a))]
        dist = np.stack([np.linalg.norm(p[bad] - q, axis=1) for q in cands], axis=1)
        out[bad] = np.stack(cands, axis=1)[np.arange(bad.sum()), np.argmin(dist, axis=1)]
    return out


def _closest_on_segment(p, a, b):
    ab = b - a
    den = np.einsum("ij,ij->i", ab, ab)
    t = np.divide(np.einsum("ij,ij->i", p - a, ab), den, out=np.zeros_like(den), where=den > 0)
    return a + np.clip(t, 0.0, 1.0)[:, None] * ab


class MeshSurfaceField(FieldOracle):
    """Exact unsigned distance to a triangle mesh.

    Candidate triangles come from a k-d tree over centroids: the nearest
    centroid bounds the distance, and any triangle that could beat it has
    its centroid within that bound plus the largest centroid-to-vertex
    radius.
    """

    kind = "mesh-surface"

    def __init__(self, vertices, faces, bbox=UNIT_BOX, gradient_mode="analytic", workers=1):
        super().__init__(bbox, gradient_mode)
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) == 0:
            raise ValueError("mesh has no faces")
        tri = self.vertices[self.faces]
        self._tri = tri
        self._cent = tri.mean(axis=1)
        self._reach = float(np.linalg.norm(tri - self._cent[:, None, :], axis=2).max())
        self._tree = cKDTree(self._cent)
        self.workers = workers

    def closest_point(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        d0, _ = self._tree.query(x, workers=self.workers)
        lists = self._tree.query_ball_point(x, d0 + self._reach + 1e-12, workers=self.workers)
        counts = np.fromiter((len(c) for c in lists), dtype=np.int64, count=len(x))
        qid = np.repeat(np.arange(len(x)), counts)
        fid = np.fromiter((f for c in lists for f in sorted(c)), dtype=np.int64, count=int(counts.sum()))
        t = self._tri[fid]
        cp = closest_point_on_triangles(x[qid], t[:, 0], t[:, 1], t[:, 2])
        dist = np.linalg.norm(x[qid] - cp, axis=1)
        # per query: smallest distance, ties to the lowest face id
        order = np.lexsort((fid, dist, qid))
        first = np.r_[0, np.cumsum(counts)[:-1]]
        best = order[first]
        return cp[best]

    def _eval(self, x):
        return np.linalg.norm(x - self.closest_point(x), axis=1)

    def _eval_bounded(self, x, upper):
        d0, _ = self._tree.query(x, workers=self.workers)
        out = np.full(len(x), upper)
        near = d0 - self._reach <= upper
        if near.any():
            out[near] = np.minimum(self._eval(x[near]), upper)
        return out

    def _value_and_grad(self, x):
        delta = x - self.closest_point(x)
        dist = np.linalg.norm(delta, axis=1)
        return dist, _unit_or_zero(delta, dist)


def build_mesh_oracle(vertices, faces, gradient_mode="analytic", workers=1):
    return MeshSurfaceField(vertices, faces, gradient_mode=gradient_mode, workers=workers)


def build_point_cloud_oracle(points, workers=1):
    cloud = points if isinstance(points, PointCloud) else PointCloud(points)
    return PointCloudField(cloud, workers=workers)


def build_grid_oracle(grid, gradient_mode="analytic"):
    grid.validate()
    return GridField(grid, gradient_mode)


def build_analytic_oracle(shape, gradient_mode="analytic"):
    """Oracle for a shape id (``"sphere"``, ``"torus"``, ...) or a shape object."""
    if isinstance(shape, str):
        shape = _shapes.make_shape(shape)
    return AnalyticField(shape, gradient_mode=gradient_mode)


def estimate_dmax(oracle, surface_samples):
    """Largest field value over points that should lie on the zero level-set."""
    pts = surface_samples.points if isinstance(surface_samples, PointCloud) else surface_samples
    return float(np.max(oracle.eval(np.asarray(pts).reshape(-1, 3))))


def bake_grid(oracle, k, bbox=None, chunk=1 << 20):
    """Sample ``oracle`` on a ``(k+1)^3`` lattice spanning ``bbox``."""
    bbox = oracle.bbox if bbox is None else np.asarray(bbox, dtype=np.float64)
    axes = [np.linspace(bbox[0, a], bbox[1, a], k + 1) for a in range(3)]
    values = sample_nodes(oracle, axes, chunk)
    return DenseGrid((k + 1,) * 3, bbox[0], bbox[1], values)


def sample_nodes(oracle, axes, chunk=1 << 20, upper=None):
    """Evaluate ``oracle`` at every lattice node, x-fastest, in bounded-memory chunks.

    With ``upper`` set, values are ``min(f, upper)``, which lets oracles
    skip expensive searches far from the surface.
    """
    xs, ys, zs = axes
    nx, ny, nz = len(xs), len(ys), len(zs)
    out = np.empty(nx * ny * nz)
    plane = nx * ny
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    slab = np.stack([gx.ravel(), gy.ravel(), np.zeros(plane)], axis=1)
    per = max(1, chunk // plane)
    for z0 in range(0, nz, per):
        zz = zs[z0 : z0 + per]
        pts = np.tile(slab, (len(zz), 1))
        pts[:, 2] = np.repeat(zz, plane)
        vals = oracle.eval(pts) if upper is None else oracle.eval_bounded(pts, upper)
        out[z0 * plane : (z0 + len(zz)) * plane] = vals
    return out
