import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from udfmesh import shapes
from udfmesh.field import (
    AnalyticField,
    ConstantField,
    DenseGrid,
    PointCloud,
    TransformedField,
    bake_grid,
    build_analytic_oracle,
    build_grid_oracle,
    build_mesh_oracle,
    build_point_cloud_oracle,
    closest_point_on_triangles,
    estimate_dmax,
    read_udfg,
    write_udfg,
)

from .conftest import random_closed_mesh, torus_mesh

finite = st.floats(-2.0, 3.0, allow_nan=False, allow_infinity=False)


def _linear_scan(points, queries):
    d = np.linalg.norm(queries[:, None, :] - points[None, :, :], axis=2)
    return d.min(axis=1), d.argmin(axis=1)


def _closest_on_triangle_reference(p, a, b, c):
    """Plane projection if it lands inside, otherwise the best of the three edges."""
    n = np.cross(b - a, c - a)
    nn = n @ n
    cands = []
    if nn > 1e-30:
        q = p - ((p - a) @ n) / nn * n
        # barycentric coordinates via signed sub-areas
        wa = np.cross(c - b, q - b) @ n / nn
        wb = np.cross(a - c, q - c) @ n / nn
        wc = 1.0 - wa - wb
        if min(wa, wb, wc) >= 0:
            cands.append(q)
    for u, v in ((a, b), (b, c), (c, a)):
        e = v - u
        t = 0.0 if e @ e == 0 else np.clip((p - u) @ e / (e @ e), 0.0, 1.0)
        cands.append(u + t * e)
    d = [np.linalg.norm(p - q) for q in cands]
    return cands[int(np.argmin(d))]


def _sphere_grid(k):
    return bake_grid(build_analytic_oracle("sphere"), k)


class TestExamples:
    def test_analytic_sphere(self):
        f = build_analytic_oracle("sphere")
        assert_allclose(f.eval([0.5, 0.5, 0.9]), 0.1, atol=1e-15)
        assert_allclose(f.eval([0.5, 0.5, 0.5]), 0.3, atol=1e-15)

    def test_two_point_cloud(self):
        f = build_point_cloud_oracle(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
        assert f.eval([0.25, 0.0, 0.0]) == 0.25

    def test_point_cloud_gradient(self):
        f = build_point_cloud_oracle(np.zeros((1, 3)))
        assert_array_equal(f.grad([0.25, 0.0, 0.0]), [1.0, 0.0, 0.0])
        assert_array_equal(f.grad([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0])

    @pytest.mark.parametrize("d", [-0.3, -1e-3, 0.0, 0.2])
    def test_single_point_distance(self, d):
        f = build_point_cloud_oracle(np.array([[0.5, 0.5, 0.5]]))
        assert_allclose(f.eval([0.5 + d, 0.5, 0.5]), abs(d), atol=1e-16)

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            build_point_cloud_oracle(np.zeros((0, 3)))

    def test_constant_grid(self):
        grid = DenseGrid((3, 4, 5), [0, 0, 0], [1, 1, 1], np.full(60, 0.125))
        f = build_grid_oracle(grid)
        x = np.random.default_rng(0).uniform(size=(50, 3))
        assert_array_equal(f.eval(x), 0.125)

    def test_corner_queries_exact(self):
        grid = _sphere_grid(16)
        f = build_grid_oracle(grid)
        vol = grid.as_volume()
        for ix, iy, iz in [(0, 0, 0), (16, 16, 16), (3, 7, 11), (16, 0, 9)]:
            x = np.array([ix, iy, iz]) / 16.0
            assert f.eval(x) == vol[iz, iy, ix]

    def test_sheet_and_sphere_samples(self):
        f = build_analytic_oracle("sheet")
        assert_allclose(f.eval([0.5, 0.5, 0.6]), 0.1, atol=1e-15)
        sph = build_analytic_oracle("sphere")
        pts = shapes.make_shape("sphere").sample(1000, np.random.default_rng(0))
        assert sph.eval(pts).max() <= 1e-12

    def test_unknown_shape(self):
        with pytest.raises(ValueError):
            build_analytic_oracle("klein-bottle")

    def test_non_finite_query_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            build_analytic_oracle("sphere").eval([np.nan, 0.0, 0.0])


class TestPointCloud:
    def test_matches_linear_scan(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(size=(10_000, 3))
        q = rng.uniform(-0.1, 1.1, size=(1000, 3))
        dist, idx = PointCloud(pts).nearest(q)
        ref_d, ref_i = _linear_scan(pts, q)
        assert_array_equal(dist, ref_d)
        assert_array_equal(idx, ref_i)

    def test_ties_go_to_lowest_index(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 1.0]])
        dist, idx = PointCloud(pts).nearest(np.zeros((1, 3)))
        assert idx[0] == 0 and dist[0] == 1.0

    def test_duplicate_points_tie(self):
        pts = np.array([[0.2, 0.2, 0.2]] * 3 + [[0.9, 0.9, 0.9]])
        _, idx = PointCloud(pts[::-1].copy()).nearest(np.array([[0.0, 0.0, 0.0]]))
        assert idx[0] == 1

    def test_sphere_samples_close_to_analytic(self):
        shape = shapes.make_shape("sphere")
        rng = np.random.default_rng(5)
        n = 100_000
        f = build_point_cloud_oracle(shape.sample(n, rng))
        dirs = rng.normal(size=(1000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        q = 0.5 + dirs * rng.uniform(0.28, 0.32, size=(1000, 1))
        gap = 2.0 * np.sqrt(shape.area / n)
        err = np.abs(f.eval(q) - shape.distance(q))
        assert err.max() <= gap

    def test_unit_gradient_norm(self):
        rng = np.random.default_rng(2)
        f = build_point_cloud_oracle(rng.uniform(size=(500, 3)))
        q = rng.uniform(size=(2000, 3))
        d, g = f.value_and_grad(q)
        keep = d > 1e-9
        assert_allclose(np.linalg.norm(g[keep], axis=1), 1.0, atol=1e-12)

    def test_own_points_give_zero_dmax(self):
        pts = np.random.default_rng(0).uniform(size=(300, 3))
        assert estimate_dmax(build_point_cloud_oracle(pts), pts) == 0.0


class TestGrid:
    def test_gradient_matches_finite_differences(self):
        grid = _sphere_grid(32)
        f = build_grid_oracle(grid)
        rng = np.random.default_rng(1)
        x = rng.uniform(0.05, 0.95, size=(100, 3))
        h = 1e-7
        # keep the stencil inside one cell so the trilinear patch is a polynomial
        frac = x * 32 - np.floor(x * 32)
        x = x[np.all((frac > 1e-4) & (frac < 1 - 1e-4), axis=1)]
        g = f.grad(x)
        fd = np.stack(
            [(f.eval(x + h * e) - f.eval(x - h * e)) / (2 * h) for e in np.eye(3)],
            axis=1,
        )
        assert_allclose(g, fd, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(
        coef=arrays(np.float64, 4, elements=st.floats(-1.0, 1.0)),
        q=arrays(np.float64, (5, 3), elements=st.floats(0.0, 1.0)),
    )
    def test_trilinear_exact_on_linear_functions(self, coef, q):
        axes = [np.linspace(0, 1, n) for n in (4, 5, 6)]
        zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        lin = coef[0] * xx + coef[1] * yy + coef[2] * zz + coef[3]
        shift = 4.0  # keep values non-negative
        grid = DenseGrid((4, 5, 6), [0, 0, 0], [1, 1, 1], (lin + shift).ravel())
        f = build_grid_oracle(grid)
        expected = q @ coef[:3] + coef[3] + shift
        assert_allclose(f.eval(q), expected, atol=1e-12)
        assert_allclose(f.grad(q), np.broadcast_to(coef[:3], q.shape), atol=1e-11)

    def test_out_of_box_queries_clamped_and_counted(self):
        grid = _sphere_grid(8)
        f = build_grid_oracle(grid)
        inside = f.eval([1.0, 0.5, 0.5])
        assert f.eval([1.5, 0.5, 0.5]) == inside
        f.eval(np.array([[0.5, 0.5, 0.5], [-1.0, 0.5, 0.5], [0.2, 2.0, 0.3]]))
        assert f.clamped_queries == 3

    def test_sphere_interpolation_error(self):
        # away from the kink on the surface the error is second order:
        # |err| <= h^2/8 * trace bound of the Hessian (1/rho per tangential axis);
        # across the kink it is at most the cell diagonal over two
        k = 128
        h = 1.0 / k
        f = build_grid_oracle(_sphere_grid(k))
        exact = build_analytic_oracle("sphere")
        q = np.random.default_rng(3).uniform(0.0, 1.0, size=(20_000, 3))
        err = np.abs(f.eval(q) - exact.eval(q))
        rho = np.linalg.norm(q - 0.5, axis=1)
        smooth = (rho > 0.1) & (np.abs(rho - 0.3) > np.sqrt(3) * h)
        assert err[smooth].max() <= h * h / 8 * 3 * (1.0 / (0.1 - np.sqrt(3) * h))
        assert err.max() <= np.sqrt(3) * h / 2

    def test_baked_dmax_is_interpolation_error(self):
        grid = _sphere_grid(64)
        f = build_grid_oracle(grid)
        pts = shapes.make_shape("sphere").sample(2000, np.random.default_rng(4))
        dmax = estimate_dmax(f, pts)
        assert dmax > 0
        assert dmax == pytest.approx(np.abs(f.eval(pts)).max())

    def test_udfg_round_trip(self, tmp_path):
        grid = _sphere_grid(10)
        path = tmp_path / "s.udfg"
        write_udfg(grid, path)
        assert os.path.getsize(path) == 68 + 4 * 11**3
        back = read_udfg(path)
        assert back.dims == grid.dims
        assert_array_equal(back.bbox_min, grid.bbox_min)
        assert_array_equal(back.bbox_max, grid.bbox_max)
        assert_array_equal(back.values, grid.values.astype(np.float32).astype(np.float64))

    def test_udfg_layout(self, tmp_path):
        grid = DenseGrid((2, 2, 3), [0, 0, 0], [1, 2, 3], np.arange(12.0))
        path = tmp_path / "g.udfg"
        write_udfg(grid, path)
        blob = path.read_bytes()
        assert blob[:4] == b"UDFG"
        assert np.frombuffer(blob[4:20], "<u4").tolist() == [1, 2, 2, 3]
        assert np.frombuffer(blob[20:68], "<f8").tolist() == [0, 0, 0, 1, 2, 3]
        assert np.frombuffer(blob[68:], "<f4").tolist() == list(range(12))

    @pytest.mark.parametrize(
        "blob, msg",
        [(b"UDF", "truncated"), (b"XXXX" + bytes(64), "magic")],
    )
    def test_udfg_bad_header(self, tmp_path, blob, msg):
        path = tmp_path / "bad.udfg"
        path.write_bytes(blob)
        with pytest.raises(ValueError, match=msg):
            read_udfg(path)

    def test_udfg_truncated_body(self, tmp_path):
        path = tmp_path / "t.udfg"
        write_udfg(_sphere_grid(4), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError, match="value bytes"):
            read_udfg(path)

    @pytest.mark.parametrize(
        "dims, values",
        [((1, 2, 2), np.zeros(4)), ((2, 2, 2), np.zeros(7)), ((2, 2, 2), -np.ones(8))],
    )
    def test_malformed_grid(self, dims, values):
        with pytest.raises(ValueError):
            DenseGrid(dims, [0, 0, 0], [1, 1, 1], values)


class TestMeshSurface:
    def test_closest_point_on_triangles_matches_reference(self):
        rng = np.random.default_rng(9)
        n = 2000
        a, b, c = (rng.normal(size=(n, 3)) for _ in range(3))
        # a share of degenerate triangles: collinear and collapsed
        c[:100] = a[:100] + 0.3 * (b[:100] - a[:100])
        b[100:150] = a[100:150]
        c[100:150] = a[100:150]
        p = rng.normal(scale=2.0, size=(n, 3))
        got = closest_point_on_triangles(p, a, b, c)
        ref = np.array([_closest_on_triangle_reference(*args) for args in zip(p, a, b, c)])
        assert_allclose(np.linalg.norm(p - got, axis=1), np.linalg.norm(p - ref, axis=1), atol=1e-12)

    def test_matches_brute_force_over_all_triangles(self):
        mesh = torus_mesh()
        f = build_mesh_oracle(mesh.vertices, mesh.faces)
        q = np.random.default_rng(0).uniform(0.1, 0.9, size=(300, 3))
        tri = mesh.vertices[mesh.faces]
        nq, nf = len(q), len(tri)
        cp = closest_point_on_triangles(
            np.repeat(q, nf, axis=0), *(np.tile(tri[:, i], (nq, 1)) for i in range(3))
        )
        brute = np.linalg.norm(np.repeat(q, nf, axis=0) - cp, axis=1).reshape(nq, nf).min(axis=1)
        assert_allclose(f.eval(q), brute, atol=1e-14)

    def test_vertices_are_on_surface(self):
        mesh = random_closed_mesh(60, seed=2)
        f = build_mesh_oracle(mesh.vertices, mesh.faces)
        assert f.eval(mesh.vertices).max() <= 1e-15

    def test_empty_mesh_rejected(self):
        with pytest.raises(ValueError, match="no faces"):
            build_mesh_oracle(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))


class TestTransformed:
    def test_rotated_sphere(self):
        base = AnalyticField(shapes.Sphere(center=(0.0, 0.0, 0.0), radius=0.3))
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        f = TransformedField(base, rot, translation=(0.5, 0.5, 0.5))
        x = np.random.default_rng(0).uniform(size=(100, 3))
        assert_allclose(f.eval(x), build_analytic_oracle("sphere").eval(x), atol=1e-15)
        assert_allclose(f.grad(x), build_analytic_oracle("sphere").grad(x), atol=1e-12)


def _oracles():
    rng = np.random.default_rng(0)
    mesh = random_closed_mesh(40, seed=1)
    return {
        "points": build_point_cloud_oracle(rng.uniform(size=(200, 3))),
        "grid": build_grid_oracle(_sphere_grid(12)),
        "sphere": build_analytic_oracle("sphere"),
        "torus": build_analytic_oracle("torus"),
        "hemisphere": build_analytic_oracle("hemisphere"),
        "crossing": build_analytic_oracle("crossing"),
        "mesh": build_mesh_oracle(mesh.vertices, mesh.faces),
        "constant": ConstantField(0.25),
    }


ORACLES = _oracles()


class TestProperties:
    @pytest.mark.parametrize("name", sorted(ORACLES))
    @settings(max_examples=25, deadline=None)
    @given(x=arrays(np.float64, (8, 3), elements=finite))
    def test_non_negative(self, name, x):
        assert np.all(ORACLES[name].eval(x) >= 0)

    @pytest.mark.parametrize("name", ["points", "sphere", "mesh", "torus"])
    @settings(max_examples=25, deadline=None)
    @given(
        x=arrays(np.float64, (16, 3), elements=st.floats(-0.2, 1.2)),
        upper=st.floats(0.0, 0.5),
    )
    def test_bounded_eval_is_clamped_eval(self, name, x, upper):
        f = ORACLES[name]
        assert_array_equal(f.eval_bounded(x, upper), np.minimum(f.eval(x), upper))

    def test_lipschitz_flags(self):
        assert not ORACLES["grid"].lipschitz
        assert all(ORACLES[k].lipschitz for k in ("points", "sphere", "mesh"))

    @pytest.mark.parametrize("name", ["points", "sphere", "torus", "sheet", "mesh"])
    def test_gradient_consistency(self, name):
        f = ORACLES.get(name) or build_analytic_oracle(name)
        rng = np.random.default_rng(21)
        x = rng.uniform(0.02, 0.98, size=(1000, 3))
        h = 1e-5
        stencil = [x + s * h * e for e in np.eye(3) for s in (1, -1)]
        fd = np.stack([(f.eval(stencil[2 * i]) - f.eval(stencil[2 * i + 1])) / (2 * h) for i in range(3)], axis=1)
        d, g = f.value_and_grad(x)
        keep = d > 1e-6
        # drop points whose stencil straddles a ridge of the distance field,
        # where the gradient jumps: the closest feature changes there
        if name == "points":
            ids = [f.cloud.nearest(s)[1] for s in stencil]
            keep &= np.all([i == ids[0] for i in ids], axis=0)
        elif name == "mesh":
            cps = [f.closest_point(s) for s in stencil]
            keep &= np.all([np.linalg.norm(c - cps[0], axis=1) < 10 * h for c in cps], axis=0)
        elif name == "sphere":
            keep &= np.linalg.norm(x - 0.5, axis=1) > 1e-3
        elif name == "torus":
            t = f.shape
            rho = np.linalg.norm(x[:, :2] - 0.5, axis=1)
            core = np.hypot(rho - t.major, x[:, 2] - 0.5)
            keep &= (rho > 1e-3) & (core > 1e-3)
        assert keep.sum() > 500
        err = np.linalg.norm(g[keep] - fd[keep], axis=1) / np.maximum(np.linalg.norm(fd[keep], axis=1), 1e-12)
        assert err.max() <= 1e-4
