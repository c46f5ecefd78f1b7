import os

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from udfmesh import _kernels
from udfmesh.mesh import TriangleMesh

TETRA_V = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
TETRA_F = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])


def tetra(offset=(0.0, 0.0, 0.0), scale=1.0):
    return TriangleMesh(TETRA_V * scale + np.asarray(offset), TETRA_F.copy())


def two_tets_sharing_vertex():
    a = TETRA_V
    b = -TETRA_V[1:]  # mirror through the origin, keeping vertex 0 shared
    verts = np.concatenate([a, b])
    f2 = np.array([[0, 5, 4], [0, 4, 6], [0, 6, 5], [4, 5, 6]])
    return TriangleMesh(verts, np.concatenate([TETRA_F, f2]))


def grid_strip(nu, nv, closed_u=False, closed_v=False, twist=False):
    """Quad grid split into triangles; optional wrap-around in u (with a twist) and v."""
    verts_per_row = nu if closed_u else nu + 1
    rows = nv if closed_v else nv + 1

    def vid(i, j):
        if closed_u:
            if i == nu:
                i = 0
                if twist:
                    j = (rows - 1) - j
        if closed_v and j == nv:
            j = 0
        return j * verts_per_row + i

    faces = []
    for j in range(nv):
        for i in range(nu):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            faces += [[a, b, c], [a, c, d]]
    return verts_per_row * rows, np.array(faces)


def torus_mesh(nu=24, nv=12, major=0.3, minor=0.1):
    n, faces = grid_strip(nu, nv, closed_u=True, closed_v=True)
    u = 2 * np.pi * (np.arange(n) % nu) / nu
    v = 2 * np.pi * (np.arange(n) // nu) / nv
    verts = np.stack(
        [(major + minor * np.cos(v)) * np.cos(u), (major + minor * np.cos(v)) * np.sin(u), minor * np.sin(v)], axis=1
    )
    return TriangleMesh(verts + 0.5, faces)


def random_closed_mesh(n=50, seed=0, r_lo=0.36, r_hi=0.44):
    """Convex-hull triangulation of ``n`` points in a shell around the unit-box centre.

    Every point is a hull vertex, so the mesh has exactly ``n`` vertices.
    Points stay away from the analytic sphere (radius 0.3) and its centre,
    where the distance field is smooth.
    """
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = 0.5 + d * rng.uniform(r_lo, r_hi, size=(n, 1))
    hull = ConvexHull(pts)
    faces = hull.simplices.copy()
    # orient outward
    c = pts[faces].mean(axis=1)
    nrm = np.cross(pts[faces[:, 1]] - pts[faces[:, 0]], pts[faces[:, 2]] - pts[faces[:, 0]])
    flip = np.einsum("ij,ij->i", nrm, c - 0.5) < 0
    faces[flip] = faces[flip][:, ::-1]
    used = np.unique(faces)
    remap = np.full(n, -1)
    remap[used] = np.arange(len(used))
    return TriangleMesh(pts[used], remap[faces])


@pytest.fixture
def tet():
    return tetra()


@pytest.fixture(params=sorted(_kernels.backends()))
def backend(request):
    return _kernels.backends()[request.param]


def pytest_report_header(config):
    forced = os.environ.get("UDFMESH_PURE_PYTHON")
    return f"udfmesh kernels: {_kernels.BACKEND}" + (" (forced pure Python)" if forced else "")


# acceptance bookkeeping: every test marked criterion(n) counts towards line n
_criteria = {}


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    ok = report.passed and not hasattr(report, "wasxfail")
    failed = report.failed or (report.when == "call" and hasattr(report, "wasxfail"))
    if report.when == "call" or failed:
        entry = _criteria.setdefault(marks[0], [marks[1], True])
        entry[1] = entry[1] and ok and not failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = (mark.args[0], mark.kwargs.get("title", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
