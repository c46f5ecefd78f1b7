"""End-to-end acceptance checks on the analytic fixtures.

Each test is tagged with the criterion it belongs to; the terminal summary
prints one PASS/FAIL line per criterion (an expected failure counts as FAIL).
"""

import itertools
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from udfmesh.covering import (
    CoveringConfig,
    CoveringState,
    coarse_loss_and_grad,
    fine_loss_and_grad,
    fine_state,
    laplacian_weights,
    optimize_coarse,
    vertex_areas,
)
from udfmesh.field import TransformedField, build_analytic_oracle
from udfmesh.isoextract import extract_double_cover, validate_thickness
from udfmesh.mesh import count_flipped_pairs, count_self_intersections, edge_table, topology_report
from udfmesh.metrics import chamfer, chamfer_bruteforce
from udfmesh.pipeline import PipelineConfig, extract
from udfmesh.separation import DualGraph, min_st_cut

from .conftest import random_closed_mesh

criterion = pytest.mark.criterion

FIXTURES = {
    "sphere": "closed",
    "torus": "closed",
    "sheet": "open",
    "hemisphere": "open",
    "crossing": "keep-double",
}
# smallest comfortable valid offset at each resolution (lower bound is 1/(2k))
VALID_R = {64: 0.01, 128: 0.005}


def _run(shape, r, k, **kw):
    cfg = PipelineConfig(kind=f"analytic:{shape}", mode=FIXTURES[shape], r=r, resolution=k, **kw)
    return extract(cfg)


@pytest.fixture(scope="module")
def final_k128():
    start = time.perf_counter()
    runs = {shape: _run(shape, VALID_R[128], 128, self_intersections=False) for shape in FIXTURES}
    return runs, time.perf_counter() - start


@pytest.fixture(scope="module")
def sphere_k256():
    return _run("sphere", 0.0025, 256)


@pytest.fixture(scope="module")
def sphere_k128_default_r():
    return _run("sphere", 0.0025, 128, force=True, self_intersections=False)


@criterion(1, title="lower bound on r at k=256 is 0.001953125")
def test_criterion_1_lower_bound():
    rep = validate_thickness(0.0025, 256)
    assert rep.lower_bound == 0.001953125
    assert f"{rep.lower_bound:.3g}" == "0.00195"


@criterion(2, title="double covers are closed, manifold and consistently wound")
def test_criterion_2_double_cover_manifold():
    start = time.perf_counter()
    for shape, k in itertools.product(FIXTURES, (64, 128)):
        mesh = extract_double_cover(build_analytic_oracle(shape), VALID_R[k], k)
        rep = topology_report(mesh)
        assert np.count_nonzero(edge_table(mesh.faces).counts == 1) == 0, (shape, k)
        assert rep.tau_v == 0 and rep.tau_e == 0, (shape, k)
        assert rep.consistently_wound, (shape, k)
    assert time.perf_counter() - start < 30.0


@criterion(3, title="final topology of every fixture at k=128")
def test_criterion_3_topology(final_k128):
    runs, elapsed = final_k128
    topo = {shape: topology_report(res.mesh) for shape, res in runs.items()}
    assert (topo["sphere"].betti0, topo["sphere"].genus, topo["sphere"].boundaries) == (1, 0, 0)
    assert (topo["torus"].genus, topo["torus"].boundaries) == (1, 0)
    assert (topo["sheet"].boundaries, topo["sheet"].genus) == (1, 0)
    assert (topo["hemisphere"].boundaries, topo["hemisphere"].genus) == (1, 0)
    assert topo["crossing"].closed and topo["crossing"].orientable
    assert elapsed < 300.0


@criterion(4, title="sphere Chamfer at k=128, r=0.0025 within 1.5/128, lower at k=256")
@pytest.mark.xfail(
    strict=True,
    reason="r=0.0025 is below the lower bound 1/256 at k=128: the offset surface is under-resolved "
    "and the forced run lands far from the sphere",
)
def test_criterion_4_accuracy_k128(sphere_k128_default_r):
    assert sphere_k128_default_r.report["cd_mean"] <= 1.5 / 128


@criterion(4, title="sphere Chamfer at k=128, r=0.0025 within 1.5/128, lower at k=256")
def test_criterion_4_decreases_with_resolution(sphere_k128_default_r, sphere_k256):
    assert sphere_k256.report["cd_mean"] < sphere_k128_default_r.report["cd_mean"]
    assert sphere_k256.report["cd_mean"] <= 1.5 / 256


def test_sphere_accuracy_at_valid_offset(final_k128):
    # same bound with an offset the resolution can represent
    assert final_k128[0]["sphere"].report["cd_mean"] <= 1.5 / 128


@criterion(5, title="covering keeps the marching-cubes face list byte for byte")
def test_criterion_5_connectivity(final_k128):
    for shape, res in final_k128[0].items():
        cover = res.intermediates["double-cover"].faces.tobytes()
        assert res.intermediates["coarse"].faces.tobytes() == cover, shape
        assert res.intermediates["fine"].faces.tobytes() == cover, shape
    crossing = final_k128[0]["crossing"]
    assert crossing.mesh.faces.tobytes() == crossing.intermediates["double-cover"].faces.tobytes()


def _central_differences(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for i, a in itertools.product(range(x.shape[0]), range(3)):
        xp, xm = x.copy(), x.copy()
        xp[i, a] += h
        xm[i, a] -= h
        g[i, a] = (fn(xp) - fn(xm)) / (2 * h)
    return g


@criterion(6, title="analytic gradients match central differences within 1e-4")
def test_criterion_6_gradients():
    oracle = build_analytic_oracle("sphere")
    for trial in range(10):
        m = random_closed_mesh(50, seed=trial)
        weights = laplacian_weights(vertex_areas(m))

        def coarse(x):
            return coarse_loss_and_grad(CoveringState(x, None, None, weights=weights), m, oracle, 2000.0)[0]

        _, g = coarse_loss_and_grad(CoveringState(m.vertices, None, None, weights=weights), m, oracle, 2000.0)
        ref = _central_differences(coarse, m.vertices)
        assert np.linalg.norm(g - ref) / np.linalg.norm(ref) <= 1e-4

        moved = m.with_vertices(m.vertices + np.random.default_rng(trial).normal(scale=0.01, size=m.vertices.shape))

        def fine(x):
            s = fine_state(moved)
            s.positions = x
            return fine_loss_and_grad(s, m, oracle, 0.5)[0]

        s = fine_state(moved)
        s.positions = m.vertices
        _, g = fine_loss_and_grad(s, m, oracle, 0.5)
        ref = _central_differences(fine, m.vertices)
        assert np.linalg.norm(g - ref) / np.linalg.norm(ref) <= 1e-4


@criterion(7, title="coarse optimisation commutes with rotations")
def test_criterion_7_rotation_equivariance():
    base = build_analytic_oracle("torus")
    centre = np.full(3, 0.5)
    mesh = random_closed_mesh(50, seed=0)
    cfg = CoveringConfig(epochs_coarse=10)
    baseline = optimize_coarse(mesh, base, cfg).vertices
    worst = 0.0
    for rot in Rotation.random(100, random_state=1).as_matrix():
        field = TransformedField(base, rot, centre - rot @ centre)
        moved = mesh.with_vertices((mesh.vertices - centre) @ rot.T + centre)
        out = optimize_coarse(moved, field, cfg).vertices
        worst = max(worst, np.abs(out - ((baseline - centre) @ rot.T + centre)).max())
    assert worst <= 1e-6


def _enumerated(graph, source, sink):
    free = [i for i in range(graph.n_nodes) if i != source and i != sink]
    best = np.inf
    for bits in itertools.product([False, True], repeat=len(free)):
        side = np.zeros(graph.n_nodes, dtype=bool)
        side[source] = True
        side[free] = bits
        best = min(best, graph.capacity[side[graph.u] != side[graph.v]].sum())
    return best


@criterion(8, title="min cut equals enumeration; sheet separates within 3 attempts")
def test_criterion_8_min_cut_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4] or [(0, n - 1)]
        u, v = np.array(pairs).T
        graph = DualGraph(n, u, v, np.zeros(len(u)), rng.integers(1, 50, len(u)).astype(float), 0.0)
        s, t = rng.permutation(n)[:2]
        assert min_st_cut(graph, np.array([s]), np.array([t])).flow == _enumerated(graph, s, t)


@criterion(8, title="min cut equals enumeration; sheet separates within 3 attempts")
def test_criterion_8_sheet_separation(final_k128):
    res = final_k128[0]["sheet"]
    attempts = res.report["separation_attempts"]
    assert len(attempts) <= 3 and attempts[-1]["accepted"]
    a, b = attempts[-1]["sizes"]
    assert abs(a - b) < 0.15 * (a + b)


@criterion(9, title="indexed Chamfer equals the double loop within 1e-12")
def test_criterion_9_chamfer():
    rng = np.random.default_rng(9)
    a, b = rng.uniform(size=(2000, 3)), rng.uniform(size=(2000, 3))
    fast, slow = chamfer(a, b), chamfer_bruteforce(a, b)
    assert abs(fast.forward - slow.forward) <= 1e-12
    assert abs(fast.backward - slow.backward) <= 1e-12
    assert abs(fast.mean - slow.mean) <= 1e-12


@criterion(10, title="sphere at k=256 has no folds and no self-intersections")
def test_criterion_10_no_folds(sphere_k256):
    mesh = sphere_k256.mesh
    assert count_flipped_pairs(mesh) == 0
    assert sphere_k256.report["self_intersections"] == 0
    assert count_self_intersections(mesh) == 0


def test_low_resolution_counts_are_reported(capsys):
    res = _run("sphere", VALID_R[64], 64)
    flips, hits = count_flipped_pairs(res.mesh), res.report["self_intersections"]
    assert isinstance(hits, int) and hits >= 0
    with capsys.disabled():
        print(f"\nsphere k=64: {flips} flipped pairs, {hits} self-intersecting pairs")
