"""Projection of the double cover onto the zero level-set.

Two stages move the vertices of the marching-cubes mesh while keeping its
connectivity fixed:

* coarse: field values at vertices and face centroids plus an area-weighted
  uniform Laplacian that keeps the mesh from folding;
* fine: field values again, plus a penalty on the tangential drift of each
  face centroid away from its coarse position, measured against the coarse
  face normal.

Centroids are never free variables; their gradients flow back to the three
face vertices.  Updates use vector Adam (one scalar second moment per vertex)
so the optimisation commutes with rotations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import sparse

from .mesh import edge_table

logger = logging.getLogger(__name__)

AREA_FLOOR = 1e-12
NORM_SMOOTHING = 1e-12
_SQRT_SMOOTHING = NORM_SMOOTHING**0.5


@dataclass
class CoveringConfig:
    lambda1: float = 2000.0
    lambda2: float = 0.5
    epochs_coarse: int = 300
    epochs_fine: int = 100
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch_size: int = 65536
    use_centroids: bool = True
    early_stop: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs_coarse < 0 or self.epochs_fine < 0:
            raise ValueError("epoch counts must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")


@dataclass
class CoveringState:
    """Optimiser state for one stage."""

    positions: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    areas: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    anchors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    normal_ok: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, positions):
        positions = np.array(positions, dtype=np.float64)
        return cls(positions, np.zeros_like(positions), np.zeros(len(positions)))


class MeshOperators:
    """Sparse operators that depend only on connectivity.

    ``centroid`` maps vertex positions to face centroids (``F x V``, entries
    1/3); ``laplacian`` is ``I - D^-1 A`` for the vertex adjacency ``A``.
    """

    def __init__(self, mesh):
        V, F = mesh.n_vertices, mesh.n_faces
        self.faces = mesh.faces
        self.n_vertices = V
        rows = np.repeat(np.arange(F), 3)
        self.centroid = sparse.csr_matrix((np.full(3 * F, 1.0 / 3.0), (rows, mesh.faces.ravel())), shape=(F, V))
        self.centroid_t = self.centroid.T.tocsr()
        edges = edge_table(mesh.faces).edges
        adj = sparse.coo_matrix(
            (np.ones(2 * len(edges)), (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])),
            shape=(V, V),
        ).tocsr()
        deg = np.asarray(adj.sum(axis=1)).ravel()
        self.isolated = deg == 0
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        mean = sparse.diags(inv) @ adj
        keep = sparse.diags((~self.isolated).astype(np.float64))
        # isolated vertices get an all-zero Laplacian row
        self.laplacian = (keep @ (sparse.identity(V, format="csr") - mean)).tocsr()
        self.laplacian_t = self.laplacian.T.tocsr()


def vertex_areas(mesh, positions=None):
    """Sum of incident face areas per vertex, floored at ``1e-12``."""
    pos = mesh.vertices if positions is None else positions
    tri = pos[mesh.faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    acc = np.bincount(mesh.faces.ravel(), weights=np.repeat(area, 3), minlength=len(pos))
    return np.maximum(acc, AREA_FLOOR)


def laplacian_weights(areas):
    """``sqrt(A_max / A_i)``: small neighbourhoods get a stiffer Laplacian."""
    areas = np.asarray(areas, dtype=np.float64)
    return np.sqrt(areas.max() / areas)


def _field_terms(oracle, positions, ops, batch_size, use_centroids):
    """Sum of field values over vertices (and centroids) and its vertex gradient."""
    pts = positions
    if use_centroids:
        pts = np.concatenate([positions, ops.centroid @ positions])
    values = np.empty(len(pts))
    grads = np.empty_like(pts)
    for s in range(0, len(pts), batch_size):
        values[s : s + batch_size], grads[s : s + batch_size] = oracle.value_and_grad(pts[s : s + batch_size])
    V = ops.n_vertices
    g = grads[:V].copy()
    if use_centroids:
        g += ops.centroid_t @ grads[V:]
    return float(values.sum()), g


def coarse_loss_and_grad(state, mesh, oracle, lambda1, ops=None, batch_size=65536, use_centroids=True):
    """Field term plus ``lambda1 * sum_i w_i |x_i - mean of 1-ring|^2``.

    Weights in ``state.weights`` are treated as constants.
    """
    ops = ops or MeshOperators(mesh)
    x = state.positions
    loss, g = _field_terms(oracle, x, ops, batch_size, use_centroids)
    n_iso = int(ops.isolated.sum())
    if n_iso:
        state.diagnostics["isolated_vertices"] = n_iso
    w = state.weights if state.weights is not None else np.ones(len(x))
    delta = ops.laplacian @ x
    loss += lambda1 * float(np.sum(w * np.einsum("ij,ij->i", delta, delta)))
    g += 2.0 * lambda1 * (ops.laplacian_t @ (w[:, None] * delta))
    return loss, g


def coarse_normals(mesh):
    """Unit face normals plus a mask of faces whose normal is defined."""
    n = mesh.face_normals(normalize=False)
    length = np.linalg.norm(n, axis=1)
    ok = length > 0
    unit = np.zeros_like(n)
    unit[ok] = n[ok] / length[ok, None]
    return unit, ok


def fine_loss_and_grad(state, mesh, oracle, lambda2, ops=None, batch_size=65536, use_centroids=True):
    """Field term plus ``lambda2 * sum_f |(c_f - a_f) x n_f|``.

    The norm is smoothed as ``sqrt(|u|^2 + 1e-12) - 1e-6`` so it is
    differentiable and exactly zero at zero displacement.  Faces whose coarse
    normal is undefined are skipped.
    """
    ops = ops or MeshOperators(mesh)
    x = state.positions
    loss, g = _field_terms(oracle, x, ops, batch_size, use_centroids)
    ok = state.normal_ok if state.normal_ok is not None else np.ones(len(state.normals), dtype=bool)
    skipped = int((~ok).sum())
    if skipped:
        state.diagnostics["skipped_faces"] = skipped
    d = ops.centroid @ x - state.anchors
    n = state.normals
    u = np.cross(d, n)
    s = np.sqrt(np.einsum("ij,ij->i", u, u) + NORM_SMOOTHING)
    loss += lambda2 * float(np.sum(np.where(ok, s - _SQRT_SMOOTHING, 0.0)))
    gd = np.cross(n, u) / s[:, None]
    gd[~ok] = 0.0
    g += lambda2 * (ops.centroid_t @ gd)
    return loss, g


def vector_adam_step(state, grad, cfg):
    """One vector-Adam update in place; returns ``state``.

    The second moment is the running mean of ``|g|^2`` per vertex, so the
    step for a vertex is a rotation-equivariant function of its gradient.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        bad = int((~np.isfinite(grad)).any(axis=1).sum())
        raise FloatingPointError(f"non-finite gradient at {bad} vertices (step {state.step + 1})")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    state.first_moment = b1 * state.first_moment + (1.0 - b1) * grad
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * np.einsum("ij,ij->i", grad, grad)
    m_hat = state.first_moment / (1.0 - b1**state.step)
    v_hat = state.second_moment / (1.0 - b2**state.step)
    state.positions = state.positions - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)[:, None]
    return state


def _converged(history, window=10, tol=1e-6):
    if len(history) <= window:
        return False
    recent = np.asarray(history[-window - 1 :])
    rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[:-1]), 1e-300)
    return bool(np.all(rel < tol))


def optimize_coarse(mesh, oracle, cfg=None, history=None, state=None):
    """Run the coarse stage; returns a mesh with the same faces and moved vertices.

    Per-vertex areas and Laplacian weights are refreshed every epoch.  When
    ``history`` is a list, the loss at the start of each epoch is appended.
    """
    cfg = cfg or CoveringConfig()
    ops = MeshOperators(mesh)
    state = state or CoveringState.fresh(mesh.vertices)
    losses = [] if history is None else history
    for _ in range(cfg.epochs_coarse):
        state.areas = vertex_areas(mesh, state.positions)
        state.weights = laplacian_weights(state.areas)
        loss, grad = coarse_loss_and_grad(state, mesh, oracle, cfg.lambda1, ops, cfg.batch_size, cfg.use_centroids)
        losses.append(loss)
        vector_adam_step(state, grad, cfg)
        if cfg.early_stop and _converged(losses):
            logger.info("coarse stage converged after %d epochs", state.step)
            break
    return mesh.with_vertices(state.positions, stage="coarse")


def fine_state(coarse_mesh):
    """Fresh optimiser state with anchors and normals frozen at the coarse result."""
    state = CoveringState.fresh(coarse_mesh.vertices)
    state.anchors = coarse_mesh.centroids()
    state.normals, state.normal_ok = coarse_normals(coarse_mesh)
    return state


def optimize_fine(coarse_mesh, oracle, cfg=None, history=None):
    """Run the fine stage starting from (and anchored to) the coarse result."""
    cfg = cfg or CoveringConfig()
    ops = MeshOperators(coarse_mesh)
    state = fine_state(coarse_mesh)
    losses = [] if history is None else history
    for _ in range(cfg.epochs_fine):
        loss, grad = fine_loss_and_grad(state, coarse_mesh, oracle, cfg.lambda2, ops, cfg.batch_size, cfg.use_centroids)
        losses.append(loss)
        vector_adam_step(state, grad, cfg)
        if cfg.early_stop and _converged(losses):
            logger.info("fine stage converged after %d epochs", state.step)
            break
    return coarse_mesh.with_vertices(state.positions, stage="fine")


def learn_covering_map(mesh, oracle, cfg=None):
    """Coarse then fine stage; the optimiser state is reset in between."""
    cfg = cfg or CoveringConfig()
    coarse = optimize_coarse(mesh, oracle, cfg)
    return optimize_fine(coarse, oracle, cfg)


def ablate(cfg, **changes):
    return replace(cfg, **changes)
