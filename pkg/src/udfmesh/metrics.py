"""Chamfer distance and the combined quality report.

Distances are unsquared Euclidean lengths in unit-box units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .field import PointCloud
from .mesh import count_self_intersections, sample_surface, topology_report

DEFAULT_SAMPLES = 100_000
CD_CONVENTION = "unsquared"


@dataclass(frozen=True)
class ChamferResult:
    """Mean nearest-neighbour distances.

    ``forward`` runs from the reference (ground truth) to the prediction,
    ``backward`` from the prediction to the reference.
    """

    forward: float
    backward: float

    @property
    def mean(self):
        return 0.5 * (self.forward + self.backward)

    def as_dict(self):
        return {"cd_forward": self.forward, "cd_backward": self.backward, "cd_mean": self.mean}


def _points(x):
    return x if isinstance(x, PointCloud) else PointCloud(x)


def directed_distance(a, b, workers=1):
    """Mean over ``a`` of the distance to the nearest point of ``b``."""
    a, b = _points(a), _points(b)
    dist, _ = b.nearest(a.points, workers)
    return float(np.mean(dist))


def chamfer(a, b, workers=1):
    """Chamfer distance with ``a`` as reference and ``b`` as prediction."""
    a, b = _points(a), _points(b)
    return ChamferResult(directed_distance(a, b, workers), directed_distance(b, a, workers))


def chamfer_bruteforce(a, b):
    """Double-loop reference implementation (``O(|a| |b|)`` memory in blocks)."""
    a = np.asarray(_points(a).points)
    b = np.asarray(_points(b).points)

    def directed(p, q):
        best = np.empty(len(p))
        for s in range(0, len(p), 256):
            d = np.linalg.norm(p[s : s + 256, None, :] - q[None, :, :], axis=2)
            best[s : s + 256] = d.min(axis=1)
        return float(np.mean(best))

    return ChamferResult(directed(a, b), directed(b, a))


def mesh_to_reference_cd(mesh, reference, n_samples=DEFAULT_SAMPLES, seed=0, workers=1):
    """Chamfer distance from ``reference`` points to area-uniform mesh samples."""
    return chamfer(reference, sample_surface(mesh, n_samples, seed), workers)


def quality_report(mesh, reference=None, n_samples=DEFAULT_SAMPLES, seed=0, intersections=True, workers=1):
    """Flat dictionary of accuracy and topology measures.

    Chamfer entries are ``None`` without a reference.
    """
    topo = topology_report(mesh)
    out = {"cd_forward": None, "cd_backward": None, "cd_mean": None}
    if reference is not None and not mesh.is_empty():
        out.update(mesh_to_reference_cd(mesh, reference, n_samples, seed, workers).as_dict())
    out.update(
        {
            "tau_v": topo.tau_v,
            "tau_e": topo.tau_e,
            "genus": topo.genus,
            "boundaries": topo.boundaries,
            "betti0": topo.betti0,
            "self_intersections": count_self_intersections(mesh) if intersections else None,
            "cd_convention": CD_CONVENTION,
            "n_samples": n_samples if reference is not None else None,
            "n_vertices": topo.n_vertices,
            "n_faces": topo.n_faces,
            "closed": topo.closed,
            "orientable": topo.orientable,
            "component_genus": topo.component_genus,
            "component_boundaries": topo.component_boundaries,
        }
    )
    return out


def format_text(report):
    """``key: value`` lines; Chamfer values are also shown in units of 1e-3."""
    lines = []
    for key, value in report.items():
        if key.startswith("cd_") and isinstance(value, float):
            lines.append(f"{key}: {value:.6g} ({value * 1e3:.4f} e-3)")
        elif isinstance(value, float):
            lines.append(f"{key}: {value:.6g}")
        else:
            lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def format_json(report):
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


__all__ = [
    "ChamferResult",
    "chamfer",
    "chamfer_bruteforce",
    "directed_distance",
    "format_json",
    "format_text",
    "mesh_to_reference_cd",
    "quality_report",
]
