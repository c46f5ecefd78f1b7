"""End-to-end extraction: oracle, double cover, covering map, layer selection.

Stages run in the order of :data:`STAGES`.  Any of them can be the last one
(``stop_after``); the intermediate mesh is then written in double precision
with its stage recorded in the PLY header, and ``resume`` continues from such
a file with results identical to an uninterrupted run.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import shapes
from .covering import CoveringConfig, optimize_coarse, optimize_fine
from .field import (
    build_analytic_oracle,
    build_grid_oracle,
    build_mesh_oracle,
    build_point_cloud_oracle,
    read_udfg,
)
from .isoextract import extract_double_cover, validate_thickness
from .metrics import DEFAULT_SAMPLES, format_json, quality_report
from .meshio import load_mesh, load_points, save_mesh
from .mesh import connected_components
from .separation import select_component_closed, separate_layers

logger = logging.getLogger(__name__)

STAGES = ("double-cover", "coarse", "fine", "separated")
MODES = ("closed", "open", "keep-double")
KINDS = ("points", "grid", "mesh", "analytic")
_DUMP_TAG = "udfmesh"


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


@dataclass
class PipelineConfig:
    input: Optional[str] = None
    kind: str = "points"
    mode: str = "closed"
    r: float = 0.0025
    resolution: int = 256
    seed: int = 0
    out: Optional[str] = None
    covering: CoveringConfig = field(default_factory=CoveringConfig)
    keep_largest: bool = False
    keep_all: bool = False
    stop_after: Optional[str] = None
    force: bool = False
    threads: int = 1
    resume: Optional[str] = None
    d_max: float = 0.0
    eta_min: Optional[float] = None
    samples: int = DEFAULT_SAMPLES
    self_intersections: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        shape = self.shape_id
        base = self.kind.split(":", 1)[0]
        if base not in KINDS:
            raise ConfigError(f"unknown input kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if base == "analytic":
            if shape not in shapes.SHAPES:
                raise ConfigError(f"unknown analytic shape {shape!r}; choose from {', '.join(shapes.SHAPES)}")
        elif not self.input:
            raise ConfigError(f"--input is required for kind {self.kind!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if not self.r > 0:
            raise ConfigError(f"r must be positive, got {self.r}")
        if int(self.resolution) != self.resolution or self.resolution < 8:
            raise ConfigError(f"resolution must be an integer >= 8, got {self.resolution}")
        if self.stop_after is not None and self.stop_after not in STAGES:
            raise ConfigError(f"stop-after must be one of {', '.join(STAGES)}")
        if self.stop_after not in (None, STAGES[-1]) and self.out and Path(self.out).suffix.lower() != ".ply":
            raise ConfigError("stage dumps must be written as .ply")
        if self.keep_largest and self.keep_all:
            raise ConfigError("keep-largest and keep-all are mutually exclusive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")

    @property
    def shape_id(self):
        if self.kind.startswith("analytic:"):
            return self.kind.split(":", 1)[1]
        if self.kind == "analytic":
            return self.input
        return None

    @classmethod
    def from_mapping(cls, values):
        """Build from flag-style keys (dashes or underscores)."""
        values = {str(k).replace("-", "_"): v for k, v in values.items()}
        cov_names = {f.name for f in fields(CoveringConfig)}
        top_names = {f.name for f in fields(cls)} - {"covering"}
        unknown = set(values) - cov_names - top_names
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        try:
            cov = CoveringConfig(**{k: v for k, v in values.items() if k in cov_names})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(covering=cov, **{k: v for k, v in values.items() if k in top_names})


@dataclass
class PipelineResult:
    mesh: object
    stage: str
    report: dict
    intermediates: dict = field(default_factory=dict)

    @property
    def stopped_early(self):
        return self.stage != STAGES[-1]


def build_oracle(cfg):
    """Field oracle and, when one exists, a reference point set for Chamfer."""
    base = cfg.kind.split(":", 1)[0]
    if base == "analytic":
        shape = shapes.make_shape(cfg.shape_id)
        ref = shape.sample(cfg.samples, np.random.default_rng(cfg.seed)) if shape.samplable else None
        return build_analytic_oracle(shape), ref
    if not os.path.exists(cfg.input):
        raise FileNotFoundError(cfg.input)
    if base == "points":
        pts = load_points(cfg.input)
        return build_point_cloud_oracle(pts, workers=cfg.threads), pts
    if base == "grid":
        return build_grid_oracle(read_udfg(cfg.input)), None
    mesh = load_mesh(cfg.input)
    return build_mesh_oracle(mesh.vertices, mesh.faces, workers=cfg.threads), None


def dump_comments(mesh):
    meta = mesh.meta
    return [f"{_DUMP_TAG} stage={meta['stage']} r={meta['r']!r} k={meta['k']}"]


def parse_dump(mesh):
    """Stage, ``r`` and ``k`` recorded in a stage dump's header."""
    for line in mesh.meta.get("comments", []):
        parts = line.split()
        if parts and parts[0] == _DUMP_TAG:
            kv = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
            try:
                return kv["stage"], float(kv["r"]), int(kv["k"])
            except (KeyError, ValueError):
                break
    raise ConfigError("resume file is not a stage dump (missing udfmesh header comment)")


def _report_path(out):
    return str(Path(out).with_suffix(".json"))


def _write_outputs(cfg, mesh, report, final):
    if not cfg.out:
        return
    if final:
        save_mesh(mesh, cfg.out)
    else:
        save_mesh(mesh, cfg.out, precision="double", comments=dump_comments(mesh))
    with open(_report_path(cfg.out), "w", encoding="utf-8") as fh:
        fh.write(format_json(report))


def _run(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, RuntimeError, FloatingPointError, AssertionError) as exc:
        raise PipelineError(stage, exc) from exc


def _select(cfg, mesh):
    if cfg.mode == "keep-double":
        if cfg.keep_largest:
            comps = connected_components(mesh)
            big = max(range(len(comps)), key=lambda i: (len(comps[i]), -i))
            mesh = mesh.submesh(comps[big])
        return mesh.with_vertices(mesh.vertices, stage="separated")
    if cfg.mode == "closed":
        return select_component_closed(mesh, keep_all=cfg.keep_all)
    return separate_layers(mesh, cfg.seed, r=mesh.meta.get("r"), keep_all=cfg.keep_all)


def extract(cfg, oracle=None, reference=None):
    """Run the pipeline described by ``cfg``.

    ``oracle`` (and the Chamfer ``reference``) may be supplied directly,
    bypassing ``cfg.input``.
    """
    if oracle is None:
        oracle, reference = build_oracle(cfg)
    thickness = validate_thickness(cfg.r, cfg.resolution, cfg.d_max, cfg.eta_min)
    inter = {}

    if cfg.resume:
        mesh = load_mesh(cfg.resume)
        stage, r, k = parse_dump(mesh)
        if stage == STAGES[-1]:
            raise ConfigError("resume file already holds the final stage")
        if not np.isclose(r, cfg.r) or k != cfg.resolution:
            raise ConfigError(f"resume file was produced with r={r}, k={k}; config has r={cfg.r}, k={cfg.resolution}")
        mesh.meta.update(stage=stage, r=r, k=k)
        mesh.meta.pop("comments", None)
        done = STAGES.index(stage)
    else:
        mesh = _run(
            "double-cover",
            extract_double_cover,
            oracle,
            cfg.r,
            cfg.resolution,
            cfg.d_max,
            cfg.eta_min,
            force=cfg.force,
        )
        done = 0
        inter["double-cover"] = mesh

    def finish(m, stage):
        final = stage == STAGES[-1]
        report = {
            "stage": stage,
            "mode": cfg.mode,
            "r": cfg.r,
            "resolution": cfg.resolution,
            "seed": cfg.seed,
            "thickness": thickness.verdict,
            "lower_bound": thickness.lower_bound,
        }
        if final:
            report.update(quality_report(m, reference, cfg.samples, cfg.seed, cfg.self_intersections, cfg.threads))
            if "separation_attempts" in m.meta:
                report["separation_attempts"] = m.meta["separation_attempts"]
        else:
            report.update(n_vertices=m.n_vertices, n_faces=m.n_faces)
        _write_outputs(cfg, m, report, final)
        return PipelineResult(m, stage, report, inter)

    if cfg.stop_after == STAGES[done]:
        return finish(mesh, STAGES[done])
    if done < 1:
        mesh = _run("coarse", optimize_coarse, mesh, oracle, cfg.covering)
        inter["coarse"] = mesh
        if cfg.stop_after == "coarse":
            return finish(mesh, "coarse")
    if done < 2:
        mesh = _run("fine", optimize_fine, mesh, oracle, cfg.covering)
        inter["fine"] = mesh
        if cfg.stop_after == "fine":
            return finish(mesh, "fine")
    mesh = _run("separated", _select, cfg, mesh)
    return finish(mesh, "separated")
