"""Mesh extraction from unsigned distance fields.

The offset surface at distance ``r`` is extracted with marching cubes,
projected back onto the zero level-set while keeping its connectivity, and
reduced to a single layer when the target is open.
"""

from ._kernels import BACKEND
from .covering import CoveringConfig, learn_covering_map, optimize_coarse, optimize_fine
from .field import (
    AnalyticField,
    DenseGrid,
    FieldOracle,
    GridField,
    MeshSurfaceField,
    PointCloud,
    PointCloudField,
    bake_grid,
    build_analytic_oracle,
    build_grid_oracle,
    build_mesh_oracle,
    build_point_cloud_oracle,
    estimate_dmax,
    read_udfg,
    write_udfg,
)
from .isoextract import extract_double_cover, marching_cubes, validate_thickness
from .mesh import TopologyReport, TriangleMesh, count_self_intersections, sample_surface, topology_report
from .meshio import load_mesh, load_points, save_mesh
from .metrics import ChamferResult, chamfer, mesh_to_reference_cd
from .pipeline import PipelineConfig, extract
from .separation import select_component_closed, separate_layers

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AnalyticField",
    "ChamferResult",
    "CoveringConfig",
    "DenseGrid",
    "FieldOracle",
    "GridField",
    "MeshSurfaceField",
    "PipelineConfig",
    "PointCloud",
    "PointCloudField",
    "TopologyReport",
    "TriangleMesh",
    "bake_grid",
    "build_analytic_oracle",
    "build_grid_oracle",
    "build_mesh_oracle",
    "build_point_cloud_oracle",
    "chamfer",
    "count_self_intersections",
    "estimate_dmax",
    "extract",
    "extract_double_cover",
    "learn_covering_map",
    "load_mesh",
    "load_points",
    "marching_cubes",
    "mesh_to_reference_cd",
    "optimize_coarse",
    "optimize_fine",
    "read_udfg",
    "sample_surface",
    "save_mesh",
    "select_component_closed",
    "separate_layers",
    "topology_report",
    "validate_thickness",
    "write_udfg",
]
