"""Command-line entry point.

Exit codes: 0 success, 1 pipeline failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import shapes
from .field import bake_grid, build_analytic_oracle, write_udfg
from .isoextract import ThicknessError, validate_thickness
from .meshio import MeshFormatError, load_mesh, load_points, save_points
from .metrics import DEFAULT_SAMPLES, format_json, format_text, quality_report
from .pipeline import STAGES, ConfigError, PipelineConfig, PipelineError, build_oracle, extract

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger("udfmesh")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# flag name -> PipelineConfig key; these may also come from --config
_EXTRACT_KEYS = {
    "input": "input",
    "kind": "kind",
    "mode": "mode",
    "r": "r",
    "resolution": "resolution",
    "seed": "seed",
    "out": "out",
    "lr": "lr",
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "epochs_coarse": "epochs_coarse",
    "epochs_fine": "epochs_fine",
    "keep_largest": "keep_largest",
    "keep_all": "keep_all",
    "stop_after": "stop_after",
    "force": "force",
    "threads": "threads",
    "resume": "resume",
    "samples": "samples",
    "d_max": "d_max",
    "eta_min": "eta_min",
}


class UsageError(Exception):
    pass


def _add_common(p):
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="only errors")


def _parser():
    parser = argparse.ArgumentParser(prog="udfmesh", description="Mesh extraction from unsigned distance fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="run the full extraction pipeline")
    ex.add_argument("--input", help="point cloud, UDFG grid or mesh file (or shape id with --kind analytic)")
    ex.add_argument("--kind", help="points | grid | mesh | analytic:<shape> (default points)")
    ex.add_argument("--mode", choices=["closed", "open", "keep-double"], help="declared surface type (default closed)")
    ex.add_argument("--r", type=float, help="offset thickness (default 0.0025)")
    ex.add_argument("--resolution", type=int, help="marching-cubes cells per unit length (default 256)")
    ex.add_argument("--seed", type=int, help="random seed (default 0)")
    ex.add_argument("--out", help="output mesh (.ply or .obj); the report goes next to it as .json")
    ex.add_argument("--config", help="TOML file with keys named like the flags")
    ex.add_argument("--lr", type=float, help="learning rate (default 5e-4)")
    ex.add_argument("--lambda1", type=float, help="coarse Laplacian weight (default 2000)")
    ex.add_argument("--lambda2", type=float, help="fine tangential weight (default 0.5)")
    ex.add_argument("--epochs-coarse", type=int, help="coarse epochs (default 300)")
    ex.add_argument("--epochs-fine", type=int, help="fine epochs (default 100)")
    ex.add_argument("--keep-largest", action="store_true", default=None, help="keep-double: only the largest component")
    ex.add_argument("--keep-all", action="store_true", default=None, help="keep components that are not separated")
    ex.add_argument("--stop-after", choices=STAGES, help="dump the mesh after this stage and stop")
    ex.add_argument("--resume", help="continue from a --stop-after dump")
    ex.add_argument("--force", action="store_true", default=None, help="run even when r is below its lower bound")
    ex.add_argument("--threads", type=int, help="worker threads for nearest-neighbour queries")
    ex.add_argument("--samples", type=int, help=f"surface samples for the Chamfer distance (default {DEFAULT_SAMPLES})")
    ex.add_argument("--d-max", type=float, help="largest field value on the surface (raises the lower bound on r)")
    ex.add_argument("--eta-min", type=float, help="smallest gap between surface sheets (bounds r from above)")
    _add_common(ex)

    me = sub.add_parser("metrics", help="topology and Chamfer report for a mesh")
    me.add_argument("--input", required=True, help="mesh to evaluate")
    me.add_argument("--reference", help="reference points file or analytic:<shape>")
    me.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    me.add_argument("--seed", type=int, default=0)
    me.add_argument("--out", help="write the JSON report here")
    me.add_argument("--format", choices=["text", "json"], default="text")
    me.add_argument("--no-intersections", action="store_true", help="skip the self-intersection count")
    me.add_argument("--threads", type=int, default=1)
    _add_common(me)

    va = sub.add_parser("validate-r", help="check an offset against the thickness bounds")
    va.add_argument("--r", type=float, required=True)
    va.add_argument("--resolution", type=int, required=True)
    va.add_argument("--d-max", type=float, default=0.0)
    va.add_argument("--eta-min", type=float)
    _add_common(va)

    bg = sub.add_parser("bake-grid", help="sample a field on a regular lattice (UDFG file)")
    bg.add_argument("--input", help="source file for --kind points/grid/mesh")
    bg.add_argument("--kind", default="points", help="points | grid | mesh | analytic:<shape>")
    bg.add_argument("--resolution", type=int, required=True, help="cells per axis")
    bg.add_argument("--out", required=True)
    bg.add_argument("--threads", type=int, default=1)
    _add_common(bg)

    gs = sub.add_parser("gen-shape", help="sample an analytic shape into a point file")
    gs.add_argument(
        "--shape", required=True, choices=sorted(k for k in shapes.SHAPES if shapes.make_shape(k).samplable)
    )
    gs.add_argument("--n", type=int, required=True, help="number of points")
    gs.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    gs.add_argument("--seed", type=int, default=0)
    gs.add_argument("--out", required=True, help=".xyz, .ply or .npy")
    _add_common(gs)
    return parser


def _setup_logging(args):
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def load_config_file(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return {str(k).replace("-", "_"): v for k, v in flat.items()}


def pipeline_config(args):
    """File values first, then every flag given on the command line."""
    values = load_config_file(args.config) if args.config else {}
    unknown = set(values) - set(_EXTRACT_KEYS.values())
    if unknown:
        raise UsageError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    for flag, key in _EXTRACT_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    return PipelineConfig.from_mapping(values)


def cmd_extract(args):
    cfg = pipeline_config(args)
    result = extract(cfg)
    rep = result.report
    if result.stopped_early:
        print(f"stopped after {result.stage}: {rep['n_vertices']} vertices, {rep['n_faces']} faces")
    else:
        shown = {k: rep[k] for k in ("n_faces", "betti0", "genus", "boundaries", "tau_v", "tau_e", "cd_mean")}
        print(format_text(shown), end="")
    return EXIT_OK


def _reference_points(source, n, seed):
    if source.startswith("analytic:"):
        try:
            shape = shapes.make_shape(source.split(":", 1)[1])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if not shape.samplable:
            raise UsageError(f"shape {shape.name!r} cannot be sampled")
        return shape.sample(n, np.random.default_rng(seed))
    return load_points(source)


def cmd_metrics(args):
    mesh = load_mesh(args.input)
    ref = _reference_points(args.reference, args.samples, args.seed) if args.reference else None
    report = quality_report(mesh, ref, args.samples, args.seed, not args.no_intersections, args.threads)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(format_json(report))
    print(format_json(report) if args.format == "json" else format_text(report), end="")
    return EXIT_OK


def cmd_validate(args):
    try:
        rep = validate_thickness(args.r, args.resolution, args.d_max, args.eta_min)
    except ThicknessError as exc:
        raise UsageError(str(exc)) from None
    upper = "unknown" if rep.eta_min_half is None else f"{rep.eta_min_half:.9g}"
    print(f"r: {rep.r:.9g}\nlower_bound: {rep.lower_bound:.9g}\nupper_bound: {upper}\nverdict: {rep.verdict}")
    return EXIT_OK if rep.usable else EXIT_FAILURE


def cmd_bake(args):
    kind = args.kind
    if kind.startswith("analytic"):
        shape = kind.split(":", 1)[1] if ":" in kind else args.input
        if shape not in shapes.SHAPES:
            raise UsageError(f"unknown analytic shape {shape!r}")
        oracle = build_analytic_oracle(shape)
    else:
        if not args.input:
            raise UsageError(f"--input is required for kind {kind!r}")
        cfg = PipelineConfig(input=args.input, kind=kind, threads=args.threads, samples=1)
        oracle, _ = build_oracle(cfg)
    grid = bake_grid(oracle, args.resolution)
    write_udfg(grid, args.out)
    print(f"wrote {args.out}: {grid.dims[0]}x{grid.dims[1]}x{grid.dims[2]} nodes")
    return EXIT_OK


def cmd_gen_shape(args):
    if args.n < 1:
        raise UsageError("--n must be positive")
    if args.noise < 0:
        raise UsageError("--noise must be non-negative")
    rng = np.random.default_rng(args.seed)
    pts = shapes.make_shape(args.shape).sample(args.n, rng)
    if args.noise > 0:
        pts = pts + rng.normal(scale=args.noise, size=pts.shape)
    save_points(pts, args.out)
    print(f"wrote {args.out}: {len(pts)} points")
    return EXIT_OK


_COMMANDS = {
    "extract": cmd_extract,
    "metrics": cmd_metrics,
    "validate-r": cmd_validate,
    "bake-grid": cmd_bake,
    "gen-shape": cmd_gen_shape,
}


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    _setup_logging(args)
    try:
        return _COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"error in stage {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (UsageError, ConfigError, MeshFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

