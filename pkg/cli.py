"""
Command Line Interface
viewloom commands: render, trajectory, reconstruct, edit, eval, serve-oracle, demo and sweep
"""

import argparse
import csv
import itertools
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from camera import CameraView, Intrinsics, Trajectory, build_trajectory, evaluation_views
from complete import GroundTruthOracle, make_completers
from config import CAMERA_CONFIG, METRICS_CONFIG, SERVER_CONFIG, TOOL_VERSION, ReconstructionConfig, get_env_config
from error_handlers import (EXIT_OK, ContractViolationError, InvalidArgumentError, describe_error,
                            exit_code_for)
from fileio import (read_image, read_json, read_mask, read_mesh, write_depth, write_image, write_json,
                    write_mesh)
from logging_config import viewloom_logger
from meshing import mesh_from_cloud
from metrics import chamfer_normalized, eval_protocol
from pipeline import Reconstructor, run_trajectory, split_edit_region
from raster import CORPUS_NAMES, TriangleMesh, rasterize, synthetic_corpus
from run_manager import RunDirectory
from server import create_app, serve

logger = logging.getLogger(__name__)

SWEEP_DEGREES = (30.0, 60.0, 90.0, 120.0)


# Shared helpers ---------------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args, overrides: Dict[str, Any]) -> ReconstructionConfig:
    """Config file values first, then every flag that was actually given."""
    base = ReconstructionConfig()
    if args.config:
        base = ReconstructionConfig.from_dict(read_json(args.config))
    if args.seed is not None:
        overrides = dict(overrides, seed=args.seed)
    return base.merged_with(overrides)


def _robustness_overrides(args) -> Dict[str, Any]:
    return {
        "hole_detection": False if args.no_holes else None,
        "far_clip": False if args.no_clip else None,
        "outlier_removal": False if args.no_outliers else None,
    }


def _backend_selection(args, config: ReconstructionConfig) -> Dict[str, Any]:
    kind = args.backend or config.backend.get("kind", "oracle")
    if kind == "remote":
        return {"kind": "remote", "url": args.url or config.backend.get("url") or get_env_config()["backend_url"]}
    return {"kind": "oracle", "mesh": args.gt_mesh or config.backend.get("mesh")}


def _completers(backend: Dict[str, Any]):
    mesh = None
    if backend["kind"] == "oracle":
        if not backend.get("mesh"):
            raise InvalidArgumentError("The oracle backend needs --gt-mesh")
        mesh = read_mesh(backend["mesh"])
    return make_completers(backend, mesh)


def _square_resolution(shape) -> int:
    height, width = shape
    if height != width:
        raise InvalidArgumentError(f"Anchor images must be square, got {width}x{height}")
    return width


def _trajectory(args, config: ReconstructionConfig) -> Trajectory:
    if getattr(args, "traj", None):
        return Trajectory.from_dict(read_json(args.traj))
    return run_trajectory(config)


def _mesh_or_none(cloud, config: ReconstructionConfig) -> Optional[TriangleMesh]:
    if not len(cloud):
        return None
    return mesh_from_cloud(cloud, config.mesh_resolution, config.keep_components)


# Commands ---------------------------------------------------------------------------

def cmd_render(args) -> int:
    mesh = read_mesh(args.mesh)
    out = _out_dir(args)
    intrinsics = Intrinsics.from_fov(args.res, fov_deg=args.fov)
    if args.views:
        views = list(Trajectory.from_dict(read_json(args.views)).views)
    elif args.protocol:
        views = evaluation_views(args.radius, intrinsics, args.protocol)
    else:
        views = [CameraView.orbit(args.azimuth, args.elevation, args.radius, intrinsics)]
    cameras = []
    for index, view in enumerate(views):
        rendered = rasterize(mesh, view)
        write_image(out / f"view_{index:02d}.png", rendered.color, rendered.mask)
        write_depth(out / f"view_{index:02d}.pfm", rendered.depth)
        cameras.append(view.to_dict())
    write_json(out / "cameras.json", {"views": cameras})
    print(f"Rendered {len(views)} views to {out}")
    return EXIT_OK


def cmd_trajectory(args) -> int:
    intrinsics = Intrinsics.from_fov(args.res, fov_deg=args.fov)
    trajectory = build_trajectory(args.kind, args.degree, args.radius, intrinsics,
                                  not args.negative_first, args.inpaint, args.seed or 0)
    path = _out_dir(args) / "trajectory.json"
    write_json(path, trajectory.to_dict())
    print(f"{trajectory.kind} trajectory: {len(trajectory.main_views)} main views, "
          f"{len(trajectory.inpaint_views)} inpaint views -> {path}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    anchor_color, anchor_mask = read_image(args.anchor)
    if args.anchor_mask:
        anchor_mask = read_mask(args.anchor_mask)
    overrides = dict(_robustness_overrides(args), resolution=_square_resolution(anchor_mask.shape),
                     trajectory=args.kind, degree_deg=args.degree, inpaint_count=args.inpaint)
    config = _load_config(args, overrides)
    config = config.merged_with({"backend": _backend_selection(args, config)})
    trajectory = _trajectory(args, config)
    run = RunDirectory(_out_dir(args))

    reconstructor = Reconstructor(*_completers(config.backend), config)
    try:
        result = reconstructor.reconstruct(anchor_color, anchor_mask, trajectory, args.max_steps)
    except ContractViolationError as e:
        run.write_failed_run(e.records, config, trajectory, e)
        raise
    mesh = None if args.no_mesh else _mesh_or_none(result.cloud, config)
    run.write_run(result, config, trajectory, mesh)
    print(f"Reconstructed {len(result.cloud)} points in {len(result.records)} steps -> {run.root}")
    return EXIT_OK


def cmd_edit(args) -> int:
    source = RunDirectory(args.run)
    original = source.read_cloud()
    edited_color, edited_mask = read_image(args.edit_image)
    region = read_mask(args.edit_mask)
    config = source.read_config().merged_with(_robustness_overrides(args))
    if args.seed is not None:
        config = config.merged_with({"seed": args.seed})
    config = config.merged_with({"backend": _backend_selection(args, config)})
    trajectory = source.read_trajectory()

    kept, removed = split_edit_region(original, trajectory.anchor, region, args.mode, args.thickness)
    reconstructor = Reconstructor(*_completers(config.backend), config)
    run = RunDirectory(_out_dir(args))
    try:
        result = reconstructor.edit(kept, edited_color, edited_mask, region, removed, trajectory, args.max_steps)
    except ContractViolationError as e:
        run.write_failed_run(e.records, config, trajectory, e)
        raise
    mesh = None if args.no_mesh else _mesh_or_none(result.cloud, config)
    summary = {"edit": {"mode": args.mode, "source_points": len(original), "removed_points": len(removed),
                        "result_points": len(result.cloud)}}
    run.write_run(result, config, trajectory, mesh, summary)
    print(f"Edited run: removed {len(removed)} points, result has {len(result.cloud)} -> {run.root}")
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = read_mesh(args.gt)
    recon = read_mesh(args.recon)
    report = eval_protocol(gt, recon, args.radius, args.res, args.protocol, args.fov, args.samples,
                           args.seed if args.seed is not None else METRICS_CONFIG["chamfer_seed"])
    out = _out_dir(args)
    write_json(out / "eval.json", report.to_dict())
    if args.csv:
        with open(out / "eval.csv", "w", newline="") as handle:
            csv.writer(handle).writerows(report.csv_rows())
    print(f"PSNR {report.mean_psnr}, SSIM {report.mean_ssim}, Chamfer {report.chamfer:.6f} -> {out / 'eval.json'}")
    return EXIT_OK


def cmd_serve_oracle(args) -> int:
    mesh = read_mesh(args.gt_mesh)
    port = args.port if args.port is not None else int(get_env_config()["server_port"])
    return serve(create_app(GroundTruthOracle(mesh)), args.host, port)


def cmd_demo(args) -> int:
    """Synthetic ground truth, its anchor render and a matching config."""
    out = _out_dir(args)
    mesh = synthetic_corpus(args.name, sleeves=args.sleeves)
    mesh_path = out / "gt_mesh.ply"
    write_mesh(mesh_path, mesh)
    config = ReconstructionConfig(resolution=args.res, seed=args.seed or 0,
                                  backend={"kind": "oracle", "mesh": str(mesh_path)})
    trajectory = run_trajectory(config)
    anchor = rasterize(mesh, trajectory.anchor)
    write_image(out / "anchor.png", anchor.color, anchor.mask)
    write_json(out / "config.json", config.to_dict())
    write_json(out / "trajectory.json", trajectory.to_dict())
    print(f"Demo '{args.name}' written to {out}")
    return EXIT_OK


def sweep_rows(mesh: TriangleMesh, degrees: List[float], base: ReconstructionConfig,
               protocol: str = "mesh12", samples: int = METRICS_CONFIG["chamfer_samples"],
               kinds: Sequence[str] = ("zigzag",)) -> List[List[Any]]:
    """Oracle reconstruction per trajectory kind and degree, scored on appearance and geometry.

    Zigzag and circular runs of one degree see the same number of main views.
    """
    rows: List[List[Any]] = [["kind", "degree", "views", "points", "psnr_db", "ssim", "chamfer_cloud",
                              "chamfer_mesh"]]
    for kind, degree in itertools.product(kinds, degrees):
        config = base.merged_with({"trajectory": kind, "degree_deg": degree})
        trajectory = run_trajectory(config)
        anchor = rasterize(mesh, trajectory.anchor)
        oracle_backend = {"kind": "oracle", "mesh": None}
        reconstructor = Reconstructor(*make_completers(oracle_backend, mesh), config)
        result = reconstructor.reconstruct(anchor.color, anchor.mask, trajectory)
        cloud_distance = chamfer_normalized(result.cloud, mesh, samples, config.seed)
        recon = _mesh_or_none(result.cloud, config)
        if recon is None or not recon.face_count:
            rows.append([kind, degree, len(trajectory.views), len(result.cloud), None, None, cloud_distance, None])
            continue
        report = eval_protocol(mesh, recon, config.radius, config.resolution, protocol, config.fov_deg,
                               samples, config.seed)
        rows.append([kind, degree, len(trajectory.views), len(result.cloud), report.mean_psnr, report.mean_ssim,
                     cloud_distance, report.chamfer])
        logger.info(f"Sweep {kind} {degree}: chamfer {report.chamfer:.5f}")
    return rows


def cmd_sweep(args) -> int:
    mesh = read_mesh(args.gt_mesh) if args.gt_mesh else synthetic_corpus(args.name)
    config = _load_config(args, dict(_robustness_overrides(args), resolution=args.res))
    rows = sweep_rows(mesh, args.degrees, config, args.protocol, args.samples, args.kinds)
    path = _out_dir(args) / "sweep.csv"
    with open(path, "w", newline="") as handle:
        csv.writer(handle).writerows(rows)
    print(f"Sweep over {len(args.kinds)} kinds x {len(args.degrees)} degrees -> {path}")
    return EXIT_OK


# Parser -----------------------------------------------------------------------------

def _add_robustness_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--no-holes", action="store_true", help="disable open-hole detection")
    parser.add_argument("--no-clip", action="store_true", help="disable far-depth clipping")
    parser.add_argument("--no-outliers", action="store_true", help="disable statistical outlier removal")


def _add_backend_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--backend", choices=["oracle", "remote"], help="completion backend")
    parser.add_argument("--gt-mesh", help="ground-truth mesh for the oracle backend")
    parser.add_argument("--url", help="remote backend URL (default: VIEWLOOM_BACKEND_URL)")
    parser.add_argument("--max-steps", type=int, help="stop after this many trajectory views")
    parser.add_argument("--no-mesh", action="store_true", help="skip point-to-mesh conversion")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewloom", description="Progressive novel-view reconstruction engine")
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    parser.add_argument("--out", default=".", help="output directory (created if absent)")
    parser.add_argument("--config", help="JSON file mirroring the reconstruction config")
    parser.add_argument("--seed", type=int, help="seed for every random choice")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    render = commands.add_parser("render", help="rasterize a mesh from one or more cameras")
    render.add_argument("--mesh", required=True)
    source = render.add_mutually_exclusive_group()
    source.add_argument("--views", help="trajectory JSON")
    source.add_argument("--protocol", choices=["mesh12", "nvs6"], help="evaluation cameras")
    render.add_argument("--azimuth", type=float, default=0.0)
    render.add_argument("--elevation", type=float, default=0.0)
    render.add_argument("--radius", type=float, default=CAMERA_CONFIG["radius"])
    render.add_argument("--res", type=int, default=CAMERA_CONFIG["resolution"])
    render.add_argument("--fov", type=float, default=CAMERA_CONFIG["fov_deg"])
    render.set_defaults(handler=cmd_render)

    trajectory = commands.add_parser("trajectory", help="write a camera trajectory")
    trajectory.add_argument("--kind", choices=["zigzag", "circular"], default=CAMERA_CONFIG["trajectory"])
    trajectory.add_argument("--degree", type=float, default=CAMERA_CONFIG["degree_deg"])
    trajectory.add_argument("--radius", type=float, default=CAMERA_CONFIG["radius"])
    trajectory.add_argument("--res", type=int, default=CAMERA_CONFIG["resolution"])
    trajectory.add_argument("--fov", type=float, default=CAMERA_CONFIG["fov_deg"])
    trajectory.add_argument("--inpaint", type=int, default=CAMERA_CONFIG["inpaint_count"])
    trajectory.add_argument("--negative-first", action="store_true", help="zigzag starts to the right")
    trajectory.set_defaults(handler=cmd_trajectory)

    reconstruct = commands.add_parser("reconstruct", help="reconstruct a cloud and mesh from one image")
    reconstruct.add_argument("--anchor", required=True, help="anchor PNG; alpha is the foreground")
    reconstruct.add_argument("--anchor-mask", help="separate foreground mask PNG")
    reconstruct.add_argument("--traj", help="trajectory JSON (default: built from the config)")
    reconstruct.add_argument("--kind", choices=["zigzag", "circular"])
    reconstruct.add_argument("--degree", type=float)
    reconstruct.add_argument("--inpaint", type=int)
    _add_backend_flags(reconstruct)
    _add_robustness_flags(reconstruct)
    reconstruct.set_defaults(handler=cmd_reconstruct)

    edit = commands.add_parser("edit", help="re-synthesize an edited region of a finished run")
    edit.add_argument("--run", required=True, help="run directory of the garment to edit")
    edit.add_argument("--edit-image", required=True, help="edited anchor render (PNG with alpha)")
    edit.add_argument("--edit-mask", required=True, help="2-D edit region mask (PNG)")
    edit.add_argument("--mode", choices=["surface", "part"], default="part")
    edit.add_argument("--thickness", type=float, help="surface-mode slab thickness in scene units")
    _add_backend_flags(edit)
    _add_robustness_flags(edit)
    edit.set_defaults(handler=cmd_edit)

    evaluate = commands.add_parser("eval", help="score a reconstructed mesh against ground truth")
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--recon", required=True)
    evaluate.add_argument("--protocol", choices=["mesh12", "nvs6"], default="mesh12")
    evaluate.add_argument("--radius", type=float, default=CAMERA_CONFIG["radius"])
    evaluate.add_argument("--res", type=int, default=CAMERA_CONFIG["resolution"])
    evaluate.add_argument("--fov", type=float, default=CAMERA_CONFIG["fov_deg"])
    evaluate.add_argument("--samples", type=int, default=METRICS_CONFIG["chamfer_samples"])
    evaluate.add_argument("--csv", action="store_true", help="also write per-view rows as CSV")
    evaluate.set_defaults(handler=cmd_eval)

    server = commands.add_parser("serve-oracle", help="serve the ground-truth oracle over HTTP")
    server.add_argument("--gt-mesh", required=True)
    server.add_argument("--host", default=SERVER_CONFIG["host"])
    server.add_argument("--port", type=int)
    server.set_defaults(handler=cmd_serve_oracle)

    demo = commands.add_parser("demo", help="write a synthetic asset with its anchor render")
    demo.add_argument("--name", required=True)
    demo.add_argument("--res", type=int, default=CAMERA_CONFIG["resolution"])
    demo.add_argument("--sleeves", type=int, default=2, choices=[0, 1, 2])
    demo.set_defaults(handler=cmd_demo)

    sweep = commands.add_parser("sweep", help="oracle reconstruction across trajectory kinds and degrees")
    sweep.add_argument("--gt-mesh", help="ground-truth mesh (default: synthetic --name)")
    sweep.add_argument("--name", default="tee", choices=CORPUS_NAMES)
    sweep.add_argument("--degrees", type=float, nargs="+", default=list(SWEEP_DEGREES))
    sweep.add_argument("--kinds", nargs="+", choices=["zigzag", "circular"], default=["zigzag"])
    sweep.add_argument("--protocol", choices=["mesh12", "nvs6"], default="mesh12")
    sweep.add_argument("--res", type=int, default=CAMERA_CONFIG["resolution"])
    sweep.add_argument("--samples", type=int, default=METRICS_CONFIG["chamfer_samples"])
    _add_robustness_flags(sweep)
    sweep.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    viewloom_logger.setup_logging(verbose=args.verbose, level=get_env_config()["log_level"])
    try:
        return args.handler(args)
    except Exception as e:
        code = exit_code_for(e)
        details = describe_error(e)
        print(f"viewloom: {details['code']}: {details['message']}", file=sys.stderr)
        if code == 1:
            logger.exception("Unhandled error")
        return code


if __name__ == "__main__":
    sys.exit(main())
