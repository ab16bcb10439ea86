"""
Command-line entry point for Granulite.

`granulite <command> [flags]` with commands reconstruct, segment, metrics,
ba, pipeline and synth. Exit status: 0 success, 2 configuration error,
3 stage failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from granulite import __version__
from granulite.errors import ConfigError
from granulite.services.config_loader import load_pipeline_config, log_settings
from granulite.services.error_handler import StageErrorHandler
from granulite.services.pipeline import EXIT_CONFIG, EXIT_OK, PipelineRunner

logger = logging.getLogger("granulite")

COMMAND_HELP = {
    "reconstruct": "oriented point cloud -> watertight mesh (mesh.ply)",
    "segment": "mesh -> segment-colored mesh and label file",
    "metrics": "mesh + labels -> particle metrics and gradation",
    "ba": "scene file -> refined scene and convergence report",
    "pipeline": "point cloud (or mesh) -> mesh, segments, metrics",
    "synth": "write synthetic fixtures with ground truth",
}

# argparse dest -> PipelineConfig field
CONFIG_FLAGS = (
    "input", "input_kind", "labels", "output_dir",
    "grid_res", "padding", "cg_tol", "cg_max_iter", "jacobi", "normal_neighbors", "smoothing_sigma",
    "snap_to_samples", "dump_grid",
    "threshold", "min_faces", "true_length", "measured_length", "sieves",
    "gtol", "ftol", "max_iterations", "fixture", "points", "seed", "threads", "binary",
)


def _common_flags() -> argparse.ArgumentParser:
    # Every default is None so unset flags do not override lower layers
    parser = argparse.ArgumentParser(add_help=False)
    io = parser.add_argument_group("input/output")
    io.add_argument("--config", type=Path, help="YAML file of key: value settings")
    io.add_argument("--input", type=Path, help="input PLY/OBJ file or scene text file")
    io.add_argument("--input-kind", choices=["cloud", "mesh", "scene"])
    io.add_argument("--labels", type=Path, help="label file (default: <input stem>.labels.txt)")
    io.add_argument("--output-dir", type=Path)
    io.add_argument("--ascii", dest="binary", action="store_const", const=False, help="write ASCII PLY")
    io.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    recon = parser.add_argument_group("reconstruction")
    recon.add_argument("--grid-res", type=int, help="cells along the longest axis (default 64)")
    recon.add_argument("--padding", type=int, help="empty cells on every side (default 4)")
    recon.add_argument("--cg-tol", type=float, help="CG relative residual tolerance (default 1e-8)")
    recon.add_argument("--cg-max-iter", type=int)
    recon.add_argument("--jacobi", action="store_const", const=True, help="Jacobi-preconditioned CG")
    recon.add_argument("--normal-neighbors", type=int)
    recon.add_argument("--smoothing-sigma", type=float)
    recon.add_argument("--no-snap", dest="snap_to_samples", action="store_const", const=False,
                       help="keep the raw marching-cubes vertices")
    recon.add_argument("--dump-grid", action="store_const", const=True,
                       help="write the indicator grid as indicator.raw and indicator.hdr")

    seg = parser.add_argument_group("segmentation and metrics")
    seg.add_argument("--threshold", type=float, help="curvature criterion threshold t (default 0.7)")
    seg.add_argument("--min-faces", type=int, help="smaller segments become boundary (default 20)")
    seg.add_argument("--true-length", type=float, help="calibration object length")
    seg.add_argument("--measured-length", type=float, help="calibration object length in the mesh")
    seg.add_argument("--sieves", type=float, nargs="+", help="ascending gradation sizes")

    ba = parser.add_argument_group("bundle adjustment")
    ba.add_argument("--gtol", type=float)
    ba.add_argument("--ftol", type=float)
    ba.add_argument("--max-iterations", type=int)

    run = parser.add_argument_group("run")
    run.add_argument("--fixture", choices=["all", "sphere", "icosphere", "two-ball", "stockpile", "scene"])
    run.add_argument("--points", type=int, help="samples for synthetic clouds")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, help="worker threads (default 1)")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="granulite",
        description="Stockpile surface reconstruction, aggregate segmentation and particle morphometrics.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    common = _common_flags()
    for name, help_text in COMMAND_HELP.items():
        subparsers.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def configure_logging(level: Optional[str] = None) -> None:
    settings = log_settings()
    logging.basicConfig(
        level=getattr(logging, (level or settings["level"]).upper(), logging.INFO),
        format=settings["format"],
        stream=sys.stderr,
        force=True,
    )


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {name: getattr(args, name) for name in CONFIG_FLAGS if getattr(args, name, None) is not None}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level)
    except ConfigError as e:
        print(f"granulite: [config] {e}", file=sys.stderr)
        return EXIT_CONFIG

    handler = StageErrorHandler()
    try:
        config = load_pipeline_config(args.config, flag_overrides(args))
    except ConfigError as e:
        print(handler.track("config", e), file=sys.stderr)
        return EXIT_CONFIG

    runner = PipelineRunner(args.command, config, handler)
    code = runner.run()
    if code == EXIT_OK:
        logger.info("%s finished; outputs in %s", args.command, runner.output_dir)
    else:
        print(runner.summary.error, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
