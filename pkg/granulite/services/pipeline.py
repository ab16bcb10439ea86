"""
Stage runner behind the command-line interface.

This module provides the core functionality for:
1. Running the reconstruct, segment, metrics, ba, pipeline and synth commands
2. Timing every stage and tagging failures with the stage name
3. Writing artifacts and a machine-readable summary.json for every run
"""
import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import yaml

from granulite.errors import ConfigError, ParseError, StageFailure
from granulite.schemas.config import PipelineConfig, SceneSpec
from granulite.schemas.summary import RunSummary, StageRecord
from granulite.services import fixtures
from granulite.services.bundle_adjustment import bundle_adjust
from granulite.services.config_loader import require_file
from granulite.services.error_handler import StageErrorHandler
from granulite.services.formats import (
    read_labels,
    read_scene,
    render_tables,
    write_gradation_csv,
    write_grid,
    write_labels,
    write_metrics_csv,
    write_scene,
)
from granulite.services.geometry import PointCloud, TriMesh, build_adjacency
from granulite.services.morphometrics import all_segment_metrics, apply_scale, gradation_report
from granulite.services.ply_io import labels_sidecar_path, read_obj, read_ply, write_ply, write_ply_labeled
from granulite.services.segmentation import SegmentLabels, filter_segments, segment_mesh
from granulite.services.sfm import perturb_scene, synth_scene
from granulite.services.surface_recon import ScalarGrid, reconstruct_surface_detailed

logger = logging.getLogger(__name__)

COMMANDS = ("reconstruct", "segment", "metrics", "ba", "pipeline", "synth")
SUMMARY_FILE = "summary.json"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

SCENE_PERTURBATION = 0.01
DEFAULT_SPHERE_POINTS = 2000
DEFAULT_STOCKPILE_POINTS = 40000


class PipelineRunner:
    """Runs one command and records what happened in a RunSummary."""

    def __init__(self, command: str, config: PipelineConfig, handler: Optional[StageErrorHandler] = None):
        if command not in COMMANDS:
            raise ConfigError(f"unknown command '{command}', expected one of {', '.join(COMMANDS)}")
        self.command = command
        self.config = config
        self.handler = handler or StageErrorHandler()
        self.output_dir = Path(config.output_dir)
        self.summary = RunSummary(command=command, parameters=config.model_dump(mode="json"))
        self._commands: Dict[str, Callable[[], None]] = {
            "reconstruct": self._run_reconstruct,
            "segment": self._run_segment,
            "metrics": self._run_metrics,
            "ba": self._run_ba,
            "pipeline": self._run_pipeline,
            "synth": self._run_synth,
        }

    @contextmanager
    def stage(self, name: str) -> Iterator[Dict[str, Any]]:
        """Time a stage; any failure inside it becomes a StageFailure."""
        record = StageRecord(name=name, seconds=0.0)
        start = time.perf_counter()
        logger.info("Stage %s started", name)
        try:
            yield record.details
        except (ConfigError, StageFailure):
            raise
        except Exception as e:
            raise StageFailure(name, e) from e
        finally:
            record.seconds = time.perf_counter() - start
            self.summary.stages.append(record)
        logger.info("Stage %s finished in %.2fs", name, record.seconds)

    def run(self) -> int:
        """Execute the command; always writes summary.json. Returns the exit status."""
        code = EXIT_OK
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            self._commands[self.command]()
        except ConfigError as e:
            code = EXIT_CONFIG
            self._fail(self.handler.track("config", e))
        except StageFailure as e:
            code = EXIT_STAGE
            self._fail(self.handler.track(e.stage, e.cause))
        except OSError as e:
            code = EXIT_STAGE
            self._fail(self.handler.track("output", e))
        self.summary.errors = self.handler.get_error_stats()
        try:
            self.write_summary()
        except OSError as e:
            logger.error("Cannot write %s: %s", SUMMARY_FILE, e)
            code = code or EXIT_STAGE
        return code

    def _fail(self, message: str) -> None:
        self.summary.status = "failed"
        self.summary.error = message

    def summary_json(self) -> str:
        return json.dumps(self.summary.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    def write_summary(self) -> Path:
        path = self.output_dir / SUMMARY_FILE
        path.write_text(self.summary_json(), encoding="utf-8")
        return path

    def _artifact(self, path: Path) -> Path:
        self.summary.artifacts.append(str(path))
        return path

    # Loading

    def _load_geometry(self):
        path = require_file(self.config.input)
        with self.stage("load") as details:
            geometry = read_obj(path) if path.suffix.lower() == ".obj" else read_ply(path)
            details["path"] = str(path)
            if isinstance(geometry, TriMesh):
                details.update(vertices=geometry.n_vertices, faces=geometry.n_faces)
            else:
                details.update(points=len(geometry), normals=geometry.normals is not None)
        return geometry

    def _load_cloud(self) -> PointCloud:
        geometry = self._load_geometry()
        return PointCloud(geometry.vertices) if isinstance(geometry, TriMesh) else geometry

    def _load_mesh(self) -> TriMesh:
        geometry = self._load_geometry()
        if not isinstance(geometry, TriMesh):
            raise StageFailure("load", ParseError(f"{self.config.input} holds a point cloud, a mesh is required"))
        return geometry

    # Stages

    def _reconstruct(self, cloud: PointCloud) -> TriMesh:
        with self.stage("reconstruct") as details:
            mesh, report = reconstruct_surface_detailed(
                cloud, self.config.reconstruction(), workers=self.config.threads,
                grid_hook=self._dump_grid if self.config.dump_grid else None,
            )
            details.update(report.model_dump(mode="json"))
            self._artifact(write_ply(self.output_dir / "mesh.ply", mesh, binary=self.config.binary))
        return mesh

    def _dump_grid(self, grid: ScalarGrid) -> None:
        for path in write_grid(self.output_dir / "indicator", grid):
            self._artifact(path)

    def _segment(self, mesh: TriMesh) -> SegmentLabels:
        with self.stage("segment") as details:
            adjacency = build_adjacency(mesh)
            raw = segment_mesh(mesh, adjacency, self.config.criterion())
            labels = filter_segments(raw, self.config.min_faces)
            path = self.output_dir / "segments.ply"
            sidecar = write_ply_labeled(mesh, labels, path)
            self._artifact(path)
            self._artifact(sidecar)
            details.update(
                faces=mesh.n_faces,
                threshold=self.config.threshold,
                raw_segments=raw.segment_count,
                segments=labels.segment_count,
                boundary_faces=labels.boundary_count,
            )
            self.summary.segment_count = labels.segment_count
        return labels

    def _measure(self, mesh: TriMesh, labels: SegmentLabels) -> None:
        cfg = self.config
        with self.stage("metrics") as details:
            if cfg.true_length is not None:
                mesh = apply_scale(mesh, cfg.true_length, cfg.measured_length)
                details["scale_factor"] = cfg.true_length / cfg.measured_length
            metrics = all_segment_metrics(mesh, labels, cfg.threads)
            report = gradation_report(metrics, cfg.sieves)
            self._artifact(write_metrics_csv(self.output_dir / "metrics.csv", metrics))
            self._artifact(write_gradation_csv(self.output_dir / "gradation.csv", report))
            tables = render_tables(metrics, report)
            report_path = self.output_dir / "report.txt"
            report_path.write_text(tables, encoding="utf-8")
            self._artifact(report_path)
            logger.info("Particle metrics\n%s", tables)
            details.update(particles=len(metrics), skipped_segments=labels.segment_count - len(metrics))

    # Commands

    def _run_reconstruct(self) -> None:
        self._reconstruct(self._load_cloud())

    def _run_segment(self) -> None:
        self._segment(self._load_mesh())

    def _run_metrics(self) -> None:
        mesh = self._load_mesh()
        labels_path = require_file(self.config.labels or labels_sidecar_path(self.config.input), "labels")
        with self.stage("load-labels") as details:
            labels = read_labels(labels_path)
            if len(labels) != mesh.n_faces:
                raise ValueError(f"{labels_path} labels {len(labels)} faces, the mesh has {mesh.n_faces}")
            details.update(path=str(labels_path), segments=labels.segment_count)
        self.summary.segment_count = labels.segment_count
        self._measure(mesh, labels)

    def _run_ba(self) -> None:
        path = require_file(self.config.input)
        with self.stage("load") as details:
            estimate, observations = read_scene(path)
            details.update(
                path=str(path), cameras=estimate.n_cameras, points=estimate.n_points, observations=len(observations)
            )
        with self.stage("ba") as details:
            refined, report = bundle_adjust(estimate, observations, self.config.bundle_adjustment())
            self._artifact(write_scene(self.output_dir / "refined_scene.txt", refined, observations))
            convergence = self.output_dir / "convergence.json"
            convergence.write_text(
                json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            self._artifact(convergence)
            details.update(report.model_dump(mode="json", exclude={"cost_history"}))

    def _run_pipeline(self) -> None:
        geometry = self._load_geometry()
        if isinstance(geometry, TriMesh) and self.config.input_kind != "cloud":
            logger.info("Input is a mesh; skipping reconstruction")
            mesh = geometry
        else:
            cloud = PointCloud(geometry.vertices) if isinstance(geometry, TriMesh) else geometry
            mesh = self._reconstruct(cloud)
        labels = self._segment(mesh)
        self._measure(mesh, labels)

    def _run_synth(self) -> None:
        names = (
            ["sphere", "icosphere", "two-ball", "stockpile", "scene"]
            if self.config.fixture == "all" else [self.config.fixture]
        )
        for name in names:
            with self.stage(f"synth-{name}") as details:
                for path in self._synth(name):
                    self._artifact(path)
                    details.setdefault("files", []).append(path.name)

    def _synth(self, name: str) -> List[Path]:
        cfg, out = self.config, self.output_dir
        if name == "sphere":
            cloud = fixtures.sphere_cloud(cfg.points or DEFAULT_SPHERE_POINTS)
            return [write_ply(out / "sphere.ply", cloud, binary=cfg.binary)]
        if name == "icosphere":
            return [write_ply(out / "icosphere.ply", fixtures.icosphere(3), binary=cfg.binary)]
        if name == "two-ball":
            mesh = fixtures.two_ball_mesh()
            truth = fixtures.truth_labels(mesh, fixtures.TWO_BALLS)
            return [
                write_ply(out / "two_ball.ply", mesh, binary=cfg.binary),
                write_labels(out / "two_ball_truth.labels.txt", SegmentLabels(truth, len(fixtures.TWO_BALLS))),
            ]
        if name == "stockpile":
            cloud = fixtures.stockpile_cloud(cfg.points or DEFAULT_STOCKPILE_POINTS)
            balls = out / "stockpile_balls.yaml"
            balls.write_text(
                yaml.safe_dump({"balls": [b.as_dict() for b in fixtures.STOCKPILE_BALLS]}, sort_keys=False),
                encoding="utf-8",
            )
            return [write_ply(out / "stockpile.ply", cloud, binary=cfg.binary), balls]
        return self._synth_scene()

    def _synth_scene(self) -> List[Path]:
        truth, observations = synth_scene(SceneSpec(seed=self.config.seed))
        initial = perturb_scene(truth, SCENE_PERTURBATION, self.config.seed)
        return [
            write_scene(self.output_dir / "scene.txt", initial, observations),
            write_scene(self.output_dir / "scene_truth.txt", truth, observations),
        ]


def run_pipeline(command: str, config: PipelineConfig) -> Tuple[int, RunSummary]:
    """Run one command; returns the exit status and the run summary."""
    runner = PipelineRunner(command, config)
    code = runner.run()
    return code, runner.summary
