"""
Plain-text artifact formats.

This module provides functionality for:
1. Segment label files (`S <count>` header, one `<face> <segment|B>` line per face)
2. SfM scene files (`CAM`, `PT` and `OBS` records, `#` comments)
3. Raw little-endian grid dumps with a text header
4. CSV and text-table output of metrics and gradation
"""
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from granulite.errors import GranuliteIOError, ParseError
from granulite.schemas.metrics import GradationReport, ParticleMetrics
from granulite.services.morphometrics import gradation_frame, metrics_frame
from granulite.services.segmentation import BOUNDARY, SegmentLabels
from granulite.services.sfm import CameraView, Observation, SceneEstimate
from granulite.services.surface_recon import GridLattice, ScalarGrid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise GranuliteIOError(f"cannot write {path}: {e}") from e
    return path


def _read_lines(path: PathLike) -> List[str]:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise GranuliteIOError(f"cannot read {path}: {e}") from e


# Labels

def format_labels(labels: SegmentLabels) -> str:
    lines = [f"S {labels.segment_count}"]
    lines += [
        f"{face} {'B' if label == BOUNDARY else label}"
        for face, label in enumerate(labels.assignments.tolist())
    ]
    return "\n".join(lines) + "\n"


def write_labels(path: PathLike, labels: SegmentLabels) -> Path:
    return _write_text(path, format_labels(labels))


def read_labels(path: PathLike) -> SegmentLabels:
    """
    Parse a label file. Every face id from 0 to F-1 must appear exactly once.

    Raises:
        ParseError: malformed header or record, duplicate or missing face ids
    """
    segment_count = None
    entries = {}
    for number, line in enumerate(_read_lines(path), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if segment_count is None:
            if len(tokens) != 2 or tokens[0] != "S" or not tokens[1].isdigit():
                raise ParseError("expected header 'S <segment_count>'", line=number)
            segment_count = int(tokens[1])
            continue
        if len(tokens) != 2:
            raise ParseError("expected '<face_id> <segment_id|B>'", line=number)
        try:
            face = int(tokens[0])
            label = BOUNDARY if tokens[1] == "B" else int(tokens[1])
        except ValueError:
            raise ParseError(f"malformed label record '{line.strip()}'", line=number) from None
        if face in entries:
            raise ParseError(f"face {face} is labeled twice", line=number)
        if label != BOUNDARY and not 0 <= label < segment_count:
            raise ParseError(f"segment id {label} outside 0..{segment_count - 1}", line=number)
        entries[face] = label
    if segment_count is None:
        raise ParseError("empty label file", line=1)
    if sorted(entries) != list(range(len(entries))):
        raise ParseError("face ids must cover 0..F-1 without gaps")
    assignments = np.array([entries[f] for f in range(len(entries))], dtype=np.int64)
    try:
        return SegmentLabels(assignments, segment_count)
    except ValueError as e:
        raise ParseError(str(e)) from None


# Scenes

def format_scene(estimate: SceneEstimate, observations: Sequence[Observation]) -> str:
    lines = ["# granulite scene: CAM i p00..p23 | PT j x y z | OBS i j u v"]
    for i, camera in enumerate(estimate.cameras):
        lines.append(f"CAM {i} " + " ".join(f"{v:.17g}" for v in camera.P.ravel()))
    for j, point in enumerate(estimate.points):
        lines.append(f"PT {j} " + " ".join(f"{v:.17g}" for v in point))
    for obs in observations:
        lines.append(f"OBS {obs.camera_id} {obs.point_id} {obs.pixel[0]:.17g} {obs.pixel[1]:.17g}")
    return "\n".join(lines) + "\n"


def write_scene(path: PathLike, estimate: SceneEstimate, observations: Sequence[Observation]) -> Path:
    return _write_text(path, format_scene(estimate, observations))


def read_scene(path: PathLike) -> Tuple[SceneEstimate, List[Observation]]:
    """
    Parse a scene file. Camera and point ids must be contiguous from 0.

    Raises:
        ParseError: unknown record, wrong field count, duplicate or missing ids
        InvalidCamera: a camera matrix is not a finite camera
    """
    cameras, points = {}, {}
    observations: List[Observation] = []
    expected = {"CAM": 14, "PT": 5, "OBS": 5}
    for number, line in enumerate(_read_lines(path), start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        kind = tokens[0]
        if kind not in expected:
            raise ParseError(f"unknown record '{kind}'", line=number)
        if len(tokens) != expected[kind]:
            raise ParseError(f"{kind} record needs {expected[kind] - 1} fields", line=number)
        try:
            if kind == "CAM":
                i = int(tokens[1])
                if i in cameras:
                    raise ParseError(f"camera {i} defined twice", line=number)
                cameras[i] = np.array([float(t) for t in tokens[2:]]).reshape(3, 4)
            elif kind == "PT":
                j = int(tokens[1])
                if j in points:
                    raise ParseError(f"point {j} defined twice", line=number)
                points[j] = [float(t) for t in tokens[2:]]
            else:
                observations.append(
                    Observation(int(tokens[1]), int(tokens[2]), (float(tokens[3]), float(tokens[4])))
                )
        except ParseError:
            raise
        except ValueError:
            raise ParseError(f"malformed {kind} record", line=number) from None

    for name, table in (("camera", cameras), ("point", points)):
        if sorted(table) != list(range(len(table))):
            raise ParseError(f"{name} ids must be contiguous from 0")
    estimate = SceneEstimate(
        [CameraView(cameras[i]) for i in range(len(cameras))],
        np.array([points[j] for j in range(len(points))], dtype=np.float64).reshape(-1, 3),
    )
    return estimate, observations


# Grid dumps

def write_grid(path: PathLike, grid: ScalarGrid) -> Tuple[Path, Path]:
    """
    Dump node values as raw little-endian float64 (x slowest) to `<path>.raw`
    with a text header in `<path>.hdr`.
    """
    path = Path(path)
    raw, hdr = path.with_suffix(".raw"), path.with_suffix(".hdr")
    lattice = grid.lattice
    header = "\n".join([
        "granulite grid",
        "dims " + " ".join(str(n) for n in lattice.node_shape),
        "origin " + " ".join(f"{v:.17g}" for v in lattice.origin),
        f"spacing {lattice.spacing:.17g}",
        "dtype float64 little-endian C-order",
    ]) + "\n"
    try:
        raw.write_bytes(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())
    except OSError as e:
        raise GranuliteIOError(f"cannot write {raw}: {e}") from e
    _write_text(hdr, header)
    return raw, hdr


def read_grid(path: PathLike) -> ScalarGrid:
    path = Path(path)
    fields = {}
    for number, line in enumerate(_read_lines(path.with_suffix(".hdr")), start=1):
        tokens = line.split()
        if tokens and tokens[0] in ("dims", "origin", "spacing"):
            fields[tokens[0]] = (tokens[1:], number)
    if set(fields) != {"dims", "origin", "spacing"}:
        raise ParseError("grid header needs dims, origin and spacing lines")
    try:
        dims = tuple(int(t) for t in fields["dims"][0])
        origin = tuple(float(t) for t in fields["origin"][0])
        spacing = float(fields["spacing"][0][0])
    except (ValueError, IndexError):
        raise ParseError("malformed grid header") from None
    try:
        data = path.with_suffix(".raw").read_bytes()
    except OSError as e:
        raise GranuliteIOError(f"cannot read {path.with_suffix('.raw')}: {e}") from e
    if len(data) != 8 * int(np.prod(dims)):
        raise ParseError(f"grid data holds {len(data)} bytes, expected {8 * int(np.prod(dims))}", offset=len(data))
    lattice = GridLattice(origin=origin, spacing=spacing, cells=tuple(n - 1 for n in dims))
    return ScalarGrid(lattice, np.frombuffer(data, dtype="<f8").reshape(dims).astype(np.float64))


# Metrics and gradation

def write_metrics_csv(path: PathLike, metrics: Sequence[ParticleMetrics]) -> Path:
    path = Path(path)
    try:
        metrics_frame(metrics).to_csv(path, index=False, float_format="%.10g")
    except OSError as e:
        raise GranuliteIOError(f"cannot write {path}: {e}") from e
    return path


def write_gradation_csv(path: PathLike, report: GradationReport) -> Path:
    path = Path(path)
    try:
        gradation_frame(report).to_csv(path, index=False, float_format="%.10g")
    except OSError as e:
        raise GranuliteIOError(f"cannot write {path}: {e}") from e
    return path


def render_tables(metrics: Sequence[ParticleMetrics], report: GradationReport) -> str:
    """Human-readable metrics and gradation tables."""
    metrics_text = metrics_frame(metrics).to_string(index=False, float_format=lambda v: f"{v:.4f}")
    gradation_text = gradation_frame(report).to_string(index=False, float_format=lambda v: f"{v:.2f}")
    return (
        f"Particles: {report.particle_count}\n\n{metrics_text}\n\n"
        f"Gradation (percent finer by d2)\n{gradation_text}\n"
    )
