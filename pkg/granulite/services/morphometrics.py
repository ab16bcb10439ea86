"""
Particle size and shape metrics.

This module provides functionality for:
1. Principal dimensions of a segmented particle from area-weighted PCA
2. Calibration scaling of reconstructed meshes
3. Sieve-style gradation reports by intermediate dimension d2
4. Tabular (pandas) views of metrics and gradation
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from granulite.errors import DegenerateSegment, EmptyInput, NonPositiveLength
from granulite.schemas.metrics import GradationReport, GradationRow, ParticleMetrics
from granulite.services.geometry import TriMesh
from granulite.services.segmentation import SegmentLabels

logger = logging.getLogger(__name__)

MIN_SEGMENT_FACES = 4
RANK_TOL = 1e-12
# covariance entries below this fraction of the trace are treated as zero
COVARIANCE_CLEAN_TOL = 1e-12

METRIC_COLUMNS = ["segment_id", "face_count", "surface_area", "d1", "d2", "d3", "elongation", "flatness"]


def _principal_axes(triangles: np.ndarray, weights: np.ndarray):
    """Area-weighted surface covariance: centroid spread plus each triangle's own spread."""
    centroids = triangles.mean(axis=1)
    mean = weights @ centroids
    centered = centroids - mean
    centroid_covariance = (centered * weights[:, None]).T @ centered
    eigenvalues = np.linalg.eigvalsh(centroid_covariance)
    if eigenvalues[1] <= RANK_TOL * eigenvalues[2]:
        return None
    local = triangles - centroids[:, None, :]
    covariance = centroid_covariance + np.einsum("i,ikj,ikl->jl", weights, local, local) / 12.0
    covariance[np.abs(covariance) < COVARIANCE_CLEAN_TOL * np.trace(covariance)] = 0.0
    _, eigenvectors = np.linalg.eigh(covariance)
    return mean, eigenvectors[:, ::-1]


def segment_metrics(mesh: TriMesh, labels: SegmentLabels, segment_id: int) -> ParticleMetrics:
    """
    Surface area and principal dimensions of one segment.

    Axes come from PCA of the segment surface weighted by face area (face
    centroids plus the spread within each triangle); each dimension is the
    spread of the segment's vertices along one axis.

    Raises:
        DegenerateSegment: fewer than 4 faces, zero area or collinear centroids
    """
    faces = labels.faces_of(segment_id)
    if len(faces) < MIN_SEGMENT_FACES:
        raise DegenerateSegment(
            f"segment {segment_id} has {len(faces)} faces, at least {MIN_SEGMENT_FACES} are required"
        )
    areas = mesh.face_areas()[faces]
    total_area = float(areas.sum())
    if total_area <= 0.0:
        raise DegenerateSegment(f"segment {segment_id} has zero area")

    principal = _principal_axes(mesh.vertices[mesh.faces[faces]], areas / total_area)
    if principal is None:
        raise DegenerateSegment(f"segment {segment_id} has collinear face centroids")
    mean, axes = principal

    vertices = mesh.vertices[np.unique(mesh.faces[faces])]
    projections = (vertices - mean) @ axes
    d1, d2, d3 = sorted((projections.max(axis=0) - projections.min(axis=0)).tolist(), reverse=True)
    return ParticleMetrics(
        segment_id=segment_id,
        face_count=len(faces),
        surface_area=total_area,
        principal_dimensions=(d1, d2, d3),
        elongation=min(d2 / d1, 1.0) if d1 > 0 else 0.0,
        flatness=min(d3 / d2, 1.0) if d2 > 0 else 0.0,
    )


def all_segment_metrics(mesh: TriMesh, labels: SegmentLabels, threads: int = 1) -> List[ParticleMetrics]:
    """Metrics of every segment in id order; degenerate segments are skipped."""

    def measure(segment_id: int) -> Optional[ParticleMetrics]:
        try:
            return segment_metrics(mesh, labels, segment_id)
        except DegenerateSegment as e:
            logger.warning("Skipping segment %d: %s", segment_id, e)
            return None

    # warm the cached per-face arrays before fanning out
    mesh.face_normals()
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        results = list(pool.map(measure, range(labels.segment_count)))
    metrics = [m for m in results if m is not None]
    logger.info("Measured %d of %d segments", len(metrics), labels.segment_count)
    return metrics


def apply_scale(mesh: TriMesh, reference_true_length: float, reference_measured_length: float) -> TriMesh:
    """
    Scale a dimensionless reconstruction using a calibration object.

    Raises:
        NonPositiveLength: either length is zero or negative
    """
    if reference_true_length <= 0 or reference_measured_length <= 0:
        raise NonPositiveLength(
            f"calibration lengths must be positive (true={reference_true_length}, "
            f"measured={reference_measured_length})"
        )
    factor = reference_true_length / reference_measured_length
    logger.info("Applying calibration scale factor %.6g", factor)
    return mesh.scaled(factor)


def gradation_report(metrics: Sequence[ParticleMetrics], thresholds: Sequence[float]) -> GradationReport:
    """
    Cumulative percent of particles with d2 strictly below each threshold.

    A final (inf, 100%) row is appended when the largest threshold does not
    already pass every particle.

    Raises:
        EmptyInput: no particles
    """
    if not metrics:
        raise EmptyInput("gradation needs at least one particle")
    thresholds = [float(t) for t in thresholds]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly ascending")

    d2 = np.array([m.d2 for m in metrics])
    rows = [
        GradationRow(size=t, percent_finer=100.0 * int(np.sum(d2 < t)) / len(d2))
        for t in thresholds
    ]
    if not rows or rows[-1].percent_finer < 100.0:
        rows.append(GradationRow(size=float("inf"), percent_finer=100.0))
    return GradationReport(rows=rows, particle_count=len(d2))


def metrics_frame(metrics: Sequence[ParticleMetrics]) -> pd.DataFrame:
    records = [
        {
            "segment_id": m.segment_id,
            "face_count": m.face_count,
            "surface_area": m.surface_area,
            "d1": m.d1,
            "d2": m.d2,
            "d3": m.d3,
            "elongation": m.elongation,
            "flatness": m.flatness,
        }
        for m in metrics
    ]
    return pd.DataFrame.from_records(records, columns=METRIC_COLUMNS)


def gradation_frame(report: GradationReport) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [{"size": row.size, "percent_finer": row.percent_finer} for row in report.rows],
        columns=["size", "percent_finer"],
    )
