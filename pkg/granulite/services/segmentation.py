"""
Curvature-constrained breadth-first segmentation of stockpile meshes.

A BFS grows each segment from the lowest-index unassigned face. A neighbor
is admitted when (c + n_next) . n_cur > t, where c is the unit vector from
the neighbor's centroid to the current face's centroid. Rejected neighbors
become Boundary faces for good. The search restarts until every face is
assigned.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from granulite.errors import CoincidentCentroids, NonUnitInput
from granulite.schemas.config import CriterionParams
from granulite.services.geometry import (
    COINCIDENT_TOL,
    UNIT_NORM_TOL,
    FaceAdjacency,
    TriMesh,
    vector_norm,
)

logger = logging.getLogger(__name__)

BOUNDARY = -1
_UNASSIGNED = -2


@dataclass(frozen=True, eq=False)
class SegmentLabels:
    """Per-face segment id in 0..S-1, or BOUNDARY."""
    assignments: np.ndarray
    segment_count: int

    def __post_init__(self):
        assignments = np.array(self.assignments, dtype=np.int64, copy=True).reshape(-1)
        if assignments.size and (assignments.min() < BOUNDARY or assignments.max() >= self.segment_count):
            raise ValueError(f"labels must lie in [-1, {self.segment_count - 1}]")
        used = np.bincount(assignments[assignments >= 0], minlength=self.segment_count)
        if np.any(used == 0):
            raise ValueError(f"segment {int(np.argmin(used))} has no faces")
        assignments.setflags(write=False)
        object.__setattr__(self, "assignments", assignments)
        object.__setattr__(self, "segment_count", int(self.segment_count))

    def __len__(self) -> int:
        return len(self.assignments)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegmentLabels):
            return NotImplemented
        return self.segment_count == other.segment_count and np.array_equal(self.assignments, other.assignments)

    __hash__ = None

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.assignments == BOUNDARY

    @property
    def boundary_count(self) -> int:
        return int(np.sum(self.boundary_mask))

    def sizes(self) -> np.ndarray:
        """Face count of every segment."""
        return np.bincount(self.assignments[self.assignments >= 0], minlength=self.segment_count)

    def faces_of(self, segment_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == segment_id)


def _check_unit(name: str, vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    if abs(float(vector_norm(vector)) - 1.0) > UNIT_NORM_TOL:
        raise NonUnitInput(f"{name} has norm {float(vector_norm(vector)):.9f}, expected 1")
    return vector


def criterion_value(c, n_next, n_cur) -> float:
    """(c + n_next) . n_cur for unit vectors."""
    c = _check_unit("c", c)
    n_next = _check_unit("n_next", n_next)
    n_cur = _check_unit("n_cur", n_cur)
    return float(np.sum((c + n_next) * n_cur))


def curvature_criterion(c, n_next, n_cur, params: Optional[CriterionParams] = None) -> bool:
    """
    True when the neighbor continues the current segment.

    The inequality is strict, so a value equal to the threshold is a boundary.

    Raises:
        NonUnitInput: an input deviates from unit length by more than 1e-6
    """
    params = params or CriterionParams()
    return criterion_value(c, n_next, n_cur) > params.threshold


def _admission_values(mesh: TriMesh, adjacency: FaceAdjacency, usable: np.ndarray) -> np.ndarray:
    """Criterion value for every directed adjacency entry (current -> next)."""
    normals, _ = mesh.face_normals()
    centroids = mesh.face_centroids()
    current = adjacency.rows()
    following = adjacency.indices
    values = np.full(len(following), -np.inf)
    live = usable[current] & usable[following]
    cur, nxt = current[live], following[live]

    difference = centroids[cur] - centroids[nxt]
    norms = vector_norm(difference)
    if np.any(norms < COINCIDENT_TOL):
        k = int(np.argmin(norms))
        raise CoincidentCentroids(int(nxt[k]), int(cur[k]))
    c = difference / norms[:, None]
    values[live] = np.sum((c + normals[nxt]) * normals[cur], axis=1)
    return values


def segment_mesh(
    mesh: TriMesh,
    adjacency: FaceAdjacency,
    params: Optional[CriterionParams] = None,
) -> SegmentLabels:
    """
    Partition the faces into curvature-bounded segments and Boundary faces.

    Neighbors are examined in ascending face id with a FIFO queue, so the
    result is deterministic. Degenerate faces are marked Boundary up front.
    """
    params = params or CriterionParams()
    if len(adjacency) != mesh.n_faces:
        raise ValueError(f"adjacency covers {len(adjacency)} faces, mesh has {mesh.n_faces}")
    _, degenerate = mesh.face_normals()
    if np.any(degenerate):
        logger.warning("Marking %d degenerate faces as boundary", int(np.sum(degenerate)))

    admit = (_admission_values(mesh, adjacency, ~degenerate) > params.threshold).tolist()
    indptr = adjacency.indptr.tolist()
    indices = adjacency.indices.tolist()
    labels: List[int] = [BOUNDARY if d else _UNASSIGNED for d in degenerate.tolist()]

    segment = 0
    for seed in range(mesh.n_faces):
        if labels[seed] != _UNASSIGNED:
            continue
        labels[seed] = segment
        queue = deque([seed])
        while queue:
            current = queue.popleft()
            for entry in range(indptr[current], indptr[current + 1]):
                neighbor = indices[entry]
                if labels[neighbor] != _UNASSIGNED:
                    continue
                if admit[entry]:
                    labels[neighbor] = segment
                    queue.append(neighbor)
                else:
                    labels[neighbor] = BOUNDARY
        segment += 1

    result = SegmentLabels(np.asarray(labels, dtype=np.int64), segment)
    logger.info(
        "Segmented %d faces into %d segments with %d boundary faces (t=%.3f)",
        mesh.n_faces, result.segment_count, result.boundary_count, params.threshold,
    )
    return result


def boundary_faces(labels: SegmentLabels) -> List[int]:
    """Ascending ids of the Boundary faces."""
    return np.flatnonzero(labels.boundary_mask).tolist()


def filter_segments(labels: SegmentLabels, min_faces: int) -> SegmentLabels:
    """
    Relabel segments smaller than `min_faces` as Boundary and compact the
    surviving ids to 0..S'-1 in their original order.
    """
    if min_faces < 1:
        raise ValueError(f"min_faces must be at least 1, got {min_faces}")
    keep = labels.sizes() >= min_faces
    new_ids = np.where(keep, np.cumsum(keep) - 1, BOUNDARY)
    relabeled = np.full(len(labels), BOUNDARY, dtype=np.int64)
    assigned = labels.assignments >= 0
    relabeled[assigned] = new_ids[labels.assignments[assigned]]
    dropped = int(labels.segment_count - np.sum(keep))
    if dropped:
        logger.info("Dropped %d segments smaller than %d faces", dropped, min_faces)
    return SegmentLabels(relabeled, int(np.sum(keep)))
