"""
Synthetic geometry with known ground truth.

This module provides functionality for:
1. Oriented sphere samples and closed reference meshes (icosphere, cube,
   tetrahedron, ellipsoid)
2. Ball-union meshes extracted from an analytic field (two-ball, stockpile)
3. The ten-ball stockpile: oriented surface samples, per-face truth labels
   and segment-to-ball matching
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from granulite.services.geometry import PointCloud, TriMesh, vector_norm
from granulite.services.segmentation import SegmentLabels
from granulite.services.surface_recon import GridLattice, ScalarGrid, extract_isosurface

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
UNION_PADDING = 2


@dataclass(frozen=True)
class Ball:
    center: Tuple[float, float, float]
    radius: float

    def as_dict(self) -> Dict[str, object]:
        return {"center": list(self.center), "radius": self.radius}


# Ten overlapping rocks: a bottom ring around a large base ball plus a top
# layer. Radii span 0.30..1.00, about the 3x range of a real aggregate pile.
STOCKPILE_BALLS: Tuple[Ball, ...] = (
    Ball((0.0, 0.0, 1.0), 1.0),
    Ball((1.6211, 0.0, 0.85), 0.85),
    Ball((0.8861, 1.2345, 0.75), 0.75),
    Ball((-0.4064, 1.4081, 0.70), 0.70),
    Ball((-1.2216, 0.5746, 0.60), 0.60),
    Ball((-1.2030, -0.4591, 0.55), 0.55),
    Ball((-0.5167, -1.1070, 0.50), 0.50),
    Ball((0.4887, 0.4101, 2.1050), 0.45),
    Ball((-0.7607, 0.0666, 1.9101), 0.35),
    Ball((0.1981, -0.7394, 1.8502), 0.30),
)

TWO_BALLS: Tuple[Ball, ...] = (
    Ball((0.0, 0.0, 0.0), 1.0),
    Ball((1.6, 0.0, 0.0), 0.8),
)


def fibonacci_sphere(count: int) -> np.ndarray:
    """Near-uniform unit vectors on the sphere."""
    i = np.arange(count, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * np.arange(count)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sphere_cloud(count: int = 2000, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> PointCloud:
    """Samples of a sphere with exact outward normals."""
    directions = fibonacci_sphere(count)
    return PointCloud(np.asarray(center, dtype=np.float64) + radius * directions, directions)


_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICOSAHEDRON_VERTICES = np.array([
    (-1, _T, 0), (1, _T, 0), (-1, -_T, 0), (1, -_T, 0),
    (0, -1, _T), (0, 1, _T), (0, -1, -_T), (0, 1, -_T),
    (_T, 0, -1), (_T, 0, 1), (-_T, 0, -1), (-_T, 0, 1),
], dtype=np.float64)
_ICOSAHEDRON_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(subdivisions: int = 1, radius: float = 1.0) -> TriMesh:
    """Closed, outward-oriented sphere mesh with 20 * 4**subdivisions faces."""
    if subdivisions < 0:
        raise ValueError(f"subdivisions must be non-negative, got {subdivisions}")
    vertices = [tuple(v) for v in _ICOSAHEDRON_VERTICES / vector_norm(_ICOSAHEDRON_VERTICES)[:, None]]
    faces = list(_ICOSAHEDRON_FACES)

    for _ in range(subdivisions):
        midpoints: Dict[Tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                m = (np.asarray(vertices[a]) + np.asarray(vertices[b])) / 2.0
                vertices.append(tuple(m / vector_norm(m)))
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined

    return TriMesh(radius * np.asarray(vertices), np.asarray(faces))


def ellipsoid_mesh(semi_axes: Sequence[float] = (2.0, 1.0, 0.5), subdivisions: int = 3) -> TriMesh:
    """Icosphere stretched along x, y, z; extents are exactly twice the semi-axes."""
    sphere = icosphere(subdivisions)
    return TriMesh(sphere.vertices * np.asarray(semi_axes, dtype=np.float64), sphere.faces)


def tetrahedron() -> TriMesh:
    vertices = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
    faces = [(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)]
    return TriMesh(vertices, faces)


def unit_cube_mesh() -> TriMesh:
    """Axis-aligned [0, 1]^3 cube, two triangles per side."""
    vertices = [(x, y, z) for z in (0.0, 1.0) for y in (0.0, 1.0) for x in (0.0, 1.0)]
    faces = [
        (0, 2, 1), (1, 2, 3),  # z = 0
        (4, 5, 6), (5, 7, 6),  # z = 1
        (0, 1, 4), (1, 5, 4),  # y = 0
        (2, 6, 3), (3, 6, 7),  # y = 1
        (0, 4, 2), (2, 4, 6),  # x = 0
        (1, 3, 5), (3, 7, 5),  # x = 1
    ]
    return TriMesh(vertices, faces)


def _ball_arrays(balls: Sequence[Ball]) -> Tuple[np.ndarray, np.ndarray]:
    return (
        np.array([b.center for b in balls], dtype=np.float64),
        np.array([b.radius for b in balls], dtype=np.float64),
    )


def union_field(balls: Sequence[Ball], resolution: int = 64) -> ScalarGrid:
    """max_k(r_k - |p - c_k|) on a lattice around the balls; positive inside."""
    centers, radii = _ball_arrays(balls)
    corners = np.vstack([centers - radii[:, None], centers + radii[:, None]])
    lattice = GridLattice.enclosing(corners, resolution, UNION_PADDING)
    nodes = lattice.node_positions()
    values = np.full(lattice.node_shape, -np.inf)
    for center, radius in zip(centers, radii):
        values = np.maximum(values, radius - vector_norm(nodes - center))
    return ScalarGrid(lattice, values)


def union_mesh(balls: Sequence[Ball], resolution: int = 64) -> TriMesh:
    return extract_isosurface(union_field(balls, resolution), 0.0)


def two_ball_mesh(resolution: int = 48) -> TriMesh:
    return union_mesh(TWO_BALLS, resolution)


def stockpile_mesh(resolution: int = 64) -> TriMesh:
    return union_mesh(STOCKPILE_BALLS, resolution)


def stockpile_cloud(count: int = 40000, balls: Sequence[Ball] = STOCKPILE_BALLS) -> PointCloud:
    """
    Oriented samples of the exposed surface of a ball union.

    Each ball receives samples in proportion to its area; samples buried
    inside another ball are discarded. Normals are radial.
    """
    centers, radii = _ball_arrays(balls)
    shares = radii ** 2 / np.sum(radii ** 2)
    positions, normals = [], []
    for k, (center, radius) in enumerate(zip(centers, radii)):
        directions = fibonacci_sphere(max(int(round(count * shares[k])), 50))
        points = center + radius * directions
        exposed = np.ones(len(points), dtype=bool)
        for j, (other, other_radius) in enumerate(zip(centers, radii)):
            if j != k:
                exposed &= vector_norm(points - other) >= other_radius
        positions.append(points[exposed])
        normals.append(directions[exposed])
    cloud = PointCloud(np.vstack(positions), np.vstack(normals))
    logger.debug("Stockpile cloud: %d exposed samples from %d balls", len(cloud), len(balls))
    return cloud


def truth_labels(mesh: TriMesh, balls: Sequence[Ball] = STOCKPILE_BALLS) -> np.ndarray:
    """Index of the ball whose sphere passes closest to each face centroid."""
    centers, radii = _ball_arrays(balls)
    centroids = mesh.face_centroids()
    distance = np.abs(vector_norm(centroids[:, None, :] - centers[None, :, :]) - radii[None, :])
    return np.argmin(distance, axis=1)


@dataclass(frozen=True)
class SegmentMatch:
    segment_id: int
    ball: int
    agreement: float


def match_segments_to_truth(labels: SegmentLabels, truth: np.ndarray) -> List[SegmentMatch]:
    """Majority truth ball of every segment and the fraction of faces agreeing."""
    truth = np.asarray(truth)
    matches = []
    for segment_id in range(labels.segment_count):
        votes = np.bincount(truth[labels.faces_of(segment_id)])
        ball = int(np.argmax(votes))
        matches.append(SegmentMatch(segment_id, ball, float(votes[ball] / votes.sum())))
    return matches
