"""
Unit tests for curvature-constrained segmentation.

Tests the curvature criterion, BFS segmentation invariants and segment
filtering.
"""
import logging
from collections import deque

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from granulite.errors import CoincidentCentroids, NonUnitInput
from granulite.schemas.config import CriterionParams, PipelineConfig
from granulite.services import fixtures
from granulite.services.geometry import TriMesh, build_adjacency, center_difference, face_normal
from granulite.services.segmentation import (
    BOUNDARY,
    SegmentLabels,
    boundary_faces,
    criterion_value,
    curvature_criterion,
    filter_segments,
    segment_mesh,
)

UP = np.array([0.0, 0.0, 1.0])


def _naive_segmentation(mesh, threshold):
    """Reference BFS built from the per-face primitives."""
    adjacency = build_adjacency(mesh).as_lists()
    params = CriterionParams(threshold=threshold)
    labels = [None] * mesh.n_faces
    segment = 0
    for seed in range(mesh.n_faces):
        if labels[seed] is not None:
            continue
        labels[seed] = segment
        queue = deque([seed])
        while queue:
            current = queue.popleft()
            for neighbor in adjacency[current]:
                if labels[neighbor] is not None:
                    continue
                c = center_difference(mesh, neighbor, current)
                if curvature_criterion(c, face_normal(mesh, neighbor), face_normal(mesh, current), params):
                    labels[neighbor] = segment
                    queue.append(neighbor)
                else:
                    labels[neighbor] = BOUNDARY
        segment += 1
    return labels, segment


def _small_meshes():
    return [
        fixtures.tetrahedron(),
        fixtures.unit_cube_mesh(),
        fixtures.icosphere(1),
        fixtures.icosphere(2),
        fixtures.ellipsoid_mesh((2.0, 1.0, 0.5), 2),
        fixtures.two_ball_mesh(8),
    ]


def test_coplanar_neighbor_is_admitted():
    """Test that a coplanar neighbor scores 1.0 and passes at t = 0.7."""
    c = np.array([1.0, 0.0, 0.0])
    assert criterion_value(c, UP, UP) == pytest.approx(1.0)
    assert curvature_criterion(c, UP, UP)


def test_right_angle_concave_neighbor_is_rejected():
    """Test that a 90 degree concave turn scores -0.707 and is a boundary."""
    c = np.array([-1.0, 0.0, -1.0]) / np.sqrt(2.0)
    n_next = np.array([-1.0, 0.0, 0.0])
    assert criterion_value(c, n_next, UP) == pytest.approx(-np.sqrt(0.5))
    assert not curvature_criterion(c, n_next, UP)


def test_threshold_is_strict():
    """Test that a value equal to the threshold is rejected."""
    c = np.array([1.0, 0.0, 0.0])
    assert not curvature_criterion(c, UP, UP, CriterionParams(threshold=1.0))
    assert curvature_criterion(c, UP, UP, CriterionParams(threshold=0.999))


def test_criterion_monotone_in_threshold(rng):
    """Test that once rejected at some t, a neighbor stays rejected for every larger t."""
    thresholds = np.linspace(-2.0, 2.0, 81)
    for _ in range(200):
        c, n_next, n_cur = (v / np.linalg.norm(v) for v in rng.normal(size=(3, 3)))
        results = [curvature_criterion(c, n_next, n_cur, CriterionParams(threshold=t)) for t in thresholds]
        assert all(a >= b for a, b in zip(results, results[1:]))


def test_criterion_rejects_non_unit_input():
    """Test that vectors off unit length by more than 1e-6 are rejected."""
    with pytest.raises(NonUnitInput):
        curvature_criterion(np.array([1.0, 0.0, 0.0]), 2.0 * UP, UP)
    assert curvature_criterion(np.array([1.0 + 5e-7, 0.0, 0.0]), UP, UP)


def test_threshold_extremes_on_icosphere(icosphere_mesh):
    """Test that t = -2 gives one segment and t = 2 gives single-face segments."""
    adjacency = build_adjacency(icosphere_mesh)
    loose = segment_mesh(icosphere_mesh, adjacency, CriterionParams(threshold=-2.0))
    assert loose.segment_count == 1
    assert loose.boundary_count == 0

    strict = segment_mesh(icosphere_mesh, adjacency, CriterionParams(threshold=2.0))
    assert np.all(strict.sizes() == 1)
    assert strict.segment_count + strict.boundary_count == icosphere_mesh.n_faces


def test_sphere_is_one_segment(icosphere_mesh):
    """Test that a smooth convex surface is a single particle at the default threshold."""
    labels = segment_mesh(icosphere_mesh, build_adjacency(icosphere_mesh))
    assert labels.segment_count == 1
    assert labels.boundary_count == 0


def test_matches_naive_reference():
    """Test that the vectorized segmentation equals the per-face reference on small meshes."""
    for mesh in _small_meshes():
        assert mesh.n_faces <= 500
        adjacency = build_adjacency(mesh)
        for t in (-0.5, 0.7, 0.95, 1.5):
            labels = segment_mesh(mesh, adjacency, CriterionParams(threshold=t))
            expected, count = _naive_segmentation(mesh, t)
            assert labels.assignments.tolist() == expected
            assert labels.segment_count == count


def test_naive_reference_sees_the_concave_seam():
    """Test that the coarse two-ball mesh exercises boundary marking and restarts at t = 0.7."""
    mesh = fixtures.two_ball_mesh(8)
    assert mesh.n_faces <= 500
    expected, _ = _naive_segmentation(mesh, 0.7)
    assert BOUNDARY in expected
    labels = segment_mesh(mesh, build_adjacency(mesh))
    assert labels.assignments.tolist() == expected


INVARIANCE_MESHES = ["cube_mesh", "icosphere_mesh", "ellipsoid_mesh", "two_ball_mesh", "stockpile_mesh"]


@pytest.mark.parametrize("mesh_name", INVARIANCE_MESHES)
def test_invariant_under_scaling(request, mesh_name):
    """Test that uniform scaling by 1000 leaves the labels bit-identical."""
    mesh = request.getfixturevalue(mesh_name)
    adjacency = build_adjacency(mesh)
    base = segment_mesh(mesh, adjacency)
    assert segment_mesh(mesh.scaled(1000.0), adjacency) == base


@pytest.mark.parametrize("mesh_name", INVARIANCE_MESHES)
def test_invariant_under_rigid_motion(request, mesh_name):
    """Test that 20 random rigid motions leave the labels bit-identical."""
    mesh = request.getfixturevalue(mesh_name)
    adjacency = build_adjacency(mesh)
    base = segment_mesh(mesh, adjacency)
    rotations = Rotation.random(20, random_state=42).as_matrix()
    translations = np.random.default_rng(42).uniform(-10, 10, size=(20, 3))
    for R, t in zip(rotations, translations):
        assert segment_mesh(mesh.transformed(R, t), adjacency) == base


def test_two_balls_split(two_ball_mesh):
    """Test that two fused balls separate along their concave seam."""
    labels = filter_segments(segment_mesh(two_ball_mesh, build_adjacency(two_ball_mesh)), 20)
    assert labels.segment_count == 2
    truth = fixtures.truth_labels(two_ball_mesh, fixtures.TWO_BALLS)
    matches = fixtures.match_segments_to_truth(labels, truth)
    assert sorted(m.ball for m in matches) == [0, 1]
    assert all(m.agreement >= 0.9 for m in matches)


def test_stockpile_segments_every_ball(stockpile_mesh):
    """Test that the analytic ten-ball pile yields one segment per ball."""
    labels = filter_segments(segment_mesh(stockpile_mesh, build_adjacency(stockpile_mesh)), 20)
    assert labels.segment_count == 10
    matches = fixtures.match_segments_to_truth(labels, fixtures.truth_labels(stockpile_mesh))
    assert sorted(m.ball for m in matches) == list(range(10))
    assert all(m.agreement >= 0.9 for m in matches)


def test_stockpile_default_settings_give_ten_segments(stockpile_mesh):
    """Test that the default threshold and minimum segment size separate the analytic pile into its balls."""
    defaults = PipelineConfig()
    raw = segment_mesh(stockpile_mesh, build_adjacency(stockpile_mesh), defaults.criterion())
    labels = filter_segments(raw, defaults.min_faces)
    assert raw.segment_count > labels.segment_count == 10
    matches = fixtures.match_segments_to_truth(labels, fixtures.truth_labels(stockpile_mesh))
    assert sorted(m.ball for m in matches) == list(range(10))


def test_full_coverage_on_fixtures(cube_mesh, two_ball_mesh):
    """Test that every face is either in exactly one segment or a boundary face."""
    for mesh in (cube_mesh, two_ball_mesh):
        labels = segment_mesh(mesh, build_adjacency(mesh))
        assert len(labels) == mesh.n_faces
        assigned = labels.assignments[labels.assignments >= 0]
        assert labels.sizes().sum() == len(assigned)
        assert len(assigned) + labels.boundary_count == mesh.n_faces


def test_degenerate_faces_become_boundary(caplog):
    """Test that zero-area faces are marked boundary up front with a warning."""
    mesh = TriMesh(
        [(0, 0, 0), (1, 0, 0), (0, 1, 0), (2, 0, 0)],
        [(0, 1, 2), (0, 3, 1)],
    )
    with caplog.at_level(logging.WARNING):
        labels = segment_mesh(mesh, build_adjacency(mesh))
    assert labels.assignments.tolist() == [0, BOUNDARY]
    assert "degenerate" in caplog.text


def test_duplicate_faces_raise():
    """Test that neighbors with coincident centroids are reported."""
    mesh = TriMesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2), (0, 2, 1)])
    with pytest.raises(CoincidentCentroids):
        segment_mesh(mesh, build_adjacency(mesh))


def test_filter_segments_relabels_in_order():
    """Test that small segments become boundary and survivors are renumbered in order."""
    labels = SegmentLabels(np.array([0, 0, 1, BOUNDARY, 2, 2, 2, 3]), 4)
    filtered = filter_segments(labels, 2)
    assert filtered.assignments.tolist() == [0, 0, BOUNDARY, BOUNDARY, 1, 1, 1, BOUNDARY]
    assert filtered.segment_count == 2
    assert filter_segments(labels, 1) == labels


def test_boundary_faces_ascending():
    """Test that boundary faces are listed in ascending id order."""
    labels = SegmentLabels(np.array([BOUNDARY, 0, BOUNDARY, 0, BOUNDARY]), 1)
    assert boundary_faces(labels) == [0, 2, 4]


def test_labels_reject_unused_segment_ids():
    """Test that every declared segment must own at least one face."""
    with pytest.raises(ValueError):
        SegmentLabels(np.array([0, 2]), 3)


def test_disjoint_spheres_are_separate_segments():
    """Test that two meshes with no shared edge can never join one segment."""
    sphere = fixtures.icosphere(2)
    moved = sphere.transformed(np.eye(3), [5.0, 0.0, 0.0])
    mesh = TriMesh(
        np.vstack([sphere.vertices, moved.vertices]),
        np.vstack([sphere.faces, moved.faces + sphere.n_vertices]),
    )
    labels = segment_mesh(mesh, build_adjacency(mesh), CriterionParams(threshold=-2.0))
    assert labels.segment_count == 2
    assert labels.boundary_count == 0


def test_stockpile_boundary_faces_touch_a_segment(stockpile_mesh):
    """Test that each rejected face borders the segment that rejected it."""
    adjacency = build_adjacency(stockpile_mesh)
    labels = segment_mesh(stockpile_mesh, adjacency)
    _, degenerate = stockpile_mesh.face_normals()
    rejected = [f for f in boundary_faces(labels) if not degenerate[f]]
    assert rejected
    for face in rejected:
        assert np.any(labels.assignments[adjacency.neighbors(face)] >= 0)


def test_filter_drops_tiny_segment():
    """Test that segments of 100 and 2 faces with a minimum of 10 leave one segment."""
    labels = SegmentLabels(np.array([0] * 100 + [1] * 2), 2)
    filtered = filter_segments(labels, 10)
    assert filtered.segment_count == 1
    assert filtered.boundary_count == 2
