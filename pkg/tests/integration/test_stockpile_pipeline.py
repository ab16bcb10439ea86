"""
Integration tests for the full reconstruction and segmentation chain on the
synthetic ten-ball stockpile.
"""
import numpy as np
import pytest

from granulite.schemas.config import PipelineConfig, ReconstructionParams
from granulite.services import fixtures
from granulite.services.geometry import build_adjacency, validate_mesh
from granulite.services.morphometrics import all_segment_metrics, gradation_report
from granulite.services.segmentation import filter_segments, segment_mesh
from granulite.services.surface_recon import GridLattice, ScalarGrid, reconstruct_surface, solve_laplacian

pytestmark = [pytest.mark.integration, pytest.mark.slow]


@pytest.fixture(scope="module")
def reconstructed_stockpile():
    cloud = fixtures.stockpile_cloud(40000)
    return reconstruct_surface(cloud, ReconstructionParams(grid_res=64))


def test_reconstruction_is_a_valid_closed_mesh(reconstructed_stockpile):
    """Test that the reconstructed stockpile has no defects."""
    report = validate_mesh(reconstructed_stockpile)
    assert report.defect_count == 0
    assert report.is_closed


def test_segments_recover_every_ball(reconstructed_stockpile):
    """Test that segmentation of the reconstructed pile finds the ten balls."""
    mesh = reconstructed_stockpile
    labels = filter_segments(segment_mesh(mesh, build_adjacency(mesh)), 20)
    assert labels.segment_count == 10
    matches = fixtures.match_segments_to_truth(labels, fixtures.truth_labels(mesh))
    assert sorted(m.ball for m in matches) == list(range(10))
    assert all(m.agreement >= 0.9 for m in matches)


def test_default_settings_recover_every_ball(reconstructed_stockpile):
    """Test that the packaged threshold and minimum segment size alone give the ten balls."""
    mesh = reconstructed_stockpile
    defaults = PipelineConfig()
    labels = filter_segments(segment_mesh(mesh, build_adjacency(mesh), defaults.criterion()), defaults.min_faces)
    assert labels.segment_count == 10


def test_reconstructed_seam_is_sharp():
    """Test that a reconstructed two-ball union splits along its concave seam."""
    cloud = fixtures.stockpile_cloud(12000, fixtures.TWO_BALLS)
    mesh = reconstruct_surface(cloud, ReconstructionParams(grid_res=64))
    labels = filter_segments(segment_mesh(mesh, build_adjacency(mesh)), PipelineConfig().min_faces)
    assert labels.segment_count == 2
    matches = fixtures.match_segments_to_truth(labels, fixtures.truth_labels(mesh, fixtures.TWO_BALLS))
    assert sorted(m.ball for m in matches) == [0, 1]
    assert all(m.agreement >= 0.9 for m in matches)


def test_metrics_follow_ball_sizes(reconstructed_stockpile):
    """Test that no particle exceeds its ball and the base ball measures largest."""
    mesh = reconstructed_stockpile
    labels = filter_segments(segment_mesh(mesh, build_adjacency(mesh)), 20)
    metrics = all_segment_metrics(mesh, labels, threads=2)
    assert len(metrics) == 10
    radii = {m.segment_id: fixtures.STOCKPILE_BALLS[m.ball].radius
             for m in fixtures.match_segments_to_truth(labels, fixtures.truth_labels(mesh))}
    for particle in metrics:
        assert particle.d1 <= 2.2 * radii[particle.segment_id]
    largest = max(metrics, key=lambda m: m.d1)
    assert radii[largest.segment_id] == max(b.radius for b in fixtures.STOCKPILE_BALLS)

    sizes = sorted(2.0 * b.radius for b in fixtures.STOCKPILE_BALLS)
    report = gradation_report(metrics, [sizes[-1] * 2.0])
    assert report.rows[-1].percent_finer == 100.0


def test_manufactured_solution_at_full_resolution():
    """Test the Poisson solver accuracy on a 64-cell manufactured problem."""
    n = 64
    lattice = GridLattice(origin=(0.0, 0.0, 0.0), spacing=1.0 / n, cells=(n, n, n))
    x = lattice.node_positions()
    exact = np.prod(np.sin(np.pi * x), axis=-1)
    solution = solve_laplacian(ScalarGrid(lattice, -3.0 * np.pi ** 2 * exact), tolerance=1e-10, jacobi=True)
    assert solution.solver.converged
    assert np.max(np.abs(solution.values - exact)) < 1e-3
