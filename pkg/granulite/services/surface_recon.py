"""
Poisson surface reconstruction on a regular grid.

This module provides functionality for:
1. PCA normal estimation for clouds without normals
2. Trilinear splatting of oriented points into a vector field
3. Solving the Dirichlet Poisson problem with conjugate gradients
4. Marching-cubes isosurface extraction and snapping onto the samples
5. The full cloud-to-mesh reconstruction pipeline
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import ndimage, sparse
from scipy.spatial import cKDTree
from skimage import measure

from granulite.errors import (
    DegenerateNeighborhood,
    EmptySurface,
    InsufficientPoints,
    NoConvergence,
)
from granulite.schemas.config import ReconstructionParams
from granulite.schemas.summary import ReconstructionReport
from granulite.services.geometry import PointCloud, TriMesh

logger = logging.getLogger(__name__)

MIN_RECONSTRUCTION_POINTS = 50
RANK_TOL = 1e-12
SNAP_TOL = 1e-9
ISO_NUDGE = 1e-9
SAMPLE_REACH_CELLS = 3.0


@dataclass(frozen=True)
class GridLattice:
    """Node lattice shared by scalar and vector grids: (nx+1)(ny+1)(nz+1) nodes."""
    origin: Tuple[float, float, float]
    spacing: float
    cells: Tuple[int, int, int]

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")
        if min(self.cells) < 2:
            raise ValueError(f"grid needs at least 2 cells per axis, got {self.cells}")

    @classmethod
    def enclosing(cls, points: np.ndarray, resolution: int, padding: int) -> "GridLattice":
        """
        Lattice over the points' bounding box, `resolution` cells along the
        longest axis, expanded by `padding` cells on every side.
        """
        points = np.asarray(points, dtype=np.float64)
        lo, hi = points.min(axis=0), points.max(axis=0)
        extent = hi - lo
        longest = float(extent.max())
        h = longest / resolution if longest > 0 else 1.0 / resolution
        inner = np.ceil(extent / h - SNAP_TOL).clip(min=0).astype(int)
        cells = tuple(int(max(c + 2 * padding, 2)) for c in inner)
        origin = tuple(float(x) for x in lo - padding * h)
        return cls(origin=origin, spacing=h, cells=cells)

    @property
    def node_shape(self) -> Tuple[int, int, int]:
        return tuple(c + 1 for c in self.cells)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.node_shape))

    def to_grid(self, points: np.ndarray) -> np.ndarray:
        """World coordinates to fractional node indices."""
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.origin)) / self.spacing

    def node_positions(self) -> np.ndarray:
        axes = [self.origin[a] + self.spacing * np.arange(n) for a, n in enumerate(self.node_shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class SolverInfo:
    iterations: int
    relative_residual: float
    converged: bool
    offset: float = 0.0


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """One value per lattice node."""
    lattice: GridLattice
    values: np.ndarray
    solver: Optional[SolverInfo] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.lattice.node_shape:
            raise ValueError(f"values shape {values.shape} does not match lattice {self.lattice.node_shape}")
        object.__setattr__(self, "values", values)

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Trilinear interpolation at world positions."""
        coords = self.lattice.to_grid(points).T
        return ndimage.map_coordinates(self.values, coords, order=1, mode="nearest")


@dataclass(frozen=True, eq=False)
class VectorGrid:
    """A 3-vector per lattice node."""
    lattice: GridLattice
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.lattice.node_shape + (3,):
            raise ValueError(f"values shape {values.shape} does not match lattice {self.lattice.node_shape}")
        object.__setattr__(self, "values", values)


def estimate_normals(
    cloud: PointCloud,
    k: int = 10,
    reference: Optional[np.ndarray] = None,
    workers: int = 1,
) -> PointCloud:
    """
    Unit normals from PCA over each point and its k nearest neighbors.

    Neighbor ties are broken by point index. Normals are flipped so that
    n . (p - reference) >= 0, where the reference defaults to the centroid.

    Raises:
        InsufficientPoints: fewer than k + 1 points
        DegenerateNeighborhood: a neighborhood is collinear
    """
    if k < 3:
        raise ValueError(f"k must be at least 3, got {k}")
    positions = cloud.positions
    n = len(positions)
    if n < k + 1:
        raise InsufficientPoints(f"normal estimation with k={k} needs at least {k + 1} points, got {n}")

    tree = cKDTree(positions)
    dist, idx = tree.query(positions, k=min(n, k + 5), workers=workers)
    order = np.lexsort((idx, dist))
    idx = np.take_along_axis(idx, order, axis=1)[:, :k + 1]

    neighborhoods = positions[idx]
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    flat = eigenvalues[:, 1] <= RANK_TOL * eigenvalues[:, 2]
    if np.any(flat):
        raise DegenerateNeighborhood(int(np.flatnonzero(flat)[0]))

    normals = eigenvectors[:, :, 0]
    ref = positions.mean(axis=0) if reference is None else np.asarray(reference, dtype=np.float64)
    flip = np.einsum("ni,ni->n", normals, positions - ref) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    logger.info("Estimated %d normals from %d-point neighborhoods", n, k + 1)
    return cloud.with_normals(normals)


def splat_vector_field(
    cloud: PointCloud,
    resolution: int,
    padding: int,
    lattice: Optional[GridLattice] = None,
    smoothing_sigma: float = 0.0,
) -> VectorGrid:
    """
    Distribute every normal to its 8 surrounding nodes with trilinear weights.

    Coordinates within 1e-9 of a node snap onto it. With `smoothing_sigma`
    > 0 each component is Gaussian-filtered (sigma in cells).
    """
    if len(cloud) == 0:
        raise InsufficientPoints("cannot splat an empty point cloud")
    if cloud.normals is None:
        raise ValueError("splatting needs a cloud with normals")
    lattice = lattice or GridLattice.enclosing(cloud.positions, resolution, padding)

    g = lattice.to_grid(cloud.positions)
    nearest = np.round(g)
    g = np.where(np.abs(g - nearest) < SNAP_TOL, nearest, g)
    upper = np.asarray(lattice.cells) - 1
    base = np.clip(np.floor(g).astype(np.int64), 0, upper)
    frac = g - base

    values = np.zeros(lattice.node_shape + (3,))
    for corner in np.ndindex(2, 2, 2):
        offset = np.asarray(corner)
        weights = np.prod(np.where(offset == 1, frac, 1.0 - frac), axis=1)
        nodes = base + offset
        np.add.at(values, (nodes[:, 0], nodes[:, 1], nodes[:, 2]), weights[:, None] * cloud.normals)

    if smoothing_sigma > 0:
        for axis in range(3):
            values[..., axis] = ndimage.gaussian_filter(values[..., axis], smoothing_sigma, mode="constant")
    return VectorGrid(lattice, values)


def divergence(field: VectorGrid) -> ScalarGrid:
    """Central-difference divergence on interior nodes; zero on the boundary."""
    V = field.values
    h = field.lattice.spacing
    div = np.zeros(field.lattice.node_shape)
    div[1:-1, 1:-1, 1:-1] = (
        (V[2:, 1:-1, 1:-1, 0] - V[:-2, 1:-1, 1:-1, 0])
        + (V[1:-1, 2:, 1:-1, 1] - V[1:-1, :-2, 1:-1, 1])
        + (V[1:-1, 1:-1, 2:, 2] - V[1:-1, 1:-1, :-2, 2])
    ) / (2.0 * h)
    return ScalarGrid(field.lattice, div)


def _second_difference(n: int) -> sparse.csr_matrix:
    return sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="csr")


def laplacian_matrix(lattice: GridLattice) -> sparse.csr_matrix:
    """7-point Laplacian over interior nodes (C order), zero Dirichlet boundary."""
    nx, ny, nz = (c - 1 for c in lattice.cells)
    Ix, Iy, Iz = (sparse.identity(n, format="csr") for n in (nx, ny, nz))
    L = (
        sparse.kron(sparse.kron(_second_difference(nx), Iy), Iz)
        + sparse.kron(sparse.kron(Ix, _second_difference(ny)), Iz)
        + sparse.kron(sparse.kron(Ix, Iy), _second_difference(nz))
    )
    return (L / lattice.spacing ** 2).tocsr()


def laplacian(grid: ScalarGrid) -> ScalarGrid:
    """Apply the 7-point stencil at interior nodes using the grid's own boundary values."""
    v = grid.values
    out = np.zeros_like(v)
    out[1:-1, 1:-1, 1:-1] = (
        v[2:, 1:-1, 1:-1] + v[:-2, 1:-1, 1:-1]
        + v[1:-1, 2:, 1:-1] + v[1:-1, :-2, 1:-1]
        + v[1:-1, 1:-1, 2:] + v[1:-1, 1:-1, :-2]
        - 6.0 * v[1:-1, 1:-1, 1:-1]
    ) / grid.lattice.spacing ** 2
    return ScalarGrid(grid.lattice, out)


def conjugate_gradient(
    A: sparse.spmatrix,
    b: np.ndarray,
    tolerance: float,
    max_iter: int,
    jacobi: bool = False,
) -> Tuple[np.ndarray, SolverInfo]:
    """
    Solve the SPD system A x = b from x = 0.

    Stops when the true relative residual is at most `tolerance`. The best
    iterate seen is returned together with its true relative residual.
    """
    b_norm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return x, SolverInfo(0, 0.0, True)
    inv_diag = 1.0 / A.diagonal() if jacobi else None

    def precondition(r):
        return inv_diag * r if jacobi else r

    r = b.copy()
    z = precondition(r)
    p = z.copy()
    rz = r @ z
    best_x, best_res = x.copy(), 1.0
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / b_norm
        if res <= tolerance:
            # recurrence residual drifts; confirm on the true residual and restart if needed
            r = b - A @ x
            res = np.linalg.norm(r) / b_norm
            if res <= tolerance:
                return x, SolverInfo(iterations, float(res), True)
            z = precondition(r)
            p = z.copy()
            rz = r @ z
            continue
        if res < best_res:
            best_x, best_res = x.copy(), res
        z = precondition(r)
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next

    true_res = float(np.linalg.norm(b - A @ best_x) / b_norm)
    return best_x, SolverInfo(iterations, true_res, False)


def solve_laplacian(
    rhs: ScalarGrid,
    tolerance: float = 1e-8,
    max_iter: Optional[int] = None,
    jacobi: bool = False,
    strict: bool = False,
) -> ScalarGrid:
    """
    Solve lap(x) = rhs on interior nodes with x = 0 on the boundary.

    The interior of `rhs` is used; its boundary values are ignored. The result
    carries a SolverInfo. On non-convergence the best iterate is returned
    with converged=False unless `strict` is set.

    Raises:
        NoConvergence: only when `strict` and the iteration limit is reached
    """
    lattice = rhs.lattice
    interior = rhs.values[1:-1, 1:-1, 1:-1]
    unknowns = interior.size
    max_iter = max_iter or 10 * unknowns
    # -lap is SPD
    A = -laplacian_matrix(lattice)
    x, info = conjugate_gradient(A, -interior.ravel(), tolerance, max_iter, jacobi)
    if not info.converged:
        if strict:
            raise NoConvergence(info.iterations, info.relative_residual)
        logger.warning(
            "CG stopped after %d iterations at relative residual %.3e (tolerance %.1e)",
            info.iterations, info.relative_residual, tolerance,
        )
    values = np.zeros(lattice.node_shape)
    values[1:-1, 1:-1, 1:-1] = x.reshape(interior.shape)
    logger.debug("CG: %d unknowns, %d iterations, residual %.3e", unknowns, info.iterations, info.relative_residual)
    return ScalarGrid(lattice, values, info)


def solve_poisson(
    field: VectorGrid,
    tolerance: float = 1e-8,
    max_iter: Optional[int] = None,
    jacobi: bool = False,
    strict: bool = False,
) -> ScalarGrid:
    """
    Solve lap(chi) = div(V) with zero Dirichlet boundary, then subtract the
    mean of the interior values. SolverInfo.offset records the subtracted mean.
    """
    solution = solve_laplacian(divergence(field), tolerance, max_iter, jacobi, strict)
    offset = float(solution.values[1:-1, 1:-1, 1:-1].mean())
    centered = solution.values - offset
    info = solution.solver
    return ScalarGrid(
        field.lattice,
        centered,
        SolverInfo(info.iterations, info.relative_residual, info.converged, offset),
    )


def _face_orientation_votes(grid: ScalarGrid, vertices: np.ndarray, faces: np.ndarray) -> Tuple[int, int]:
    v0, v1, v2 = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, norms, out=np.zeros_like(normals), where=norms > 0)
    centroids = (v0 + v1 + v2) / 3.0
    step = 0.25 * grid.lattice.spacing
    ahead = grid.sample(centroids + step * normals)
    behind = grid.sample(centroids - step * normals)
    return int(np.sum(ahead < behind)), int(np.sum(ahead > behind))


def extract_isosurface(grid: ScalarGrid, iso: float = 0.0) -> TriMesh:
    """
    Marching-cubes mesh of the level set {grid == iso}.

    Node values exactly at the level are nudged upward by 1e-9 of the value
    range, coincident vertices are welded and collapsed faces dropped. Faces
    are oriented so normals point toward decreasing values.

    Raises:
        EmptySurface: the level is not crossed by the grid values
    """
    values = grid.values
    vmin, vmax = float(values.min()), float(values.max())
    span = vmax - vmin
    if span == 0.0:
        raise EmptySurface(f"grid is constant ({vmin}); level {iso} is not crossed")
    values = np.where(values == iso, iso + ISO_NUDGE * span, values)
    if np.all(values > iso) or np.all(values < iso):
        raise EmptySurface(f"level {iso} lies outside the grid range [{vmin}, {vmax}]")

    h = grid.lattice.spacing
    vertices, faces, _, _ = measure.marching_cubes(
        values, level=iso, spacing=(h, h, h), method="lewiner", allow_degenerate=False
    )
    vertices = vertices.astype(np.float64) + np.asarray(grid.lattice.origin)

    vertices, inverse = np.unique(vertices, axis=0, return_inverse=True)
    faces = inverse.reshape(-1)[faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 2] != faces[:, 0])
    faces = faces[keep]
    used, compact = np.unique(faces, return_inverse=True)
    vertices, faces = vertices[used], compact.reshape(faces.shape)
    if len(faces) == 0:
        raise EmptySurface(f"level {iso} produced no faces")

    field = ScalarGrid(grid.lattice, values)
    correct, wrong = _face_orientation_votes(field, vertices, faces)
    if wrong > correct:
        faces = faces[:, [0, 2, 1]]
    logger.debug("Marching cubes: %d vertices, %d faces (orientation votes %d/%d)",
                 len(vertices), len(faces), max(correct, wrong), correct + wrong)
    return TriMesh(vertices, faces)


def snap_to_samples(
    mesh: TriMesh,
    cloud: PointCloud,
    reach: float,
    workers: int = 1,
) -> Tuple[TriMesh, int]:
    """
    Move each vertex onto the tangent plane of its nearest oriented sample.

    Vertices whose nearest sample is farther than `reach` stay put. Face
    connectivity is unchanged; the Poisson fillets that round concave creases
    collapse back onto the sampled surfaces on either side.

    Returns:
        The moved mesh and the number of vertices that moved
    """
    if cloud.normals is None:
        raise ValueError("snapping needs an oriented cloud")
    tree = cKDTree(cloud.positions)
    dist, nearest = tree.query(mesh.vertices, workers=workers)
    within = dist <= reach
    anchors = cloud.positions[nearest[within]]
    normals = cloud.normals[nearest[within]]
    vertices = mesh.vertices.copy()
    offsets = np.einsum("ni,ni->n", vertices[within] - anchors, normals)
    vertices[within] -= offsets[:, None] * normals
    return TriMesh(vertices, mesh.faces), int(np.count_nonzero(within))


def reconstruct_surface_detailed(
    cloud: PointCloud,
    params: Optional[ReconstructionParams] = None,
    reference: Optional[np.ndarray] = None,
    workers: int = 1,
    grid_hook: Optional[Callable[[ScalarGrid], None]] = None,
) -> Tuple[TriMesh, ReconstructionReport]:
    """
    Oriented cloud to watertight mesh.

    Normals are estimated when absent. The indicator is the negated Poisson
    solution, positive inside; the surface is its level at the mean value over
    the input samples. With `snap_to_samples` the extracted vertices are moved
    onto the tangent planes of their nearest samples. `grid_hook` receives the
    shifted indicator, whose zero level is the surface, before extraction.
    """
    params = params or ReconstructionParams()
    if len(cloud) < MIN_RECONSTRUCTION_POINTS:
        raise InsufficientPoints(
            f"reconstruction needs at least {MIN_RECONSTRUCTION_POINTS} points, got {len(cloud)}"
        )
    estimated = cloud.normals is None
    if estimated:
        cloud = estimate_normals(cloud, params.normal_neighbors, reference, workers)

    lattice = GridLattice.enclosing(cloud.positions, params.grid_res, params.padding)
    logger.info("Reconstructing %d points on a %s grid (h=%.4g)", len(cloud), lattice.cells, lattice.spacing)
    field = splat_vector_field(cloud, params.grid_res, params.padding, lattice, params.smoothing_sigma)
    chi = solve_poisson(field, params.cg_tol, params.cg_max_iter, params.jacobi)

    indicator = ScalarGrid(lattice, -chi.values)
    iso = float(np.mean(indicator.sample(cloud.positions)))
    shifted = ScalarGrid(lattice, indicator.values - iso)
    if grid_hook is not None:
        grid_hook(shifted)
    mesh = extract_isosurface(shifted, 0.0)
    snapped = 0
    if params.snap_to_samples:
        mesh, snapped = snap_to_samples(mesh, cloud, SAMPLE_REACH_CELLS * lattice.spacing, workers)

    info = chi.solver
    report = ReconstructionReport(
        grid_shape=lattice.cells,
        spacing=lattice.spacing,
        normals_estimated=estimated,
        cg_iterations=info.iterations,
        relative_residual=info.relative_residual,
        converged=info.converged,
        iso_value=iso,
        snapped_vertices=snapped,
        vertex_count=mesh.n_vertices,
        face_count=mesh.n_faces,
    )
    logger.info("Reconstructed mesh: %d vertices, %d faces, %d CG iterations",
                mesh.n_vertices, mesh.n_faces, info.iterations)
    return mesh, report


def reconstruct_surface(
    cloud: PointCloud,
    params: Optional[ReconstructionParams] = None,
    reference: Optional[np.ndarray] = None,
    workers: int = 1,
) -> TriMesh:
    return reconstruct_surface_detailed(cloud, params, reference, workers)[0]
