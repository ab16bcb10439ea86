"""
Multi-view geometry utilities.

This module provides functionality for:
1. Pinhole projection with 3x4 projection matrices
2. Total reprojection error of a scene against pixel observations
3. Two-view linear (DLT) triangulation
4. Synthetic multi-view scenes with known ground truth
5. Similarity (Procrustes) alignment of point sets
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation

from granulite.errors import (
    DegenerateBaseline,
    InvalidCamera,
    InvalidObservations,
    PointAtInfinity,
)
from granulite.schemas.config import SceneSpec

logger = logging.getLogger(__name__)

DEPTH_TOL = 1e-12
FINITE_CAMERA_TOL = 1e-12
BASELINE_TOL = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class CameraView:
    """A finite projective camera given by its 3x4 matrix P."""
    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64, copy=True)
        if P.shape != (3, 4):
            raise InvalidCamera(f"projection matrix must be 3x4, got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise InvalidCamera("projection matrix has non-finite entries")
        if abs(np.linalg.det(P[:, :3])) <= FINITE_CAMERA_TOL:
            raise InvalidCamera("left 3x3 block is singular (camera at infinity)")
        object.__setattr__(self, "P", _frozen(P))

    @classmethod
    def from_krt(cls, K: np.ndarray, R: np.ndarray, t: np.ndarray) -> "CameraView":
        """Build P = K [R | t]."""
        Rt = np.hstack([np.asarray(R, dtype=np.float64), np.asarray(t, dtype=np.float64).reshape(3, 1)])
        return cls(np.asarray(K, dtype=np.float64) @ Rt)

    def decompose(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Split P into intrinsics, rotation and translation.

        Returns K (positive diagonal, K[2, 2] == 1), a proper rotation R and t
        such that P is a positive multiple of K [R | t].
        """
        M = self.P[:, :3]
        p4 = self.P[:, 3]
        if np.linalg.det(M) < 0:
            M, p4 = -M, -p4
        K, R = linalg.rq(M)
        signs = np.diag(np.sign(np.diag(K)))
        K, R = K @ signs, signs @ R
        t = np.linalg.solve(K, p4)
        return K / K[2, 2], R, t

    def center(self) -> np.ndarray:
        """World position of the camera center, the null vector of P."""
        return -np.linalg.solve(self.P[:, :3], self.P[:, 3])


@dataclass(frozen=True)
class Observation:
    """Pixel x_ij of point j seen in camera i."""
    camera_id: int
    point_id: int
    pixel: Tuple[float, float]


@dataclass(frozen=True, eq=False)
class SceneEstimate:
    """Cameras and 3D points of a multi-view reconstruction."""
    cameras: Tuple[CameraView, ...]
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        points = np.array(self.points, dtype=np.float64, copy=True)
        if points.size == 0:
            points = points.reshape(0, 3)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {points.shape}")
        object.__setattr__(self, "points", _frozen(points))

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def projection_stack(self) -> np.ndarray:
        return np.stack([camera.P for camera in self.cameras]) if self.cameras else np.zeros((0, 3, 4))

    def transformed(self, scale: float, rotation: np.ndarray, translation: np.ndarray) -> "SceneEstimate":
        """
        Apply X -> s R X + t to every point and compensate every camera.

        Projections, and therefore the reprojection error, are unchanged.
        """
        T = np.eye(4)
        T[:3, :3] = scale * np.asarray(rotation, dtype=np.float64)
        T[:3, 3] = translation
        T_inv = np.linalg.inv(T)
        cameras = [CameraView(camera.P @ T_inv) for camera in self.cameras]
        points = self.points @ T[:3, :3].T + T[:3, 3]
        return SceneEstimate(cameras, points)


def observation_arrays(observations: Sequence[Observation]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera ids, point ids and an (N, 2) pixel array, in input order."""
    cam_ids = np.fromiter((o.camera_id for o in observations), dtype=np.int64, count=len(observations))
    pt_ids = np.fromiter((o.point_id for o in observations), dtype=np.int64, count=len(observations))
    pixels = np.array([o.pixel for o in observations], dtype=np.float64).reshape(-1, 2)
    return cam_ids, pt_ids, pixels


def validate_observations(estimate: SceneEstimate, observations: Sequence[Observation]) -> None:
    """
    Check ids against the scene and pair uniqueness.

    Raises:
        InvalidObservations: unknown camera/point id or a repeated (camera, point) pair
    """
    cam_ids, pt_ids, _ = observation_arrays(observations)
    if cam_ids.size == 0:
        return
    bad_cam = (cam_ids < 0) | (cam_ids >= estimate.n_cameras)
    bad_pt = (pt_ids < 0) | (pt_ids >= estimate.n_points)
    if np.any(bad_cam | bad_pt):
        k = int(np.flatnonzero(bad_cam | bad_pt)[0])
        raise InvalidObservations(
            f"observation {k} references camera {cam_ids[k]} / point {pt_ids[k]} "
            f"outside {estimate.n_cameras} cameras / {estimate.n_points} points"
        )
    pairs = cam_ids * estimate.n_points + pt_ids
    unique, counts = np.unique(pairs, return_counts=True)
    if np.any(counts > 1):
        pair = unique[counts > 1][0]
        raise InvalidObservations(
            f"(camera {pair // estimate.n_points}, point {pair % estimate.n_points}) is observed more than once"
        )


def project(camera: CameraView, point) -> np.ndarray:
    """
    Project one 3D point to pixel coordinates (u/w, v/w).

    Raises:
        PointAtInfinity: the point lies on the principal plane (|w| <= 1e-12)
    """
    X = np.asarray(point, dtype=np.float64)
    h = camera.P[:, :3] @ X + camera.P[:, 3]
    if abs(h[2]) <= DEPTH_TOL:
        raise PointAtInfinity()
    return h[:2] / h[2]


def project_points(camera: CameraView, points: np.ndarray) -> np.ndarray:
    """Vectorized `project` for an (N, 3) array."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    h = points @ camera.P[:, :3].T + camera.P[:, 3]
    far = np.abs(h[:, 2]) <= DEPTH_TOL
    if np.any(far):
        raise PointAtInfinity(point_id=int(np.flatnonzero(far)[0]))
    return h[:, :2] / h[:, 2:3]


def reprojection_residuals(estimate: SceneEstimate, observations: Sequence[Observation]) -> np.ndarray:
    """Projected minus observed pixel, one row per observation in input order."""
    validate_observations(estimate, observations)
    cam_ids, pt_ids, pixels = observation_arrays(observations)
    if cam_ids.size == 0:
        return np.zeros((0, 2))
    Ps = estimate.projection_stack()
    h = np.einsum("nij,nj->ni", Ps[cam_ids, :, :3], estimate.points[pt_ids]) + Ps[cam_ids, :, 3]
    far = np.abs(h[:, 2]) <= DEPTH_TOL
    if np.any(far):
        k = int(np.flatnonzero(far)[0])
        raise PointAtInfinity(int(cam_ids[k]), int(pt_ids[k]))
    return h[:, :2] / h[:, 2:3] - pixels


def reprojection_error(estimate: SceneEstimate, observations: Sequence[Observation]) -> float:
    """Total reprojection error: the sum of squared pixel distances (pixels^2)."""
    residuals = reprojection_residuals(estimate, observations)
    return float(np.sum(residuals * residuals))


def reprojection_rmse(estimate: SceneEstimate, observations: Sequence[Observation]) -> float:
    """Root mean squared pixel distance per observation."""
    if not observations:
        return 0.0
    return float(np.sqrt(reprojection_error(estimate, observations) / len(observations)))


def triangulate(view_a: CameraView, view_b: CameraView, pixel_a, pixel_b) -> np.ndarray:
    """
    Linear two-view triangulation.

    Each view contributes the rows x*P3 - P1 and y*P3 - P2; rows are scaled to
    unit norm and the homogeneous point is the right singular vector of the
    smallest singular value.

    Raises:
        DegenerateBaseline: the camera centers coincide
        PointAtInfinity: the solution has a vanishing homogeneous coordinate
    """
    baseline = np.linalg.norm(view_a.center() - view_b.center())
    if baseline <= BASELINE_TOL:
        raise DegenerateBaseline(f"camera centers coincide (baseline {baseline:.3e})")

    rows = []
    for camera, pixel in ((view_a, pixel_a), (view_b, pixel_b)):
        x, y = float(pixel[0]), float(pixel[1])
        rows.append(x * camera.P[2] - camera.P[0])
        rows.append(y * camera.P[2] - camera.P[1])
    A = np.array(rows)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    X = Vt[-1]
    if abs(X[3]) <= DEPTH_TOL * np.linalg.norm(X[:3]):
        raise PointAtInfinity()
    return X[:3] / X[3]


def look_at(center: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Rotation whose rows are the camera x (right), y (down) and z (forward) axes."""
    z = np.asarray(target, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, (0.0, 1.0, 0.0))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def intrinsics(focal_length: float, principal_point: Sequence[float]) -> np.ndarray:
    return np.array([
        [focal_length, 0.0, principal_point[0]],
        [0.0, focal_length, principal_point[1]],
        [0.0, 0.0, 1.0],
    ])


def synth_scene(spec: Optional[SceneSpec] = None) -> Tuple[SceneEstimate, List[Observation]]:
    """
    Generate a ground-truth scene and its pixel observations.

    Points are uniform in a cube of half-width `extent`; cameras sit on a ring
    around the point centroid, cycling through `heights`, all looking at the
    centroid. A point is observed by a camera when its depth is positive.
    Gaussian pixel noise is drawn for every (camera, point) pair so the
    output depends only on the seed.
    """
    spec = spec or SceneSpec()
    rng = np.random.default_rng(spec.seed)
    points = rng.uniform(-spec.extent, spec.extent, size=(spec.n_points, 3))
    noise = rng.normal(0.0, 1.0, size=(spec.n_cameras, spec.n_points, 2)) * spec.noise_sigma
    centroid = points.mean(axis=0)
    K = intrinsics(spec.focal_length, spec.principal_point)

    cameras: List[CameraView] = []
    observations: List[Observation] = []
    for i in range(spec.n_cameras):
        angle = 2.0 * np.pi * i / spec.n_cameras
        height = spec.heights[i % len(spec.heights)]
        center = centroid + np.array([spec.ring_radius * np.cos(angle), spec.ring_radius * np.sin(angle), height])
        R = look_at(center, centroid)
        camera = CameraView.from_krt(K, R, -R @ center)
        cameras.append(camera)

        depth = (points - center) @ R[2]
        visible = np.flatnonzero(depth > DEPTH_TOL)
        pixels = project_points(camera, points[visible]) + noise[i, visible]
        observations.extend(
            Observation(i, int(j), (float(u), float(v))) for j, (u, v) in zip(visible, pixels)
        )

    logger.info(
        "Synthesized scene: %d cameras, %d points, %d observations (noise %.3g px)",
        spec.n_cameras, spec.n_points, len(observations), spec.noise_sigma,
    )
    return SceneEstimate(cameras, points), observations


def perturb_scene(estimate: SceneEstimate, relative: float = 0.01, seed: int = 0) -> SceneEstimate:
    """
    Jitter every camera pose and point while keeping the intrinsics.

    Rotations receive axis-angle noise of `relative` radians; centers and
    points move by `relative` times the point spread.
    """
    rng = np.random.default_rng(seed)
    spread = float(np.max(np.linalg.norm(estimate.points - estimate.points.mean(axis=0), axis=1)))
    cameras = []
    for camera in estimate.cameras:
        K, R, _ = camera.decompose()
        R = Rotation.from_rotvec(relative * rng.normal(size=3)).as_matrix() @ R
        C = camera.center() + relative * spread * rng.normal(size=3)
        cameras.append(CameraView.from_krt(K, R, -R @ C))
    points = estimate.points + relative * spread * rng.normal(size=estimate.points.shape)
    return SceneEstimate(cameras, points)


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def similarity_align(source: np.ndarray, target: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity mapping `source` onto `target` (Umeyama)."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ValueError("source and target must both be (N, 3) arrays of equal length")
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    ds, dt = source - mu_s, target - mu_t
    var_s = np.sum(ds * ds) / len(source)
    if var_s <= 0:
        raise ValueError("source points are all identical")
    U, sigma, Vt = np.linalg.svd(dt.T @ ds / len(source))
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    rotation = U @ D @ Vt
    scale = float(np.trace(np.diag(sigma) @ D) / var_s)
    return SimilarityTransform(scale, rotation, mu_t - scale * rotation @ mu_s)


def aligned_point_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Largest point distance after similarity alignment, relative to the truth's spread."""
    transform = similarity_align(estimate, truth)
    aligned = transform.apply(estimate)
    spread = np.max(np.linalg.norm(truth - truth.mean(axis=0), axis=1))
    return float(np.max(np.linalg.norm(aligned - truth, axis=1)) / spread)
