"""
Bundle adjustment by Levenberg-Marquardt with Schur-complement elimination.

Each camera is parameterized by a left rotation increment and its center;
intrinsics stay fixed. Camera 0 is frozen and camera 1 moves on the sphere
of constant radius around camera 0, which removes the similarity gauge
(pose and scale) from the normal equations.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation

from granulite.errors import (
    DegenerateBaseline,
    InsufficientObservations,
    PointAtInfinity,
    SingularNormalEquations,
)
from granulite.schemas.config import BundleAdjustmentOptions
from granulite.schemas.summary import ConvergenceReport
from granulite.services.sfm import (
    BASELINE_TOL,
    DEPTH_TOL,
    CameraView,
    Observation,
    SceneEstimate,
    observation_arrays,
    reprojection_error,
    validate_observations,
)

logger = logging.getLogger(__name__)

MIN_POINTS_PER_CAMERA = 6
MIN_CAMERAS_PER_POINT = 2
DAMPING_FLOOR = 1e-9
MIN_LAMBDA = 1e-15
INTRINSICS_RTOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices [v]x for a (..., 3) array."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _camera_frame(K, R, C, X) -> Tuple[np.ndarray, np.ndarray]:
    Y = np.einsum("nij,nj->ni", R, X - C)
    u = np.einsum("nij,nj->ni", K, Y)
    return Y, u


def _jacobians(K, R, Y, u) -> Tuple[np.ndarray, np.ndarray]:
    inv_w = 1.0 / u[:, 2]
    dp_du = np.zeros((len(u), 2, 3))
    dp_du[:, 0, 0] = inv_w
    dp_du[:, 1, 1] = inv_w
    dp_du[:, 0, 2] = -u[:, 0] * inv_w ** 2
    dp_du[:, 1, 2] = -u[:, 1] * inv_w ** 2
    A = dp_du @ K
    AR = A @ R
    J_camera = np.concatenate([A @ -skew(Y), -AR], axis=2)
    return J_camera, AR


def observation_residual(K, R, C, X, pixel) -> np.ndarray:
    """Projected minus observed pixel for a camera (K, R, center C) and point X."""
    _, u = _camera_frame(np.asarray(K)[None], np.asarray(R)[None], np.asarray(C)[None], np.asarray(X)[None])
    if abs(u[0, 2]) <= DEPTH_TOL:
        raise PointAtInfinity()
    return u[0, :2] / u[0, 2] - np.asarray(pixel, dtype=np.float64)


def observation_jacobian(K, R, C, X) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic derivatives of one residual.

    Returns the 2x6 block with respect to (w, C), where the rotation is
    perturbed as R -> exp([w]x) R, and the 2x3 block with respect to X.
    """
    K, R = np.asarray(K, dtype=np.float64)[None], np.asarray(R, dtype=np.float64)[None]
    Y, u = _camera_frame(K, R, np.asarray(C, dtype=np.float64)[None], np.asarray(X, dtype=np.float64)[None])
    J_camera, J_point = _jacobians(K, R, Y, u)
    return J_camera[0], J_point[0]


@dataclass
class _State:
    rotations: np.ndarray
    centers: np.ndarray
    points: np.ndarray


@dataclass
class _Linearization:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    g_camera: np.ndarray
    g_point: np.ndarray


class BundleAdjuster:
    """Levenberg-Marquardt refinement of one scene against its observations."""

    def __init__(
        self,
        initial: SceneEstimate,
        observations: Sequence[Observation],
        options: Optional[BundleAdjustmentOptions] = None,
    ):
        self.options = options or BundleAdjustmentOptions()
        self.initial = initial
        self.observations = list(observations)
        validate_observations(initial, self.observations)
        self.cam_ids, self.pt_ids, self.pixels = observation_arrays(self.observations)
        self.m, self.n = initial.n_cameras, initial.n_points
        self._check_coverage()

        intrinsics, rotations, centers = [], [], []
        for camera in initial.cameras:
            K, R, t = camera.decompose()
            intrinsics.append(K)
            rotations.append(R)
            centers.append(-R.T @ t)
        self.K = np.stack(intrinsics)
        if not np.allclose(self.K, self.K[0], rtol=INTRINSICS_RTOL, atol=0.0):
            logger.warning("Cameras have differing intrinsics; each camera keeps its own fixed K")
        self.start = _State(np.stack(rotations), np.stack(centers), np.array(initial.points))
        self.radius = float(np.linalg.norm(self.start.centers[1] - self.start.centers[0]))
        if self.radius <= BASELINE_TOL:
            raise DegenerateBaseline("cameras 0 and 1 coincide; the scale gauge is undefined")

    def _check_coverage(self) -> None:
        if self.m < 2:
            raise InsufficientObservations(f"bundle adjustment needs at least 2 cameras, got {self.m}")
        per_camera = np.bincount(self.cam_ids, minlength=self.m)
        per_point = np.bincount(self.pt_ids, minlength=self.n)
        if np.any(per_camera < MIN_POINTS_PER_CAMERA):
            i = int(np.argmin(per_camera))
            raise InsufficientObservations(
                f"camera {i} sees {per_camera[i]} points, at least {MIN_POINTS_PER_CAMERA} are required"
            )
        if np.any(per_point < MIN_CAMERAS_PER_POINT):
            j = int(np.argmin(per_point))
            raise InsufficientObservations(
                f"point {j} is seen by {per_point[j]} cameras, at least {MIN_CAMERAS_PER_POINT} are required"
            )

    def _residuals(self, state: _State):
        K = self.K[self.cam_ids]
        R = state.rotations[self.cam_ids]
        Y, u = _camera_frame(K, R, state.centers[self.cam_ids], state.points[self.pt_ids])
        far = np.abs(u[:, 2]) <= DEPTH_TOL
        if np.any(far):
            k = int(np.flatnonzero(far)[0])
            raise PointAtInfinity(int(self.cam_ids[k]), int(self.pt_ids[k]))
        return u[:, :2] / u[:, 2:3] - self.pixels, K, R, Y, u

    def cost(self, state: _State) -> float:
        residuals = self._residuals(state)[0]
        return float(np.sum(residuals * residuals))

    def _linearize(self, state: _State) -> _Linearization:
        r, K, R, Y, u = self._residuals(state)
        J_camera, J_point = _jacobians(K, R, Y, u)
        Jc_t = J_camera.transpose(0, 2, 1)
        Jp_t = J_point.transpose(0, 2, 1)

        U = np.zeros((self.m, 6, 6))
        np.add.at(U, self.cam_ids, Jc_t @ J_camera)
        V = np.zeros((self.n, 3, 3))
        np.add.at(V, self.pt_ids, Jp_t @ J_point)
        W = np.zeros((self.m, self.n, 6, 3))
        W[self.cam_ids, self.pt_ids] = Jc_t @ J_point
        g_camera = np.zeros((self.m, 6))
        np.add.at(g_camera, self.cam_ids, np.einsum("nij,nj->ni", Jc_t, r))
        g_point = np.zeros((self.n, 3))
        np.add.at(g_point, self.pt_ids, np.einsum("nij,nj->ni", Jp_t, r))
        return _Linearization(U, V, W, g_camera, g_point)

    def _gauge_basis(self, state: _State) -> np.ndarray:
        """Map reduced camera parameters to the full 6m vector."""
        m = self.m
        G = np.zeros((6 * m, 5 + 6 * (m - 2)))
        G[6:9, 0:3] = np.eye(3)
        G[9:12, 3:5] = linalg.null_space((state.centers[1] - state.centers[0])[None, :])
        for i in range(2, m):
            col = 5 + 6 * (i - 2)
            G[6 * i:6 * i + 6, col:col + 6] = np.eye(6)
        return G

    @staticmethod
    def _damped(blocks: np.ndarray, lam: float) -> np.ndarray:
        size = blocks.shape[-1]
        idx = np.arange(size)
        damped = blocks.copy()
        damped[:, idx, idx] += lam * np.maximum(blocks[:, idx, idx], DAMPING_FLOOR)
        return damped

    def _solve(self, lin: _Linearization, G: np.ndarray, lam: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Damped Schur-complement step, or None when the system is singular."""
        m, n = self.m, self.n
        try:
            V_inv = np.linalg.inv(self._damped(lin.V, lam))
        except np.linalg.LinAlgError:
            return None
        W_flat = lin.W.transpose(0, 2, 1, 3).reshape(6 * m, 3 * n)
        WV_inv = np.einsum("anij,njk->anik", lin.W, V_inv).transpose(0, 2, 1, 3).reshape(6 * m, 3 * n)
        S = linalg.block_diag(*self._damped(lin.U, lam)) - WV_inv @ W_flat.T
        rhs = -lin.g_camera.ravel() + WV_inv @ lin.g_point.ravel()
        try:
            factor = linalg.cho_factor(G.T @ S @ G)
            reduced = linalg.cho_solve(factor, G.T @ rhs)
        except (np.linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(reduced)):
            return None
        d_camera = G @ reduced
        point_rhs = -lin.g_point - (W_flat.T @ d_camera).reshape(n, 3)
        d_point = np.einsum("nij,nj->ni", V_inv, point_rhs)
        return d_camera.reshape(m, 6), d_point

    def _retract(self, state: _State, d_camera: np.ndarray, d_point: np.ndarray) -> _State:
        rotations = state.rotations.copy()
        rotations[1:] = Rotation.from_rotvec(d_camera[1:, :3]).as_matrix() @ rotations[1:]
        centers = state.centers.copy()
        centers[2:] += d_camera[2:, 3:]
        offset = centers[1] + d_camera[1, 3:] - centers[0]
        centers[1] = centers[0] + self.radius * offset / np.linalg.norm(offset)
        return _State(rotations, centers, state.points + d_point)

    def _estimate(self, state: _State) -> SceneEstimate:
        cameras = [
            CameraView.from_krt(K, R, -R @ C)
            for K, R, C in zip(self.K, state.rotations, state.centers)
        ]
        return SceneEstimate(cameras, state.points)

    def run(self) -> Tuple[SceneEstimate, ConvergenceReport]:
        opts = self.options
        state = self.start
        cost = self.cost(state)
        history: List[float] = [cost]
        lam = opts.lambda_init
        iterations = accepted = 0
        termination: Optional[str] = "cost_floor" if cost <= opts.cost_floor else None
        logger.info(
            "Bundle adjustment: %d cameras, %d points, %d observations, initial cost %.6e",
            self.m, self.n, len(self.observations), cost,
        )

        while termination is None:
            if iterations >= opts.max_iterations:
                termination = "max_iterations"
                break
            iterations += 1
            lin = self._linearize(state)
            G = self._gauge_basis(state)
            gradient = np.concatenate([G.T @ lin.g_camera.ravel(), lin.g_point.ravel()])
            if np.max(np.abs(gradient)) < opts.gtol:
                termination = "gtol"
                break

            candidate, new_cost = None, np.inf
            while True:
                step = self._solve(lin, G, lam)
                if step is None:
                    lam *= opts.lambda_factor
                    if lam > opts.lambda_max:
                        raise SingularNormalEquations(
                            f"damped normal equations are singular at lambda {lam:.3e} (iteration {iterations})"
                        )
                    continue
                candidate = self._retract(state, *step)
                try:
                    new_cost = self.cost(candidate)
                except PointAtInfinity:
                    new_cost = np.inf
                if new_cost < cost:
                    break
                lam *= opts.lambda_factor
                if lam > opts.lambda_max:
                    candidate = None
                    break

            if candidate is None:
                # no damping yields a decrease: the cost has stalled
                termination = "ftol"
                break
            decrease = (cost - new_cost) / cost
            state, cost = candidate, new_cost
            accepted += 1
            history.append(cost)
            lam = max(lam / opts.lambda_factor, MIN_LAMBDA)
            logger.debug("LM iteration %d: cost %.6e, lambda %.3e, relative decrease %.3e",
                         iterations, cost, lam, decrease)
            if cost <= opts.cost_floor:
                termination = "cost_floor"
            elif decrease < opts.ftol:
                termination = "ftol"

        initial_cost = reprojection_error(self.initial, self.observations)
        result = self._estimate(state) if accepted else self.initial
        final_cost = reprojection_error(result, self.observations) if accepted else initial_cost
        if final_cost > initial_cost:
            result, final_cost = self.initial, initial_cost
        report = ConvergenceReport(
            iterations=iterations,
            accepted_steps=accepted,
            initial_cost=initial_cost,
            final_cost=final_cost,
            final_rmse=float(np.sqrt(final_cost / len(self.observations))),
            final_lambda=lam,
            termination=termination,
            cost_history=history,
        )
        logger.info(
            "Bundle adjustment finished (%s) after %d iterations: cost %.6e -> %.6e, RMSE %.3e px",
            termination, iterations, initial_cost, final_cost, report.final_rmse,
        )
        return result, report


def bundle_adjust(
    initial: SceneEstimate,
    observations: Sequence[Observation],
    options: Optional[BundleAdjustmentOptions] = None,
) -> Tuple[SceneEstimate, ConvergenceReport]:
    """
    Minimize the total reprojection error over cameras and points.

    Raises:
        InvalidObservations: ids out of range or repeated pairs
        InsufficientObservations: a camera sees < 6 points or a point is seen by < 2 cameras
        DegenerateBaseline: cameras 0 and 1 share a center
        SingularNormalEquations: the solve fails even at the maximum damping
    """
    return BundleAdjuster(initial, observations, options).run()
