"""
Exception hierarchy for Granulite.

Every error raised by the library derives from GranuliteError. Errors that
describe bad input also derive from ValueError so callers can treat them
like any other invalid-argument failure.
"""
from typing import Optional, Tuple


class GranuliteError(Exception):
    """Base class for all library errors."""


# Geometry

class InvalidMesh(GranuliteError, ValueError):
    """Mesh fails index-range validation."""


class NonManifoldEdge(GranuliteError, ValueError):
    """An undirected edge is shared by more than two faces."""

    def __init__(self, edge: Tuple[int, int], face_count: int):
        self.edge = (int(edge[0]), int(edge[1]))
        self.face_count = int(face_count)
        super().__init__(f"edge {self.edge} is shared by {self.face_count} faces")


class DegenerateFace(GranuliteError, ValueError):
    """Triangle has (numerically) zero area."""

    def __init__(self, face_id: int):
        self.face_id = int(face_id)
        super().__init__(f"face {self.face_id} is degenerate")


class CoincidentCentroids(GranuliteError, ValueError):
    """Two faces have coincident centroids."""

    def __init__(self, from_face: int, to_face: int):
        self.faces = (int(from_face), int(to_face))
        super().__init__(f"faces {self.faces} have coincident centroids")


# Structure from motion

class InvalidCamera(GranuliteError, ValueError):
    """Projection matrix is malformed or describes an infinite camera."""


class InvalidObservations(GranuliteError, ValueError):
    """Observation set references unknown ids or repeats a pair."""


class PointAtInfinity(GranuliteError, ValueError):
    """Point lies on the principal plane of a camera."""

    def __init__(self, camera_id: Optional[int] = None, point_id: Optional[int] = None):
        self.camera_id = camera_id
        self.point_id = point_id
        super().__init__(f"point {point_id} projects to infinity in camera {camera_id}")


class DegenerateBaseline(GranuliteError, ValueError):
    """Two views share the same camera center."""


class InsufficientObservations(GranuliteError, ValueError):
    """Bundle adjustment is under-constrained."""


class SingularNormalEquations(GranuliteError, ArithmeticError):
    """Damped normal equations stay singular up to the maximum damping."""


# Surface reconstruction

class DegenerateNeighborhood(GranuliteError, ValueError):
    """Neighborhood covariance is rank deficient."""

    def __init__(self, point_id: int):
        self.point_id = int(point_id)
        super().__init__(f"neighborhood of point {self.point_id} is rank deficient")


class InsufficientPoints(GranuliteError, ValueError):
    """Point cloud is too small for the requested operation."""


class NoConvergence(GranuliteError, ArithmeticError):
    """Iterative solver reached its iteration limit."""

    def __init__(self, iterations: int, relative_residual: float):
        self.iterations = int(iterations)
        self.relative_residual = float(relative_residual)
        super().__init__(
            f"no convergence after {self.iterations} iterations "
            f"(relative residual {self.relative_residual:.3e})"
        )


class EmptySurface(GranuliteError, ValueError):
    """The requested level set does not cross the grid."""


# Segmentation and morphometrics

class NonUnitInput(GranuliteError, ValueError):
    """A vector expected to be unit length is not."""


class DegenerateSegment(GranuliteError, ValueError):
    """Segment is too small or its centroids are collinear."""


class NonPositiveLength(GranuliteError, ValueError):
    """Calibration length is zero or negative."""


class EmptyInput(GranuliteError, ValueError):
    """An operation received no data to work on."""


# I/O

class ParseError(GranuliteError, ValueError):
    """Malformed input file. Carries a line number (text) or byte offset (binary)."""

    def __init__(self, message: str, line: Optional[int] = None, offset: Optional[int] = None):
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte offset {offset})"
        super().__init__(f"{message}{where}")


class UnsupportedFormat(GranuliteError, ValueError):
    """File format variant is not supported."""


class GranuliteIOError(GranuliteError, OSError):
    """Writing or reading an artifact failed."""


# Runner

class ConfigError(GranuliteError, ValueError):
    """Configuration is invalid or incomplete."""


class StageFailure(GranuliteError):
    """A pipeline stage failed; wraps the original error."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
