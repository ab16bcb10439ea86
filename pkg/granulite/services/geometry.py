"""
Point cloud and triangle mesh primitives.

This module provides functionality for:
1. Immutable point-cloud and triangle-mesh containers
2. Edge-based face adjacency
3. Face normals, centroids and center-difference vectors
4. Mesh validity diagnostics
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np

from granulite.errors import (
    CoincidentCentroids,
    DegenerateFace,
    InvalidMesh,
    NonManifoldEdge,
    NonUnitInput,
)

logger = logging.getLogger(__name__)

# Cross-product norm threshold relative to the squared longest edge
DEGENERATE_TOL = 1e-12
UNIT_NORM_TOL = 1e-6
COINCIDENT_TOL = 1e-12


def vector_norm(vectors: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis; scalar and batched calls round identically."""
    return np.sqrt(np.sum(vectors * vectors, axis=-1))


def _readonly(values, dtype, name: str, width: int = 3) -> np.ndarray:
    """Copy into a C-contiguous read-only (N, width) array."""
    array = np.array(values, dtype=dtype, copy=True)
    if array.size == 0:
        array = array.reshape(0, width)
    if array.ndim != 2 or array.shape[1] != width:
        raise ValueError(f"{name} must have shape (N, {width}), got {array.shape}")
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def _colors(values, name: str) -> np.ndarray:
    raw = np.asarray(values)
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise ValueError(f"{name} must be RGB bytes in 0..255")
    return _readonly(raw, np.uint8, name)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """3D points with optional unit normals and RGB colors."""
    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        positions = _readonly(self.positions, np.float64, "positions")
        object.__setattr__(self, "positions", positions)
        if self.normals is not None:
            normals = _readonly(self.normals, np.float64, "normals")
            if len(normals) != len(positions):
                raise ValueError("normals must have the same length as positions")
            deviation = np.abs(np.linalg.norm(normals, axis=1) - 1.0)
            if deviation.size and deviation.max() > UNIT_NORM_TOL:
                raise NonUnitInput(f"normal {int(deviation.argmax())} is not unit length")
            object.__setattr__(self, "normals", normals)
        if self.colors is not None:
            colors = _colors(self.colors, "colors")
            if len(colors) != len(positions):
                raise ValueError("colors must have the same length as positions")
            object.__setattr__(self, "colors", colors)

    def __len__(self) -> int:
        return len(self.positions)

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions, normals, self.colors)

    def translated(self, offset) -> "PointCloud":
        return PointCloud(self.positions + np.asarray(offset, dtype=np.float64), self.normals, self.colors)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh; counter-clockwise faces define outward normals."""
    vertices: np.ndarray
    faces: np.ndarray
    face_colors: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", _readonly(self.vertices, np.float64, "vertices"))
        object.__setattr__(self, "faces", _readonly(self.faces, np.int64, "faces"))
        if self.face_colors is not None:
            colors = _colors(self.face_colors, "face_colors")
            if len(colors) != len(self.faces):
                raise ValueError("face_colors must have one row per face")
            object.__setattr__(self, "face_colors", colors)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def _corners(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        v = self.vertices
        return v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]

    @cached_property
    def _normals(self) -> Tuple[np.ndarray, np.ndarray]:
        v0, v1, v2 = self._corners
        cross = np.cross(v1 - v0, v2 - v0)
        norms = vector_norm(cross)
        longest = np.max(
            np.stack([
                np.sum((v1 - v0) ** 2, axis=1),
                np.sum((v2 - v1) ** 2, axis=1),
                np.sum((v0 - v2) ** 2, axis=1),
            ]),
            axis=0,
        ) if len(cross) else np.zeros(0)
        degenerate = norms <= DEGENERATE_TOL * longest
        normals = np.zeros_like(cross)
        ok = ~degenerate
        normals[ok] = cross[ok] / norms[ok, None]
        normals.setflags(write=False)
        degenerate.setflags(write=False)
        return normals, degenerate

    def face_normals(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unit face normals and the degenerate-face mask (normals are zero there)."""
        return self._normals

    def face_centroids(self) -> np.ndarray:
        v0, v1, v2 = self._corners
        return (v0 + v1 + v2) / 3.0

    def face_areas(self) -> np.ndarray:
        v0, v1, v2 = self._corners
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    def transformed(self, rotation: np.ndarray, translation=None) -> "TriMesh":
        """Apply x -> R x + t to every vertex."""
        moved = self.vertices @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            moved = moved + np.asarray(translation, dtype=np.float64)
        return TriMesh(moved, self.faces, self.face_colors)

    def scaled(self, factor: float) -> "TriMesh":
        return TriMesh(self.vertices * float(factor), self.faces, self.face_colors)

    def with_face_colors(self, colors: Optional[np.ndarray]) -> "TriMesh":
        return TriMesh(self.vertices, self.faces, colors)


@dataclass(frozen=True, eq=False)
class FaceAdjacency:
    """Edge-sharing face neighbors in CSR form, ascending per face."""
    indptr: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indptr) - 1

    def neighbors(self, face_id: int) -> np.ndarray:
        return self.indices[self.indptr[face_id]:self.indptr[face_id + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def total_entries(self) -> int:
        return int(len(self.indices))

    def rows(self) -> np.ndarray:
        """Owning face of every entry in `indices`."""
        return np.repeat(np.arange(len(self)), self.counts())

    def as_lists(self) -> List[List[int]]:
        return [self.neighbors(i).tolist() for i in range(len(self))]


def _index_problems(mesh: TriMesh) -> Tuple[List[int], List[int]]:
    faces = mesh.faces
    if len(faces) == 0:
        return [], []
    out_of_range = np.flatnonzero(np.any((faces < 0) | (faces >= mesh.n_vertices), axis=1))
    repeated = np.flatnonzero(
        (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 2] == faces[:, 0])
    )
    return out_of_range.tolist(), repeated.tolist()


def _edge_groups(faces: np.ndarray, owners: np.ndarray):
    """Group the directed edges of `faces` by undirected key.

    Returns sorted keys, directed edges and owner faces in group order, plus
    group start offsets and sizes.
    """
    directed = np.stack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=1).reshape(-1, 2)
    edge_owners = np.repeat(owners, 3)
    keys = np.sort(directed, axis=1)
    order = np.lexsort((edge_owners, keys[:, 1], keys[:, 0]))
    keys, directed, edge_owners = keys[order], directed[order], edge_owners[order]
    if len(keys) == 0:
        return keys, directed, edge_owners, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    new_group = np.ones(len(keys), dtype=bool)
    new_group[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    starts = np.flatnonzero(new_group)
    sizes = np.diff(np.append(starts, len(keys)))
    return keys, directed, edge_owners, starts, sizes


def build_adjacency(mesh: TriMesh) -> FaceAdjacency:
    """
    Build edge-based face adjacency.

    Faces that share only a vertex are not neighbors. Neighbor lists are in
    ascending face id.

    Raises:
        InvalidMesh: face indices out of range or repeated within a face
        NonManifoldEdge: an edge is shared by more than two faces
    """
    out_of_range, repeated = _index_problems(mesh)
    if out_of_range or repeated:
        raise InvalidMesh(
            f"{len(out_of_range)} faces with out-of-range indices, "
            f"{len(repeated)} faces repeating a vertex"
        )
    n = mesh.n_faces
    keys, _, owners, starts, sizes = _edge_groups(mesh.faces, np.arange(n))
    crowded = np.flatnonzero(sizes > 2)
    if crowded.size:
        first = starts[crowded[0]]
        raise NonManifoldEdge(tuple(keys[first]), sizes[crowded[0]])

    shared = starts[sizes == 2]
    a, b = owners[shared], owners[shared + 1]
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    # a face can meet the same neighbor across two edges; keep one entry
    pair_keys = np.unique(rows * max(n, 1) + cols)
    rows, cols = np.divmod(pair_keys, max(n, 1))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    indices = cols.astype(np.int64)
    indptr.setflags(write=False)
    indices.setflags(write=False)
    return FaceAdjacency(indptr=indptr, indices=indices)


def face_normal(mesh: TriMesh, face_id: int) -> np.ndarray:
    """Unit normal of one face from the CCW edge cross product."""
    v0, v1, v2 = mesh.vertices[mesh.faces[face_id]]
    cross = np.cross(v1 - v0, v2 - v0)
    norm = vector_norm(cross)
    longest = max(np.sum((v1 - v0) ** 2), np.sum((v2 - v1) ** 2), np.sum((v0 - v2) ** 2))
    if norm <= DEGENERATE_TOL * longest:
        raise DegenerateFace(face_id)
    return cross / norm


def face_centroid(mesh: TriMesh, face_id: int) -> np.ndarray:
    return mesh.vertices[mesh.faces[face_id]].mean(axis=0)


def center_difference(mesh: TriMesh, from_face: int, to_face: int) -> np.ndarray:
    """Unit vector from the centroid of `from_face` to the centroid of `to_face`."""
    difference = face_centroid(mesh, to_face) - face_centroid(mesh, from_face)
    norm = vector_norm(difference)
    if norm < COINCIDENT_TOL:
        raise CoincidentCentroids(from_face, to_face)
    return difference / norm


@dataclass(frozen=True)
class MeshReport:
    """Diagnostics from validate_mesh. An empty report means a valid mesh."""
    out_of_range_faces: List[int]
    repeated_vertex_faces: List[int]
    degenerate_faces: List[int]
    non_manifold_edges: List[Tuple[int, int]]
    orientation_conflicts: List[Tuple[int, int]]
    boundary_edge_count: int = 0

    @property
    def defect_count(self) -> int:
        return (
            len(self.out_of_range_faces)
            + len(self.repeated_vertex_faces)
            + len(self.degenerate_faces)
            + len(self.non_manifold_edges)
            + len(self.orientation_conflicts)
        )

    @property
    def is_valid(self) -> bool:
        return self.defect_count == 0

    @property
    def is_closed(self) -> bool:
        return self.is_valid and self.boundary_edge_count == 0

    def summary(self) -> Dict[str, int]:
        return {
            "out_of_range_faces": len(self.out_of_range_faces),
            "repeated_vertex_faces": len(self.repeated_vertex_faces),
            "degenerate_faces": len(self.degenerate_faces),
            "non_manifold_edges": len(self.non_manifold_edges),
            "orientation_conflicts": len(self.orientation_conflicts),
            "boundary_edges": self.boundary_edge_count,
        }


def validate_mesh(mesh: TriMesh) -> MeshReport:
    """
    Report index, degeneracy, manifoldness and orientation problems.

    Faces with bad indices are excluded from the geometric checks.
    """
    out_of_range, repeated = _index_problems(mesh)
    bad = np.zeros(mesh.n_faces, dtype=bool)
    bad[out_of_range] = True
    bad[repeated] = True
    good = np.flatnonzero(~bad)

    degenerate: List[int] = []
    if good.size:
        clean = TriMesh(mesh.vertices, mesh.faces[good])
        _, mask = clean.face_normals()
        degenerate = good[mask].tolist()

    keys, directed, _, starts, sizes = _edge_groups(mesh.faces[good], good)
    non_manifold = [tuple(int(x) for x in keys[s]) for s in starts[sizes > 2]]
    pairs = starts[sizes == 2]
    same_direction = np.all(directed[pairs] == directed[pairs + 1], axis=1) if pairs.size else np.zeros(0, bool)
    conflicts = [tuple(int(x) for x in keys[s]) for s in pairs[same_direction]]

    report = MeshReport(
        out_of_range_faces=out_of_range,
        repeated_vertex_faces=repeated,
        degenerate_faces=degenerate,
        non_manifold_edges=non_manifold,
        orientation_conflicts=conflicts,
        boundary_edge_count=int(np.sum(sizes == 1)),
    )
    if not report.is_valid:
        logger.debug("Mesh validation found %d defects: %s", report.defect_count, report.summary())
    return report
