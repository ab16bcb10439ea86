"""
PLY and OBJ readers and writers.

This module provides functionality for:
1. Reading ASCII and binary little-endian PLY 1.0 clouds and meshes
2. Writing clouds and meshes (binary by default, doubles for coordinates)
3. Writing segment-colored meshes with a label sidecar file
4. Reading vertices and faces from Wavefront OBJ files
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from granulite.errors import GranuliteIOError, ParseError, UnsupportedFormat
from granulite.services.formats import write_labels
from granulite.services.geometry import UNIT_NORM_TOL, PointCloud, TriMesh
from granulite.services.segmentation import BOUNDARY, SegmentLabels

logger = logging.getLogger(__name__)

PLY_TYPES: Dict[str, str] = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

# Fixed 16-color palette, cycled by segment id; Boundary faces are black
SEGMENT_PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
], dtype=np.uint8)
BOUNDARY_COLOR = np.array((0, 0, 0), dtype=np.uint8)

Geometry = Union[PointCloud, TriMesh]


@dataclass
class PlyProperty:
    name: str
    dtype: str
    count_dtype: Optional[str] = None

    @property
    def is_list(self) -> bool:
        return self.count_dtype is not None


@dataclass
class PlyElement:
    name: str
    count: int
    properties: List[PlyProperty] = field(default_factory=list)
    line: int = 0

    def property_names(self) -> List[str]:
        return [p.name for p in self.properties]


@dataclass
class PlyHeader:
    format: str
    elements: List[PlyElement]
    body_offset: int
    header_lines: int

    def element(self, name: str) -> Optional[PlyElement]:
        return next((e for e in self.elements if e.name == name), None)


def _parse_header(data: bytes) -> PlyHeader:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')", line=1)
    newline = data.find(b"\n", end)
    body_offset = len(data) if newline < 0 else newline + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt: Optional[str] = None
    elements: List[PlyElement] = []
    for number, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        keyword = tokens[0]
        if keyword == "format":
            if len(tokens) != 3 or tokens[2] != "1.0":
                raise ParseError(f"unsupported format line '{raw.strip()}'", line=number)
            if tokens[1] == "binary_big_endian":
                raise UnsupportedFormat("big-endian PLY files are not supported")
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unknown PLY format '{tokens[1]}'", line=number)
            fmt = tokens[1]
        elif keyword == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise ParseError(f"malformed element line '{raw.strip()}'", line=number)
            elements.append(PlyElement(tokens[1], int(tokens[2]), line=number))
        elif keyword == "property":
            if not elements:
                raise ParseError("property declared before any element", line=number)
            if len(tokens) == 5 and tokens[1] == "list":
                if tokens[2] not in PLY_TYPES or tokens[3] not in PLY_TYPES:
                    raise ParseError(f"unknown list types in '{raw.strip()}'", line=number)
                elements[-1].properties.append(PlyProperty(tokens[4], PLY_TYPES[tokens[3]], PLY_TYPES[tokens[2]]))
            elif len(tokens) == 3 and tokens[1] in PLY_TYPES:
                elements[-1].properties.append(PlyProperty(tokens[2], PLY_TYPES[tokens[1]]))
            else:
                raise ParseError(f"malformed property line '{raw.strip()}'", line=number)
        else:
            raise ParseError(f"unexpected header keyword '{keyword}'", line=number)
    if fmt is None:
        raise ParseError("missing format line", line=2)
    return PlyHeader(fmt, elements, body_offset, len(lines) + 1)


def _read_binary_triangles(data: bytes, offset: int, element: PlyElement):
    """Vectorized read when the element's single list property always holds 3 items."""
    lists = [p for p in element.properties if p.is_list]
    if len(lists) != 1 or element.count == 0:
        return None
    fields = []
    for p in element.properties:
        if p.is_list:
            fields += [("__count", "<" + p.count_dtype), (p.name, "<" + p.dtype, (3,))]
        else:
            fields.append((p.name, "<" + p.dtype))
    dtype = np.dtype(fields)
    size = dtype.itemsize * element.count
    if offset + size > len(data):
        return None
    rows = np.frombuffer(data, dtype=dtype, count=element.count, offset=offset)
    if not np.all(rows["__count"] == 3):
        return None
    return {p.name: rows[p.name] for p in element.properties}, offset + size


def _read_binary(data: bytes, header: PlyHeader) -> Dict[str, Dict[str, object]]:
    """Element name -> property name -> array (lists become lists of arrays)."""
    offset = header.body_offset
    tables: Dict[str, Dict[str, object]] = {}
    for element in header.elements:
        if not any(p.is_list for p in element.properties):
            dtype = np.dtype([(p.name, "<" + p.dtype) for p in element.properties])
            size = dtype.itemsize * element.count
            if offset + size > len(data):
                raise ParseError(f"truncated '{element.name}' data", offset=len(data))
            rows = np.frombuffer(data, dtype=dtype, count=element.count, offset=offset)
            tables[element.name] = {name: rows[name] for name in dtype.names or ()}
            offset += size
            continue

        triangles = _read_binary_triangles(data, offset, element)
        if triangles is not None:
            tables[element.name], offset = triangles
            continue

        columns: Dict[str, list] = {p.name: [] for p in element.properties}
        for _ in range(element.count):
            for prop in element.properties:
                if prop.is_list:
                    count_type = np.dtype("<" + prop.count_dtype)
                    if offset + count_type.itemsize > len(data):
                        raise ParseError(f"truncated '{element.name}' data", offset=offset)
                    n = int(np.frombuffer(data, count_type, 1, offset)[0])
                    offset += count_type.itemsize
                    item = np.dtype("<" + prop.dtype)
                    if offset + n * item.itemsize > len(data):
                        raise ParseError(f"truncated '{element.name}' list", offset=offset)
                    columns[prop.name].append(np.frombuffer(data, item, n, offset))
                    offset += n * item.itemsize
                else:
                    item = np.dtype("<" + prop.dtype)
                    if offset + item.itemsize > len(data):
                        raise ParseError(f"truncated '{element.name}' data", offset=offset)
                    columns[prop.name].append(np.frombuffer(data, item, 1, offset)[0])
                    offset += item.itemsize
        tables[element.name] = {
            p.name: columns[p.name] if p.is_list else np.array(columns[p.name], dtype=p.dtype)
            for p in element.properties
        }
    return tables


def _read_ascii(data: bytes, header: PlyHeader) -> Dict[str, Dict[str, object]]:
    lines = data[header.body_offset:].decode("ascii", errors="replace").splitlines()
    cursor = 0
    tables: Dict[str, Dict[str, object]] = {}
    for element in header.elements:
        columns: Dict[str, list] = {p.name: [] for p in element.properties}
        for _ in range(element.count):
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            line_number = header.header_lines + cursor + 1
            if cursor >= len(lines):
                raise ParseError(f"unexpected end of file in '{element.name}' data", line=line_number)
            tokens = lines[cursor].split()
            cursor += 1
            position = 0
            try:
                for prop in element.properties:
                    if prop.is_list:
                        n = int(tokens[position])
                        items = tokens[position + 1:position + 1 + n]
                        if len(items) != n:
                            raise IndexError
                        columns[prop.name].append(np.array(items, dtype=prop.dtype))
                        position += 1 + n
                    else:
                        columns[prop.name].append(float(tokens[position]))
                        position += 1
            except (IndexError, ValueError):
                raise ParseError(f"malformed '{element.name}' row", line=line_number) from None
        tables[element.name] = {
            p.name: columns[p.name] if p.is_list else np.array(columns[p.name], dtype=p.dtype)
            for p in element.properties
        }
    return tables


def _fan_triangulate(polygons) -> np.ndarray:
    if isinstance(polygons, np.ndarray) and polygons.ndim == 2 and polygons.shape[1] == 3:
        return polygons.astype(np.int64)
    triangles: List[Tuple[int, int, int]] = []
    for k, polygon in enumerate(polygons):
        if len(polygon) < 3:
            raise ParseError(f"face {k} has {len(polygon)} vertices")
        first = int(polygon[0])
        triangles.extend((first, int(polygon[i]), int(polygon[i + 1])) for i in range(1, len(polygon) - 1))
    return np.array(triangles, dtype=np.int64).reshape(-1, 3)


def _rgb(table: Dict[str, object], count: int) -> Optional[np.ndarray]:
    if all(c in table for c in ("red", "green", "blue")):
        return np.stack([np.asarray(table[c]) for c in ("red", "green", "blue")], axis=1).reshape(count, 3)
    return None


def _warn_skipped(element: PlyElement, known: Tuple[str, ...]) -> None:
    for name in element.property_names():
        if name not in known:
            logger.warning("Skipping unknown PLY property '%s' of element '%s'", name, element.name)


def _vertex_normals(table: Dict[str, object]) -> Optional[np.ndarray]:
    if not all(c in table for c in ("nx", "ny", "nz")):
        return None
    normals = np.stack([np.asarray(table[c], dtype=np.float64) for c in ("nx", "ny", "nz")], axis=1)
    norms = np.linalg.norm(normals, axis=1)
    if np.any(norms == 0):
        logger.warning("Dropping vertex normals: %d have zero length", int(np.sum(norms == 0)))
        return None
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        logger.warning("Renormalizing vertex normals that are not unit length")
        normals = normals / norms[:, None]
    return normals


def read_ply(path: Union[str, Path]) -> Geometry:
    """
    Read a PLY file. Files with a `face` element give a TriMesh, others a PointCloud.

    Polygonal faces are fan-triangulated. Unknown properties and elements are
    skipped with a warning.

    Raises:
        GranuliteIOError: the file cannot be read
        ParseError: malformed header or body (with line or byte offset)
        UnsupportedFormat: big-endian binary
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise GranuliteIOError(f"cannot read {path}: {e}") from e

    header = _parse_header(data)
    tables = _read_ascii(data, header) if header.format == "ascii" else _read_binary(data, header)
    for element in header.elements:
        if element.name not in ("vertex", "face"):
            logger.warning("Skipping unknown PLY element '%s'", element.name)

    vertex_element = header.element("vertex")
    if vertex_element is None:
        raise ParseError("PLY file has no 'vertex' element before 'end_header'", line=header.header_lines)
    _warn_skipped(vertex_element, ("x", "y", "z", "nx", "ny", "nz", "red", "green", "blue"))
    vertices_table = tables["vertex"]
    if not all(c in vertices_table for c in ("x", "y", "z")):
        raise ParseError("vertex element lacks x/y/z properties", line=vertex_element.line)
    positions = np.stack([np.asarray(vertices_table[c], dtype=np.float64) for c in ("x", "y", "z")], axis=1)

    face_element = header.element("face")
    if face_element is None:
        cloud = PointCloud(positions, _vertex_normals(vertices_table), _rgb(vertices_table, len(positions)))
        logger.debug("Read %d points from %s", len(cloud), path)
        return cloud

    face_table = tables["face"]
    list_name = next((n for n in ("vertex_indices", "vertex_index") if n in face_table), None)
    if list_name is None:
        raise ParseError("face element lacks a vertex_indices list", line=face_element.line)
    _warn_skipped(face_element, (list_name, "red", "green", "blue"))
    polygons = face_table[list_name]
    faces = _fan_triangulate(polygons)
    colors = _rgb(face_table, face_element.count)
    if colors is not None and len(faces) != face_element.count:
        # polygons were split; repeat each color for its triangles
        colors = np.repeat(colors, [len(p) - 2 for p in polygons], axis=0)
    mesh = TriMesh(positions, faces, colors)
    logger.debug("Read mesh with %d vertices and %d faces from %s", mesh.n_vertices, mesh.n_faces, path)
    return mesh


def _vertex_layout(geometry: Geometry) -> Tuple[List[Tuple[str, str]], List[np.ndarray]]:
    layout = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    columns = [geometry.vertices if isinstance(geometry, TriMesh) else geometry.positions]
    if isinstance(geometry, PointCloud):
        if geometry.normals is not None:
            layout += [("nx", "f8"), ("ny", "f8"), ("nz", "f8")]
            columns.append(geometry.normals)
        if geometry.colors is not None:
            layout += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            columns.append(geometry.colors)
    return layout, columns


_PLY_NAMES = {"f8": "double", "u1": "uchar", "i4": "int"}


def _header(fmt: str, vertex_count: int, vertex_layout, face_count: Optional[int], face_colors: bool) -> bytes:
    lines = ["ply", f"format {fmt} 1.0", "comment written by granulite", f"element vertex {vertex_count}"]
    lines += [f"property {_PLY_NAMES[t]} {name}" for name, t in vertex_layout]
    if face_count is not None:
        lines += [f"element face {face_count}", "property list uchar int vertex_indices"]
        if face_colors:
            lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ply(path: Union[str, Path], geometry: Geometry, binary: bool = True) -> Path:
    """
    Write a cloud or mesh. Coordinates and normals are stored as doubles so
    binary files read back bit-exactly; ASCII uses 17 significant digits.

    Raises:
        GranuliteIOError: the file cannot be written
    """
    path = Path(path)
    vertex_layout, columns = _vertex_layout(geometry)
    is_mesh = isinstance(geometry, TriMesh)
    n_vertices = len(columns[0])
    faces = geometry.faces if is_mesh else None
    face_colors = geometry.face_colors if is_mesh else None
    if faces is not None and faces.size and faces.max() > np.iinfo(np.int32).max:
        raise GranuliteIOError(f"cannot write {path}: vertex index exceeds int32")

    header = _header(
        "binary_little_endian" if binary else "ascii",
        n_vertices, vertex_layout, len(faces) if is_mesh else None, face_colors is not None,
    )
    vertex_rows = np.empty(n_vertices, dtype=np.dtype([(name, "<" + t) for name, t in vertex_layout]))
    position = 0
    for block in columns:
        for k in range(block.shape[1]):
            vertex_rows[vertex_layout[position][0]] = block[:, k]
            position += 1

    try:
        with open(path, "wb") as f:
            f.write(header)
            if binary:
                f.write(vertex_rows.tobytes())
                if is_mesh:
                    face_fields = [("n", "u1"), ("v", "<i4", (3,))]
                    if face_colors is not None:
                        face_fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
                    face_rows = np.empty(len(faces), dtype=np.dtype(face_fields))
                    face_rows["n"] = 3
                    face_rows["v"] = faces
                    if face_colors is not None:
                        for k, name in enumerate(("red", "green", "blue")):
                            face_rows[name] = face_colors[:, k]
                    f.write(face_rows.tobytes())
            else:
                formats = ["%.17g" if t == "f8" else "%d" for _, t in vertex_layout]
                for row in vertex_rows:
                    f.write((" ".join(fmt % value for fmt, value in zip(formats, row)) + "\n").encode("ascii"))
                if is_mesh:
                    for k, face in enumerate(faces):
                        items = ["3"] + [str(int(v)) for v in face]
                        if face_colors is not None:
                            items += [str(int(c)) for c in face_colors[k]]
                        f.write((" ".join(items) + "\n").encode("ascii"))
    except OSError as e:
        raise GranuliteIOError(f"cannot write {path}: {e}") from e
    logger.debug("Wrote %s (%d vertices%s)", path, n_vertices, f", {len(faces)} faces" if is_mesh else "")
    return path


def segment_colors(labels: SegmentLabels) -> np.ndarray:
    """Palette color per face: cycled by segment id, black for Boundary."""
    assignments = labels.assignments
    colors = SEGMENT_PALETTE[np.maximum(assignments, 0) % len(SEGMENT_PALETTE)].copy()
    colors[assignments == BOUNDARY] = BOUNDARY_COLOR
    return colors


def labels_sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.txt")


def write_ply_labeled(mesh: TriMesh, labels: SegmentLabels, path: Union[str, Path]) -> Path:
    """
    Write a binary PLY with per-face segment colors plus a label sidecar
    (`<stem>.labels.txt`). Returns the sidecar path.

    Raises:
        GranuliteIOError: a file cannot be written
    """
    if len(labels) != mesh.n_faces:
        raise ValueError(f"labels cover {len(labels)} faces, mesh has {mesh.n_faces}")
    write_ply(path, mesh.with_face_colors(segment_colors(labels)), binary=True)
    sidecar = labels_sidecar_path(path)
    write_labels(sidecar, labels)
    return sidecar


def read_obj(path: Union[str, Path]) -> TriMesh:
    """
    Read vertices (`v`) and faces (`f`) of an OBJ file; everything else is
    ignored. Polygons are fan-triangulated and negative indices resolved.

    Raises:
        GranuliteIOError: the file cannot be read
        ParseError: malformed vertex or face record (with line number)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as e:
        raise GranuliteIOError(f"cannot read {path}: {e}") from e

    vertices: List[Tuple[float, float, float]] = []
    polygons: List[np.ndarray] = []
    for number, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        try:
            if tokens[0] == "v":
                vertices.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
            elif tokens[0] == "f":
                indices = []
                for token in tokens[1:]:
                    index = int(token.split("/")[0])
                    indices.append(index - 1 if index > 0 else len(vertices) + index)
                if len(indices) < 3:
                    raise ParseError("face with fewer than 3 vertices", line=number)
                polygons.append(np.array(indices, dtype=np.int64))
        except ParseError:
            raise
        except (IndexError, ValueError):
            raise ParseError(f"malformed '{tokens[0]}' record", line=number) from None
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), _fan_triangulate(polygons))


def read_mesh(path: Union[str, Path]) -> TriMesh:
    """Read a mesh from PLY or OBJ by extension."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return read_obj(path)
    geometry = read_ply(path)
    if not isinstance(geometry, TriMesh):
        raise ParseError(f"{path} holds a point cloud, a mesh is required")
    return geometry


def read_cloud(path: Union[str, Path]) -> PointCloud:
    """Read a point cloud; a mesh file yields its vertices."""
    geometry = read_ply(path)
    if isinstance(geometry, TriMesh):
        return PointCloud(geometry.vertices)
    return geometry
