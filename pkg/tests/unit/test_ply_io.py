"""
Unit tests for PLY and OBJ input/output.

Tests ASCII and binary reading, bit-exact binary writing, labeled meshes and
error reporting on malformed files.
"""
import logging

import numpy as np
import pytest

from granulite.errors import ParseError, UnsupportedFormat
from granulite.schemas.config import PipelineConfig
from granulite.services.fixtures import sphere_cloud
from granulite.services.formats import read_labels
from granulite.services.geometry import PointCloud, TriMesh, build_adjacency
from granulite.services.ply_io import (
    BOUNDARY_COLOR,
    SEGMENT_PALETTE,
    labels_sidecar_path,
    read_cloud,
    read_mesh,
    read_obj,
    read_ply,
    segment_colors,
    write_ply,
    write_ply_labeled,
)
from granulite.services.segmentation import BOUNDARY, SegmentLabels, filter_segments, segment_mesh

ASCII_CLOUD = """ply
format ascii 1.0
comment three points
element vertex 3
property float x
property float y
property float z
end_header
0 0 0
1 0 0
0 1.5 0
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_bytes(text.encode("ascii") if isinstance(text, str) else text)
    return path


def test_read_ascii_cloud(tmp_path):
    """Test that a minimal ASCII file yields a three-point cloud without normals."""
    cloud = read_ply(_write(tmp_path, "cloud.ply", ASCII_CLOUD))
    assert isinstance(cloud, PointCloud)
    np.testing.assert_array_equal(cloud.positions, [(0, 0, 0), (1, 0, 0), (0, 1.5, 0)])
    assert cloud.normals is None


def test_binary_cloud_is_bit_exact(tmp_path):
    """Test that positions and normals survive a binary write and read unchanged."""
    cloud = sphere_cloud(257, radius=0.37, center=(1e3, -2.5, 1.0 / 3.0))
    back = read_ply(write_ply(tmp_path / "cloud.ply", cloud))
    assert np.array_equal(back.positions, cloud.positions)
    assert np.array_equal(back.normals, cloud.normals)


def test_binary_mesh_is_bit_exact(tmp_path, icosphere_mesh):
    """Test that mesh vertices and faces survive a binary write and read unchanged."""
    back = read_mesh(write_ply(tmp_path / "mesh.ply", icosphere_mesh))
    assert np.array_equal(back.vertices, icosphere_mesh.vertices)
    assert np.array_equal(back.faces, icosphere_mesh.faces)


def test_ascii_mesh_keeps_full_precision(tmp_path, icosphere_mesh):
    """Test that ASCII output uses enough digits to reproduce doubles."""
    back = read_mesh(write_ply(tmp_path / "mesh.ply", icosphere_mesh, binary=False))
    assert np.array_equal(back.vertices, icosphere_mesh.vertices)
    assert np.array_equal(back.faces, icosphere_mesh.faces)


def test_cloud_colors_round_trip(tmp_path):
    """Test that per-vertex colors are written and read as uchar."""
    colors = np.array([(255, 0, 0), (0, 255, 0), (0, 0, 255)], dtype=np.uint8)
    cloud = PointCloud(np.eye(3), colors=colors)
    back = read_ply(write_ply(tmp_path / "colored.ply", cloud))
    assert np.array_equal(back.colors, colors)


def test_labeled_mesh(tmp_path, tetrahedron_mesh):
    """Test that faces are colored by segment, boundary faces are black and the sidecar matches."""
    labels = SegmentLabels(np.array([0, 0, BOUNDARY, 1]), 2)
    path = tmp_path / "segments.ply"
    sidecar = write_ply_labeled(tetrahedron_mesh, labels, path)
    assert sidecar == labels_sidecar_path(path) == tmp_path / "segments.labels.txt"

    back = read_mesh(path)
    assert back.n_faces == tetrahedron_mesh.n_faces
    assert np.array_equal(back.face_colors[0], SEGMENT_PALETTE[0])
    assert np.array_equal(back.face_colors[2], BOUNDARY_COLOR)
    assert np.array_equal(back.face_colors[3], SEGMENT_PALETTE[1])
    assert read_labels(sidecar) == labels


def test_single_segment_uses_first_palette_color():
    """Test that a one-segment labeling is colored uniformly with palette entry 0."""
    colors = segment_colors(SegmentLabels(np.zeros(5, dtype=np.int64), 1))
    assert np.all(colors == SEGMENT_PALETTE[0])


def test_palette_cycles():
    """Test that segment ids past the palette size wrap around."""
    count = len(SEGMENT_PALETTE) + 1
    colors = segment_colors(SegmentLabels(np.arange(count), count))
    assert np.array_equal(colors[-1], colors[0])


def test_big_endian_is_unsupported(tmp_path):
    """Test that big-endian binary files are refused."""
    text = ASCII_CLOUD.replace("format ascii 1.0", "format binary_big_endian 1.0")
    with pytest.raises(UnsupportedFormat):
        read_ply(_write(tmp_path, "be.ply", text))


def test_malformed_row_reports_line(tmp_path):
    """Test that a bad ASCII row is reported with its line number."""
    text = ASCII_CLOUD.replace("1 0 0", "1 zero 0")
    with pytest.raises(ParseError) as excinfo:
        read_ply(_write(tmp_path, "bad.ply", text))
    assert excinfo.value.line == 10


def test_missing_vertex_data_reports_header_line(tmp_path):
    """Test that a missing vertex element or coordinate points at the header line."""
    with pytest.raises(ParseError) as excinfo:
        read_ply(_write(tmp_path, "points.ply", ASCII_CLOUD.replace("element vertex", "element point")))
    assert excinfo.value.line == 8
    assert "(line 8)" in str(excinfo.value)

    with pytest.raises(ParseError) as excinfo:
        read_ply(_write(tmp_path, "flat.ply", ASCII_CLOUD.replace("property float z", "property float w")))
    assert excinfo.value.line == 4


def test_missing_magic(tmp_path):
    """Test that a file without the PLY magic is rejected."""
    with pytest.raises(ParseError):
        read_ply(_write(tmp_path, "junk.ply", "solid cube\nendsolid\n"))


def test_truncated_binary_reports_offset(tmp_path, icosphere_mesh):
    """Test that a truncated binary body is reported with a byte offset."""
    path = write_ply(tmp_path / "mesh.ply", icosphere_mesh)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(ParseError) as excinfo:
        read_ply(path)
    assert excinfo.value.offset is not None


def test_unknown_property_is_skipped(tmp_path, caplog):
    """Test that unknown vertex properties are skipped with a warning."""
    text = ASCII_CLOUD.replace("property float z\n", "property float z\nproperty float confidence\n")
    text = text.replace("0 0 0\n1 0 0\n0 1.5 0\n", "0 0 0 0.9\n1 0 0 0.8\n0 1.5 0 0.7\n")
    with caplog.at_level(logging.WARNING):
        cloud = read_ply(_write(tmp_path, "extra.ply", text))
    assert len(cloud) == 3
    assert "confidence" in caplog.text


def test_polygons_are_fan_triangulated(tmp_path):
    """Test that a quad face becomes two triangles sharing its first vertex."""
    text = """ply
format ascii 1.0
element vertex 4
property double x
property double y
property double z
element face 1
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
1 1 0
0 1 0
4 0 1 2 3
"""
    mesh = read_ply(_write(tmp_path, "quad.ply", text))
    assert isinstance(mesh, TriMesh)
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_read_obj(tmp_path):
    """Test OBJ vertices, slash-separated and negative face indices and polygon fans."""
    text = """# square
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vn 0 0 1
f 1/1/1 2/2/1 3/3/1 4/4/1
f -4 -2 -1
"""
    mesh = read_obj(_write(tmp_path, "square.obj", text))
    assert mesh.n_vertices == 4
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3], [0, 2, 3]]
    assert read_mesh(tmp_path / "square.obj").n_faces == 3


def test_obj_parse_error_has_line(tmp_path):
    """Test that a malformed OBJ vertex names its line."""
    with pytest.raises(ParseError) as excinfo:
        read_obj(_write(tmp_path, "bad.obj", "v 0 0 0\nv 1 x 0\n"))
    assert excinfo.value.line == 2


def test_read_mesh_rejects_cloud(tmp_path):
    """Test that a cloud file cannot be read as a mesh, while a mesh yields a cloud of its vertices."""
    path = _write(tmp_path, "cloud.ply", ASCII_CLOUD)
    with pytest.raises(ParseError):
        read_mesh(path)
    assert len(read_cloud(path)) == 3


def test_read_ascii_triangle(tmp_path):
    """Test a three-vertex, one-face ASCII mesh."""
    text = (
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
    )
    mesh = read_ply(_write(tmp_path, "tri.ply", text))
    assert isinstance(mesh, TriMesh)
    assert mesh.faces.tolist() == [[0, 1, 2]]
    np.testing.assert_allclose(mesh.vertices[1], [1.0, 0.0, 0.0])


def test_read_cloud_with_normals_and_colors(tmp_path):
    """Test that normals and colors are read alongside positions."""
    text = (
        "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\n"
        "property double nx\nproperty double ny\nproperty double nz\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
        "0 0 0 0 0 1 255 0 0\n1 2 3 1 0 0 10 20 30\n"
    )
    cloud = read_cloud(_write(tmp_path, "normals.ply", text))
    np.testing.assert_allclose(cloud.normals, [[0, 0, 1], [1, 0, 0]])
    assert cloud.colors.tolist() == [[255, 0, 0], [10, 20, 30]]


def test_stockpile_segments_get_distinct_colors(tmp_path, stockpile_mesh):
    """Test that a ten-segment pile is written with at least ten face colors."""
    labels = filter_segments(segment_mesh(stockpile_mesh, build_adjacency(stockpile_mesh)), PipelineConfig().min_faces)
    path = tmp_path / "pile.ply"
    write_ply_labeled(stockpile_mesh, labels, path)
    colors = {tuple(c) for c in read_mesh(path).face_colors.tolist()}
    assert len(colors - {tuple(BOUNDARY_COLOR.tolist())}) >= 10
