import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from udfmesh.mesh import TriangleMesh, topology_report
from udfmesh.meshio import (
    MeshFormatError,
    load_mesh,
    load_points,
    read_obj,
    read_ply,
    save_mesh,
    save_points,
    write_ply,
)

from .conftest import random_closed_mesh, tetra, torus_mesh


class TestRoundTrip:
    @pytest.mark.parametrize("name", ["m.obj", "m.ply"])
    def test_tetrahedron_faces_identical(self, tmp_path, name):
        save_mesh(tetra(), tmp_path / name)
        back = load_mesh(tmp_path / name)
        assert_array_equal(back.faces, tetra().faces)
        assert_array_equal(back.vertices, tetra().vertices)

    @pytest.mark.parametrize("binary", [True, False])
    @pytest.mark.parametrize("precision", ["single", "double"])
    def test_ply_precision(self, tmp_path, binary, precision):
        m = random_closed_mesh(40, seed=1)
        path = tmp_path / "m.ply"
        write_ply(m, path, binary=binary, precision=precision)
        back = read_ply(path)
        assert_array_equal(back.faces, m.faces)
        expected = m.vertices if precision == "double" else m.vertices.astype(np.float32).astype(np.float64)
        assert_array_equal(back.vertices, expected)

    @pytest.mark.parametrize("name", ["t.obj", "t.ply"])
    def test_topology_preserved(self, tmp_path, name):
        m = torus_mesh()
        save_mesh(m, tmp_path / name)
        assert topology_report(load_mesh(tmp_path / name)) == topology_report(m)

    def test_ply_comments(self, tmp_path):
        path = tmp_path / "c.ply"
        save_mesh(tetra(), path, comments=["hello world", "stage=fine"])
        assert read_ply(path).meta["comments"] == ["hello world", "stage=fine"]

    def test_ply_binary_layout(self, tmp_path):
        path = tmp_path / "b.ply"
        save_mesh(tetra(), path)
        blob = path.read_bytes()
        body = blob[blob.index(b"end_header\n") + len(b"end_header\n") :]
        assert len(body) == 4 * 3 * 4 + 4 * (1 + 3 * 4)
        first = body[48 : 48 + 13]
        assert struct.unpack("<B3i", first) == (3, 0, 2, 1)


class TestObj:
    def test_one_based_and_negative_indices(self, tmp_path):
        path = tmp_path / "q.obj"
        path.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\nf -4 -2 -1\n")
        m = read_obj(path)
        assert_array_equal(m.faces, [[0, 1, 2], [0, 2, 3]])

    def test_polygon_fan(self, tmp_path):
        path = tmp_path / "p.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        assert_array_equal(read_obj(path).faces, [[0, 1, 2], [0, 2, 3]])

    @pytest.mark.parametrize(
        "text, line",
        [
            ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n", 4),
            ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n", 4),
            ("v 0 0 0\nv 1 0 0\n\nv 0 1 0\nf 1 2 9\n", 5),
            ("v 0 0\n", 1),
            ("v 0 0 zero\n", 1),
        ],
    )
    def test_malformed_reports_line(self, tmp_path, text, line):
        path = tmp_path / "bad.obj"
        path.write_text(text)
        with pytest.raises(MeshFormatError, match=f"line {line}:"):
            read_obj(path)


class TestPly:
    def test_big_endian_and_extra_properties(self, tmp_path):
        header = (
            "ply\nformat binary_big_endian 1.0\nelement vertex 3\nproperty double x\nproperty double y\n"
            "property double z\nproperty uchar red\nelement face 1\nproperty list uchar uint vertex_indices\n"
            "end_header\n"
        )
        verts = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]
        body = b"".join(struct.pack(">dddB", *v, 7) for v in verts) + struct.pack(">B3I", 3, 0, 1, 2)
        path = tmp_path / "be.ply"
        path.write_bytes(header.encode() + body)
        m = read_ply(path)
        assert_array_equal(m.vertices, verts)
        assert_array_equal(m.faces, [[0, 1, 2]])

    def test_mixed_polygon_sizes_binary(self, tmp_path):
        header = (
            "ply\nformat binary_little_endian 1.0\nelement vertex 5\nproperty float x\nproperty float y\n"
            "property float z\nelement face 2\nproperty list uchar int vertex_indices\nend_header\n"
        )
        verts = np.arange(15, dtype="<f4").tobytes()
        body = struct.pack("<B4i", 4, 0, 1, 2, 3) + struct.pack("<B3i", 3, 1, 2, 4)
        path = tmp_path / "mixed.ply"
        path.write_bytes(header.encode() + verts + body)
        assert_array_equal(read_ply(path).faces, [[0, 1, 2], [0, 2, 3], [1, 2, 4]])

    def test_ascii_with_comments(self, tmp_path):
        path = tmp_path / "a.ply"
        path.write_text(
            "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty float x\nproperty float y\n"
            "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
        )
        m = read_ply(path)
        assert m.n_faces == 1 and m.meta["comments"] == ["made by hand"]

    @pytest.mark.parametrize(
        "text, line",
        [
            ("plx\n", 1),
            ("ply\nformat ascii 1.0\nelement vertex\n", 3),
            ("ply\nformat ascii 1.0\nproperty float x\n", 3),
            ("ply\nformat weird 1.0\n", 2),
            ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n", 7),
        ],
    )
    def test_malformed_header_reports_line(self, tmp_path, text, line):
        path = tmp_path / "bad.ply"
        path.write_text(text)
        with pytest.raises(MeshFormatError, match=f"line {line}"):
            read_ply(path)

    def test_truncated_ascii_body(self, tmp_path):
        path = tmp_path / "t.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
            "end_header\n0 0 0\n1 0 0\n"
        )
        with pytest.raises(MeshFormatError, match="unexpected end"):
            read_ply(path)


class TestDispatch:
    def test_unknown_extension(self, tmp_path):
        with pytest.raises(MeshFormatError, match="extension"):
            save_mesh(tetra(), tmp_path / "m.stl")
        with pytest.raises(MeshFormatError, match="extension"):
            load_mesh(tmp_path / "m.stl")

    @pytest.mark.parametrize("name", ["p.xyz", "p.ply", "p.npy", "p.txt"])
    def test_points_round_trip(self, tmp_path, name):
        pts = np.random.default_rng(0).normal(size=(50, 3))
        save_points(pts, tmp_path / name)
        assert_array_equal(load_points(tmp_path / name), pts)

    def test_points_from_mesh(self, tmp_path):
        save_mesh(tetra(), tmp_path / "m.obj")
        assert load_points(tmp_path / "m.obj").shape == (4, 3)

    def test_bad_point_line(self, tmp_path):
        path = tmp_path / "p.xyz"
        path.write_text("0 0 0\n1 2\n")
        with pytest.raises(MeshFormatError, match="line 2"):
            load_points(path)

    def test_empty_mesh_round_trip(self, tmp_path):
        m = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        save_mesh(m, tmp_path / "e.ply")
        assert load_mesh(tmp_path / "e.ply").is_empty()
