"""OBJ and PLY reading and writing for triangle meshes and point clouds.

Files store float32 coordinates by default; ``precision="double"`` writes
float64 so an intermediate mesh can be reloaded bit for bit.
"""

from __future__ import annotations

import os

import numpy as np

from .mesh import TriangleMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}  # fmt: skip


class MeshFormatError(ValueError):
    """Malformed mesh or point file; the message names the offending line."""


def _ext(path):
    return os.path.splitext(str(path))[1].lower()


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------


def _obj_index(token, n_vertices, lineno):
    try:
        i = int(token.split("/")[0])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: bad face index {token!r}") from None
    i = i - 1 if i > 0 else n_vertices + i
    if not 0 <= i < n_vertices:
        raise MeshFormatError(f"line {lineno}: face index {token!r} out of range")
    return i


def read_obj(path):
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"line {lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(t) for t in parts[1:4]])
                except ValueError:
                    raise MeshFormatError(f"line {lineno}: bad vertex coordinate") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshFormatError(f"line {lineno}: face needs at least 3 indices")
                idx = [_obj_index(t, len(verts), lineno) for t in parts[1:]]
                # polygons are fanned into triangles
                faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1))
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh, path, precision="single"):
    fmt = "%.9g" if precision == "single" else "%.17g"
    v = mesh.vertices.astype(np.float32) if precision == "single" else mesh.vertices
    with open(path, "w", encoding="utf-8") as fh:
        np.savetxt(fh, v, fmt=f"v {fmt} {fmt} {fmt}")
        np.savetxt(fh, mesh.faces + 1, fmt="f %d %d %d")


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def _parse_ply_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise MeshFormatError("line 1: missing 'ply' magic")
    fmt = None
    elements = []
    comments = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise MeshFormatError(f"line {lineno}: header ended without end_header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] == "obj_info":
            continue
        if parts[0] == "comment":
            comments.append(raw.decode("ascii", errors="replace").strip()[len("comment") :].strip())
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise MeshFormatError(f"line {lineno}: unsupported format {' '.join(parts[1:])!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise MeshFormatError(f"line {lineno}: malformed element record")
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"line {lineno}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise MeshFormatError(f"line {lineno}: malformed list property")
                elements[-1]["props"].append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise MeshFormatError(f"line {lineno}: malformed property")
                elements[-1]["props"].append((parts[2], _PLY_TYPES[parts[1]], None))
        elif parts[0] == "end_header":
            break
        else:
            raise MeshFormatError(f"line {lineno}: unknown header keyword {parts[0]!r}")
    if fmt is None:
        raise MeshFormatError("PLY header has no format line")
    return fmt, elements, comments, lineno


def _read_ascii_element(lines, el, lineno):
    rows = []
    for _ in range(el["count"]):
        lineno += 1
        try:
            tokens = next(lines).split()
        except StopIteration:
            raise MeshFormatError(f"line {lineno}: unexpected end of file in {el['name']}") from None
        pos = 0
        row = {}
        try:
            for name, t, item in el["props"]:
                if item is None:
                    # round through the declared type, as a binary file would
                    row[name] = float(np.dtype(t).type(tokens[pos]))
                    pos += 1
                else:
                    n = int(tokens[pos])
                    row[name] = [float(x) for x in tokens[pos + 1 : pos + 1 + n]]
                    if len(row[name]) != n:
                        raise IndexError
                    pos += 1 + n
        except (IndexError, ValueError):
            raise MeshFormatError(f"line {lineno}: malformed {el['name']} record") from None
        rows.append(row)
    return rows, lineno


def _read_binary_element(fh, el, order):
    props = el["props"]
    if all(item is None for _, _, item in props):
        dt = np.dtype([(name, order + t) for name, t, _ in props])
        data = np.frombuffer(fh.read(dt.itemsize * el["count"]), dtype=dt, count=el["count"])
        return {name: data[name].astype(np.float64) for name, _, _ in props}
    # list properties: fast path for constant-length lists (typical triangle faces)
    out = {name: [] for name, _, _ in props}
    for _ in range(el["count"]):
        for name, t, item in props:
            if item is None:
                out[name].append(np.frombuffer(fh.read(np.dtype(t).itemsize), order + t)[0])
            else:
                n = int(np.frombuffer(fh.read(np.dtype(t).itemsize), order + t)[0])
                out[name].append(np.frombuffer(fh.read(n * np.dtype(item).itemsize), order + item, count=n))
    return out


def _read_binary_faces(fh, el, order):
    """Face lists; read as one block when every face has the same length."""
    props = el["props"]
    if len(props) == 1 and props[0][2] is not None and el["count"]:
        _, ct, it = props[0]
        start = fh.tell()
        n = int(np.frombuffer(fh.read(np.dtype(ct).itemsize), order + ct)[0])
        fh.seek(start)
        dt = np.dtype([("n", order + ct), ("idx", order + it, (n,))])
        blob = fh.read(dt.itemsize * el["count"])
        if len(blob) == dt.itemsize * el["count"]:
            data = np.frombuffer(blob, dtype=dt)
            if np.all(data["n"] == n):
                return {props[0][0]: data["idx"].astype(np.int64)}
        fh.seek(start)
    return _read_binary_element(fh, el, order)


def _faces_from_lists(lists):
    if isinstance(lists, np.ndarray) and lists.ndim == 2 and lists.shape[1] >= 3:
        k = lists.shape[1]
        return np.stack([lists[:, [0, j, j + 1]] for j in range(1, k - 1)], axis=1).reshape(-1, 3)
    tris = []
    for poly in lists:
        poly = [int(i) for i in poly]
        if len(poly) < 3:
            raise MeshFormatError("face with fewer than 3 vertices")
        tris.extend([poly[0], poly[j], poly[j + 1]] for j in range(1, len(poly) - 1))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def read_ply(path):
    """Vertices and (possibly empty) faces from an ascii or binary PLY."""
    with open(path, "rb") as fh:
        fmt, elements, comments, lineno = _parse_ply_header(fh)
        verts = np.zeros((0, 3))
        faces = np.zeros((0, 3), dtype=np.int64)
        if fmt == "ascii":
            lines = iter(fh.read().decode("ascii", errors="replace").splitlines())
            for el in elements:
                rows, lineno = _read_ascii_element(lines, el, lineno)
                if el["name"] == "vertex":
                    try:
                        verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64).reshape(-1, 3)
                    except KeyError:
                        raise MeshFormatError("vertex element lacks x, y or z") from None
                elif el["name"] == "face":
                    key = _face_key(el)
                    faces = _faces_from_lists(r[key] for r in rows)
        else:
            order = "<" if fmt == "binary_little_endian" else ">"
            for el in elements:
                if el["name"] == "face":
                    data = _read_binary_faces(fh, el, order)
                    faces = _faces_from_lists(data[_face_key(el)])
                else:
                    data = _read_binary_element(fh, el, order)
                    if el["name"] == "vertex":
                        try:
                            verts = np.column_stack([np.asarray(data[c], dtype=np.float64) for c in "xyz"])
                        except KeyError:
                            raise MeshFormatError("vertex element lacks x, y or z") from None
    return TriangleMesh(verts.reshape(-1, 3), faces, {"comments": comments} if comments else {})


def _face_key(el):
    for name, _, item in el["props"]:
        if item is not None and name in ("vertex_indices", "vertex_index"):
            return name
    raise MeshFormatError("face element has no vertex_indices list")


def write_ply(mesh, path, binary=True, precision="single", comments=()):
    vt = "f4" if precision == "single" else "f8"
    vname = "float" if precision == "single" else "double"
    header = [
        "ply",
        "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
        *(f"comment {c}" for c in comments),
        f"element vertex {mesh.n_vertices}",
        f"property {vname} x",
        f"property {vname} y",
        f"property {vname} z",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(mesh.vertices.astype("<" + vt).tobytes())
            rec = np.zeros(mesh.n_faces, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            rec["n"] = 3
            rec["idx"] = mesh.faces
            fh.write(rec.tobytes())
        else:
            fmt = "%.9g" if precision == "single" else "%.17g"
            v = mesh.vertices.astype(np.float32) if precision == "single" else mesh.vertices
            np.savetxt(fh, v, fmt=f"{fmt} {fmt} {fmt}")
            np.savetxt(fh, mesh.faces, fmt="3 %d %d %d")


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def load_mesh(path):
    ext = _ext(path)
    if ext == ".obj":
        return read_obj(path)
    if ext == ".ply":
        return read_ply(path)
    raise MeshFormatError(f"unsupported mesh extension {ext!r} (use .obj or .ply)")


def save_mesh(mesh, path, binary=True, precision="single", comments=()):
    """Write ``.obj`` or ``.ply``; ``comments`` only survive in PLY headers."""
    ext = _ext(path)
    if ext == ".obj":
        write_obj(mesh, path, precision)
    elif ext == ".ply":
        write_ply(mesh, path, binary, precision, comments)
    else:
        raise MeshFormatError(f"unsupported mesh extension {ext!r} (use .obj or .ply)")


def load_points(path):
    """``(N, 3)`` points from ``.xyz``/``.txt``/``.pts``, ``.ply``, ``.obj`` or ``.npy``."""
    ext = _ext(path)
    if ext in (".ply", ".obj"):
        pts = load_mesh(path).vertices
    elif ext == ".npy":
        pts = np.load(path)
    elif ext in (".xyz", ".txt", ".pts", ".csv"):
        rows = []
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            for lineno, line in enumerate(fh, 1):
                tokens = line.split("#", 1)[0].replace(",", " ").split()
                if not tokens:
                    continue
                try:
                    rows.append([float(t) for t in tokens[:3]])
                except ValueError:
                    raise MeshFormatError(f"line {lineno}: bad coordinate") from None
                if len(rows[-1]) != 3:
                    raise MeshFormatError(f"line {lineno}: point needs 3 coordinates")
        pts = np.array(rows, dtype=np.float64)
    else:
        raise MeshFormatError(f"unsupported point-cloud extension {ext!r}")
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise MeshFormatError(f"expected (N, 3) points, got shape {pts.shape}")
    return pts


def save_points(points, path):
    ext = _ext(path)
    points = np.asarray(points, dtype=np.float64)
    if ext == ".ply":
        write_ply(TriangleMesh(points, np.zeros((0, 3), dtype=np.int64)), path, binary=False, precision="double")
    elif ext == ".npy":
        np.save(path, points)
    else:
        np.savetxt(path, points, fmt="%.17g")

