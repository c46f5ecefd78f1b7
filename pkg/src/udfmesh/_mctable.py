"""Marching-cubes case table keyed by corner signs and face-saddle decisions.

Rather than hard-coding the classic 256-entry table, the table is derived:
for each inside/outside corner pattern and each resolution of the ambiguous
faces, the iso-curve segments on the six cube faces are oriented, chained
into closed loops and triangulated.  Because a face's segments depend only
on the four values on that face, neighbouring cubes always agree on the
shared boundary and the output is watertight.

Corner ``c`` sits at ``(c & 1, (c >> 1) & 1, (c >> 2) & 1)``.  Local vertex
ids ``0..11`` are edge intersections; ids ``12 + j`` are the centre points of
loops that cannot be fanned without creating a duplicate edge.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

CORNERS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])

# (corner a, corner b, axis) with a < b
EDGES = [(a, a | (1 << axis), axis) for axis in range(3) for a in range(8) if not a & (1 << axis)]
_EDGE_OF = {(a, b): i for i, (a, b, _) in enumerate(EDGES)}


def _face(axis, side):
    u, v = [a for a in range(3) if a != axis]
    corners = []
    for bu, bv in ((0, 0), (1, 0), (1, 1), (0, 1)):
        corners.append((side << axis) | (bu << u) | (bv << v))
    edges = [_EDGE_OF[tuple(sorted((corners[i], corners[(i + 1) % 4])))] for i in range(4)]
    normal = np.zeros(3)
    normal[axis] = 1.0 if side else -1.0
    return corners, edges, normal


# face fi = 2 * axis + side
FACES = [_face(axis, side) for axis in range(3) for side in range(2)]
EDGE_FACES = [frozenset(fi for fi, (_, e, _) in enumerate(FACES) if i in e) for i in range(12)]
_MID = np.array([(CORNERS[a] + CORNERS[b]) / 2.0 for a, b, _ in EDGES])


def ambiguous_faces(config):
    """Bitmask of faces whose corner signs alternate around the face."""
    mask = 0
    for fi, (corners, _, _) in enumerate(FACES):
        s = [(config >> c) & 1 for c in corners]
        if s[0] == s[2] and s[1] == s[3] and s[0] != s[1]:
            mask |= 1 << fi
    return mask


def _segments(config, facebits):
    inside = [(config >> c) & 1 for c in range(8)]
    nxt = {}
    for fi, (corners, edges, normal) in enumerate(FACES):
        crossing = [e for e in edges if inside[EDGES[e][0]] != inside[EDGES[e][1]]]
        if not crossing:
            continue
        if len(crossing) == 2:
            pairs = [tuple(crossing)]
        else:
            # ambiguous face: cut off the corners that are *not* joined
            cut_state = 0 if (facebits >> fi) & 1 else 1
            pairs = [(edges[i - 1], edges[i]) for i, q in enumerate(corners) if inside[q] == cut_state]
        for p, q in pairs:
            a = EDGES[p][0]
            side = np.cross(_MID[q] - _MID[p], normal) @ (CORNERS[a] - (_MID[p] + _MID[q]) / 2.0)
            if (side > 0) != bool(inside[a]):
                p, q = q, p
            if p in nxt:
                raise AssertionError(f"edge {p} has two outgoing segments (config {config})")
            nxt[p] = q
    return nxt


def _loops(nxt):
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, e = [], start
        while e not in seen:
            seen.add(e)
            loop.append(e)
            e = nxt[e]
        if e != start:
            raise AssertionError("segment chain does not close")
        loops.append(loop)
    return loops


def _fan_apex(loop):
    n = len(loop)
    for i in range(n):
        ok = True
        for j in range(n):
            if (j - i) % n in (0, 1, n - 1):
                continue
            if EDGE_FACES[loop[i]] & EDGE_FACES[loop[j]]:
                ok = False
                break
        if ok:
            return i
    return None


def polygonize(config, facebits):
    """Triangles (local vertex ids) and centre loops for one cube case."""
    tris, centres = [], []
    for loop in _loops(_segments(config, facebits)):
        n = len(loop)
        apex = _fan_apex(loop) if n > 3 else 0
        if apex is None:
            c = 12 + len(centres)
            centres.append(loop)
            tris.extend((c, loop[j], loop[(j + 1) % n]) for j in range(n))
        else:
            ring = loop[apex:] + loop[:apex]
            tris.extend((ring[0], ring[j], ring[j + 1]) for j in range(1, n - 1))
    return tris, centres


@lru_cache(maxsize=None)
def case_table():
    """Dense lookup arrays.

    Returns ``(row_of_key, triangles, centres)`` where ``key = config * 64 +
    facebits``; ``triangles[row]`` is ``(T, 3)`` padded with ``-1`` and
    ``centres[row]`` is ``(C, 12)`` edge lists padded with ``-1``.
    """
    entries = []
    row_of_key = np.full(256 * 64, -1, dtype=np.int64)
    for config in range(256):
        amb = ambiguous_faces(config)
        sub = amb
        while True:
            row_of_key[config * 64 + sub] = len(entries)
            entries.append(polygonize(config, sub))
            if sub == 0:
                break
            sub = (sub - 1) & amb
    max_t = max(len(t) for t, _ in entries)
    max_c = max(1, max(len(c) for _, c in entries))
    tri = np.full((len(entries), max_t, 3), -1, dtype=np.int64)
    cen = np.full((len(entries), max_c, 12), -1, dtype=np.int64)
    for i, (t, c) in enumerate(entries):
        if t:
            tri[i, : len(t)] = t
        for j, loop in enumerate(c):
            cen[i, j, : len(loop)] = loop
    return row_of_key, tri, cen
