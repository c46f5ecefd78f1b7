"""Axis-aligned bounding volume hierarchy over triangles, as flat arrays.

Shared by both kernel backends; only the traversal is backend specific.
"""

import numpy as np

LEAF_SIZE = 4


def build_bvh(vertices, faces, leaf_size=LEAF_SIZE):
    """Median-split BVH.

    Returns a dict of arrays: per-triangle boxes ``tri_lo``/``tri_hi``; per
    node ``lo``, ``hi``, ``left``, ``right`` (``-1`` for leaves), ``start``
    and ``count`` into ``order`` (the permuted triangle ids).
    """
    tri = vertices[faces]
    tri_lo = tri.min(axis=1)
    tri_hi = tri.max(axis=1)
    cent = (tri_lo + tri_hi) * 0.5
    order = np.arange(len(faces), dtype=np.int64)

    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        ids = order[s:e]
        lo.append(tri_lo[ids].min(axis=0))
        hi.append(tri_hi[ids].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(lo) - 1

    stack = [(new_node(0, len(order)), 0, len(order))]
    while stack:
        node, s, e = stack.pop()
        if e - s <= leaf_size:
            continue
        ids = order[s:e]
        c = cent[ids]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (e - s) // 2
        part = np.argpartition(c[:, axis], mid, kind="introselect")
        order[s:e] = ids[part]
        m = s + mid
        ln = new_node(s, m)
        rn = new_node(m, e)
        left[node], right[node] = ln, rn
        count[node] = 0
        stack.append((rn, m, e))
        stack.append((ln, s, m))

    return {
        "tri_lo": np.ascontiguousarray(tri_lo),
        "tri_hi": np.ascontiguousarray(tri_hi),
        "lo": np.ascontiguousarray(np.array(lo, dtype=np.float64).reshape(-1, 3)),
        "hi": np.ascontiguousarray(np.array(hi, dtype=np.float64).reshape(-1, 3)),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "start": np.array(start, dtype=np.int64),
        "count": np.array(count, dtype=np.int64),
        "order": order,
    }
