"""Pure-Python kernels.

Reference behaviour for the compiled core in ``_ckernels.pyx``; both must
produce identical results, so the arithmetic here follows the same operation
order.
"""

from collections import deque

import numpy as np

from ._bvh import build_bvh

FREE, SOURCE, SINK = 0, 1, 2
NO_PARENT = -1
TERMINAL = -2


# ---------------------------------------------------------------------------
# Boykov-Kolmogorov max-flow
# ---------------------------------------------------------------------------


def _residual_graph(n, eu, ev, cap):
    """CSR arc lists; edge ``i`` yields arcs ``2i`` (u->v) and ``2i+1`` (v->u)."""
    m = len(eu)
    head = np.empty(2 * m, dtype=np.int64)
    tail = np.empty(2 * m, dtype=np.int64)
    tail[0::2], head[0::2] = eu, ev
    tail[1::2], head[1::2] = ev, eu
    order = np.argsort(tail, kind="stable")
    first = np.searchsorted(tail[order], np.arange(n + 1))
    res = np.repeat(np.asarray(cap, dtype=np.float64), 2)
    return order, first, head, res


def maxflow(n, eu, ev, cap, terminal):
    """Max-flow between the node sets labelled 1 (source) and 2 (sink).

    ``terminal`` nodes are tied to their terminal with unbounded capacity.
    Returns ``(flow_value, source_side)`` where ``source_side`` marks the
    nodes on the source side of a minimum cut.
    """
    arcs, first, head, res = _residual_graph(n, eu, ev, cap)
    arcs = arcs.tolist()
    first = first.tolist()
    head = head.tolist()
    res = res.tolist()
    tree = [int(t) for t in terminal]
    parent = [TERMINAL if t else NO_PARENT for t in tree]
    ts = [0] * n
    dist = [1 if t else 0 for t in tree]
    time = 0
    active = deque(i for i in range(n) if tree[i])
    orphans = deque()
    flow = 0.0

    while True:
        # growth
        path = None
        while active:
            p = active[0]
            if tree[p] == FREE:
                active.popleft()
                continue
            for k in range(first[p], first[p + 1]):
                a = arcs[k]
                cap_ok = res[a] > 0 if tree[p] == SOURCE else res[a ^ 1] > 0
                if not cap_ok:
                    continue
                q = head[a]
                if tree[q] == FREE:
                    tree[q] = tree[p]
                    parent[q] = a ^ 1
                    ts[q] = ts[p]
                    dist[q] = dist[p] + 1
                    active.append(q)
                elif tree[q] != tree[p]:
                    path = a if tree[p] == SOURCE else a ^ 1
                    break
            if path is not None:
                break
            active.popleft()
        if path is None:
            break

        # augmentation along  source root ... s -> t ... sink root
        time += 1
        s, t = head[path ^ 1], head[path]
        b = res[path]
        x = s
        while parent[x] != TERMINAL:
            a = parent[x] ^ 1
            if res[a] < b:
                b = res[a]
            x = head[parent[x]]
        y = t
        while parent[y] != TERMINAL:
            a = parent[y]
            if res[a] < b:
                b = res[a]
            y = head[a]
        res[path] -= b
        res[path ^ 1] += b
        x = s
        while parent[x] != TERMINAL:
            a = parent[x] ^ 1
            res[a] -= b
            res[a ^ 1] += b
            nxt = head[parent[x]]
            if res[a] == 0:
                parent[x] = NO_PARENT
                orphans.append(x)
            x = nxt
        y = t
        while parent[y] != TERMINAL:
            a = parent[y]
            res[a] -= b
            res[a ^ 1] += b
            nxt = head[a]
            if res[a] == 0:
                parent[y] = NO_PARENT
                orphans.append(y)
            y = nxt
        flow += b

        # adoption
        while orphans:
            p = orphans.popleft()
            side = tree[p]
            best_arc, best_d = NO_PARENT, None
            for k in range(first[p], first[p + 1]):
                a = arcs[k]
                q = head[a]
                if tree[q] != side:
                    continue
                if not (res[a ^ 1] > 0 if side == SOURCE else res[a] > 0):
                    continue
                # walk to a root; reject chains that end at an orphan
                d = 0
                j = q
                while True:
                    if ts[j] == time:
                        d += dist[j]
                        break
                    d += 1
                    if parent[j] == TERMINAL:
                        ts[j] = time
                        dist[j] = 1
                        break
                    if parent[j] == NO_PARENT:
                        d = None
                        break
                    j = head[parent[j]]
                if d is None:
                    continue
                if best_d is None or d < best_d:
                    best_arc, best_d = a, d
                j = q
                dd = d
                while ts[j] != time:
                    ts[j] = time
                    dist[j] = dd
                    dd -= 1
                    j = head[parent[j]]
            if best_arc != NO_PARENT:
                parent[p] = best_arc
                ts[p] = time
                dist[p] = best_d + 1
                continue
            for k in range(first[p], first[p + 1]):
                a = arcs[k]
                q = head[a]
                if tree[q] != side:
                    continue
                if res[a ^ 1] > 0 if side == SOURCE else res[a] > 0:
                    active.append(q)
                if parent[q] >= 0 and head[parent[q]] == p:
                    parent[q] = NO_PARENT
                    orphans.append(q)
            tree[p] = FREE

    return flow, np.array(tree, dtype=np.int8) == SOURCE


# ---------------------------------------------------------------------------
# triangle-triangle intersection
# ---------------------------------------------------------------------------


def orient3d(a, b, c, d):
    bx, by, bz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    cx, cy, cz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    dx, dy, dz = d[0] - a[0], d[1] - a[1], d[2] - a[2]
    return bx * (cy * dz - cz * dy) - by * (cx * dz - cz * dx) + bz * (cx * dy - cy * dx)


def _orient2d(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _seg_seg_2d(p, q, r, s):
    d1 = _orient2d(r, s, p)
    d2 = _orient2d(r, s, q)
    d3 = _orient2d(p, q, r)
    d4 = _orient2d(p, q, s)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_seg(r, s, p):
        return True
    if d2 == 0 and _on_seg(r, s, q):
        return True
    if d3 == 0 and _on_seg(p, q, r):
        return True
    if d4 == 0 and _on_seg(p, q, s):
        return True
    return False


def _on_seg(a, b, p):
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def _in_tri_2d(p, a, b, c):
    d1 = _orient2d(a, b, p)
    d2 = _orient2d(b, c, p)
    d3 = _orient2d(c, a, p)
    return (d1 >= 0 and d2 >= 0 and d3 >= 0) or (d1 <= 0 and d2 <= 0 and d3 <= 0)


def _coplanar(t1, t2):
    p, q, r = t1
    nx = (q[1] - p[1]) * (r[2] - p[2]) - (q[2] - p[2]) * (r[1] - p[1])
    ny = (q[2] - p[2]) * (r[0] - p[0]) - (q[0] - p[0]) * (r[2] - p[2])
    nz = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    ax, ay, az = abs(nx), abs(ny), abs(nz)
    if ax >= ay and ax >= az:
        i, j = 1, 2
    elif ay >= az:
        i, j = 0, 2
    else:
        i, j = 0, 1
    a = [(v[i], v[j]) for v in t1]
    b = [(v[i], v[j]) for v in t2]
    for k in range(3):
        for m in range(3):
            if _seg_seg_2d(a[k], a[(k + 1) % 3], b[m], b[(m + 1) % 3]):
                return True
    return _in_tri_2d(a[0], b[0], b[1], b[2]) or _in_tri_2d(b[0], a[0], a[1], a[2])


def _seg_tri(a, b, p, q, r):
    sa = orient3d(p, q, r, a)
    sb = orient3d(p, q, r, b)
    if (sa > 0 and sb > 0) or (sa < 0 and sb < 0) or (sa == 0 and sb == 0):
        return False
    s1 = orient3d(a, b, p, q)
    s2 = orient3d(a, b, q, r)
    s3 = orient3d(a, b, r, p)
    return (s1 >= 0 and s2 >= 0 and s3 >= 0) or (s1 <= 0 and s2 <= 0 and s3 <= 0)


def tri_tri_intersect(t1, t2):
    """Closed-set intersection test of two triangles given as 3x3 sequences."""
    p1, q1, r1 = t1
    p2, q2, r2 = t2
    a = orient3d(p1, q1, r1, p2)
    b = orient3d(p1, q1, r1, q2)
    c = orient3d(p1, q1, r1, r2)
    if (a > 0 and b > 0 and c > 0) or (a < 0 and b < 0 and c < 0):
        return False
    if a == 0 and b == 0 and c == 0:
        return _coplanar(t1, t2)
    a = orient3d(p2, q2, r2, p1)
    b = orient3d(p2, q2, r2, q1)
    c = orient3d(p2, q2, r2, r1)
    if (a > 0 and b > 0 and c > 0) or (a < 0 and b < 0 and c < 0):
        return False
    for u, v in ((p1, q1), (q1, r1), (r1, p1)):
        if _seg_tri(u, v, p2, q2, r2):
            return True
    for u, v in ((p2, q2), (q2, r2), (r2, p2)):
        if _seg_tri(u, v, p1, q1, r1):
            return True
    return False


def _share_vertex(fi, fj):
    return fi[0] in fj or fi[1] in fj or fi[2] in fj


def _boxes_overlap(alo, ahi, blo, bhi):
    return not (
        alo[0] > bhi[0] or blo[0] > ahi[0] or alo[1] > bhi[1] or blo[1] > ahi[1] or alo[2] > bhi[2] or blo[2] > ahi[2]
    )


def count_intersecting_pairs(vertices, faces):
    """Count pairs ``i < j`` of vertex-disjoint faces that intersect."""
    bvh = build_bvh(vertices, faces)
    V = vertices.tolist()
    Fl = faces.tolist()
    tlo, thi = bvh["tri_lo"].tolist(), bvh["tri_hi"].tolist()
    nlo, nhi = bvh["lo"].tolist(), bvh["hi"].tolist()
    left, right = bvh["left"].tolist(), bvh["right"].tolist()
    start, count = bvh["start"].tolist(), bvh["count"].tolist()
    order = bvh["order"].tolist()
    total = 0
    for i in range(len(Fl)):
        fi = Fl[i]
        ti = (V[fi[0]], V[fi[1]], V[fi[2]])
        stack = [0]
        while stack:
            node = stack.pop()
            if not _boxes_overlap(tlo[i], thi[i], nlo[node], nhi[node]):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    j = order[k]
                    if j <= i or not _boxes_overlap(tlo[i], thi[i], tlo[j], thi[j]):
                        continue
                    fj = Fl[j]
                    if _share_vertex(fi, fj):
                        continue
                    if tri_tri_intersect(ti, (V[fj[0]], V[fj[1]], V[fj[2]])):
                        total += 1
            else:
                stack.append(right[node])
                stack.append(left[node])
    return total


def count_intersecting_pairs_bruteforce(vertices, faces):
    """All-pairs reference count (no bounding volumes, no pruning)."""
    V = vertices.tolist()
    Fl = faces.tolist()
    total = 0
    for i in range(len(Fl)):
        ti = [V[k] for k in Fl[i]]
        for j in range(i + 1, len(Fl)):
            if _share_vertex(Fl[i], Fl[j]):
                continue
            if tri_tri_intersect(ti, [V[k] for k in Fl[j]]):
                total += 1
    return total
