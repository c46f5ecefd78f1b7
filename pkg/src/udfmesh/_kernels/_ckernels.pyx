# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: Boykov-Kolmogorov max-flow and BVH triangle-pair tests.

Mirrors ``_pykernels`` operation for operation so both backends agree
bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

from ._bvh import build_bvh
from ._pykernels import _residual_graph

cnp.import_array()

DEF FREE = 0
DEF SOURCE = 1
DEF SINK = 2
DEF NO_PARENT = -1
DEF TERMINAL = -2


cdef class _Queue:
    """Growable FIFO of node ids."""
    cdef long long *buf
    cdef Py_ssize_t cap, head, tail

    def __cinit__(self, Py_ssize_t cap):
        self.cap = max(cap, 16)
        self.buf = <long long *> malloc(self.cap * sizeof(long long))
        self.head = 0
        self.tail = 0
        if self.buf == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.buf)

    cdef inline bint empty(self):
        return self.head == self.tail

    cdef inline long long front(self):
        return self.buf[self.head]

    cdef inline long long pop(self):
        cdef long long v = self.buf[self.head]
        self.head += 1
        return v

    cdef void push(self, long long v) except *:
        cdef Py_ssize_t n
        cdef long long *nb
        if self.tail == self.cap:
            n = self.tail - self.head
            if n * 2 < self.cap:
                for i in range(n):
                    self.buf[i] = self.buf[self.head + i]
            else:
                nb = <long long *> malloc(2 * self.cap * sizeof(long long))
                if nb == NULL:
                    raise MemoryError()
                for i in range(n):
                    nb[i] = self.buf[self.head + i]
                free(self.buf)
                self.buf = nb
                self.cap *= 2
            self.head = 0
            self.tail = n
        self.buf[self.tail] = v
        self.tail += 1


def maxflow(Py_ssize_t n, eu, ev, cap, terminal):
    arcs_a, first_a, head_a, res_a = _residual_graph(n, eu, ev, cap)
    cdef cnp.int64_t[::1] arcs = np.ascontiguousarray(arcs_a, dtype=np.int64)
    cdef cnp.int64_t[::1] first = np.ascontiguousarray(first_a, dtype=np.int64)
    cdef cnp.int64_t[::1] head = np.ascontiguousarray(head_a, dtype=np.int64)
    cdef double[::1] res = np.ascontiguousarray(res_a, dtype=np.float64)
    tree_a = np.ascontiguousarray(terminal, dtype=np.int8).copy()
    cdef signed char[::1] tree = tree_a
    cdef cnp.int64_t[::1] parent = np.where(tree_a != 0, TERMINAL, NO_PARENT).astype(np.int64)
    cdef cnp.int64_t[::1] ts = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] dist = (tree_a != 0).astype(np.int64)
    cdef long long time = 0
    cdef _Queue active = _Queue(n)
    cdef _Queue orphans = _Queue(n)
    cdef double flow = 0.0
    cdef double b
    cdef long long p, q, a, k, x, y, s, t, j, nxt, path, best_arc, best_d, d, dd
    cdef signed char side
    cdef bint ok, found

    for p in range(n):
        if tree[p] != FREE:
            active.push(p)

    while True:
        path = -1
        while not active.empty():
            p = active.front()
            if tree[p] == FREE:
                active.pop()
                continue
            for k in range(first[p], first[p + 1]):
                a = arcs[k]
                if tree[p] == SOURCE:
                    ok = res[a] > 0
                else:
                    ok = res[a ^ 1] > 0
                if not ok:
                    continue
                q = head[a]
                if tree[q] == FREE:
                    tree[q] = tree[p]
                    parent[q] = a ^ 1
                    ts[q] = ts[p]
                    dist[q] = dist[p] + 1
                    active.push(q)
                elif tree[q] != tree[p]:
                    path = a if tree[p] == SOURCE else a ^ 1
                    break
            if path >= 0:
                break
            active.pop()
        if path < 0:
            break

        time += 1
        s = head[path ^ 1]
        t = head[path]
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
                orphans.push(x)
            x = nxt
        y = t
        while parent[y] != TERMINAL:
            a = parent[y]
            res[a] -= b
            res[a ^ 1] += b
            nxt = head[a]
            if res[a] == 0:
                parent[y] = NO_PARENT
                orphans.push(y)
            y = nxt
        flow += b

        while not orphans.empty():
            p = orphans.pop()
            side = tree[p]
            best_arc = NO_PARENT
            best_d = -1
            for k in range(first[p], first[p + 1]):
                a = arcs[k]
                q = head[a]
                if tree[q] != side:
                    continue
                if side == SOURCE:
                    ok = res[a ^ 1] > 0
                else:
                    ok = res[a] > 0
                if not ok:
                    continue
                d = 0
                j = q
                found = True
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
                        found = False
                        break
                    j = head[parent[j]]
                if not found:
                    continue
                if best_d < 0 or d < best_d:
                    best_arc = a
                    best_d = d
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
                if side == SOURCE:
                    ok = res[a ^ 1] > 0
                else:
                    ok = res[a] > 0
                if ok:
                    active.push(q)
                if parent[q] >= 0 and head[parent[q]] == p:
                    parent[q] = NO_PARENT
                    orphans.push(q)
            tree[p] = FREE

    return flow, tree_a == SOURCE


# ---------------------------------------------------------------------------
# triangle-triangle intersection
# ---------------------------------------------------------------------------

cdef inline double orient3d(const double *a, const double *b, const double *c, const double *d) nogil:
    cdef double bx = b[0] - a[0], by = b[1] - a[1], bz = b[2] - a[2]
    cdef double cx = c[0] - a[0], cy = c[1] - a[1], cz = c[2] - a[2]
    cdef double dx = d[0] - a[0], dy = d[1] - a[1], dz = d[2] - a[2]
    return bx * (cy * dz - cz * dy) - by * (cx * dz - cz * dx) + bz * (cx * dy - cy * dx)


cdef inline double orient2d(const double *a, const double *b, const double *c) nogil:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


cdef inline bint on_seg(const double *a, const double *b, const double *p) nogil:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])) and (min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


cdef bint seg_seg_2d(const double *p, const double *q, const double *r, const double *s) nogil:
    cdef double d1 = orient2d(r, s, p)
    cdef double d2 = orient2d(r, s, q)
    cdef double d3 = orient2d(p, q, r)
    cdef double d4 = orient2d(p, q, s)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and on_seg(r, s, p):
        return True
    if d2 == 0 and on_seg(r, s, q):
        return True
    if d3 == 0 and on_seg(p, q, r):
        return True
    if d4 == 0 and on_seg(p, q, s):
        return True
    return False


cdef bint in_tri_2d(const double *p, const double *a, const double *b, const double *c) nogil:
    cdef double d1 = orient2d(a, b, p)
    cdef double d2 = orient2d(b, c, p)
    cdef double d3 = orient2d(c, a, p)
    return (d1 >= 0 and d2 >= 0 and d3 >= 0) or (d1 <= 0 and d2 <= 0 and d3 <= 0)


cdef bint coplanar(const double *t1, const double *t2) nogil:
    # t1, t2: 9 doubles each (three xyz points)
    cdef const double *p = t1
    cdef const double *q = t1 + 3
    cdef const double *r = t1 + 6
    cdef double nx = (q[1] - p[1]) * (r[2] - p[2]) - (q[2] - p[2]) * (r[1] - p[1])
    cdef double ny = (q[2] - p[2]) * (r[0] - p[0]) - (q[0] - p[0]) * (r[2] - p[2])
    cdef double nz = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    cdef double ax = abs(nx), ay = abs(ny), az = abs(nz)
    cdef int i, j, k, m
    cdef double a[6]
    cdef double b[6]
    if ax >= ay and ax >= az:
        i = 1; j = 2
    elif ay >= az:
        i = 0; j = 2
    else:
        i = 0; j = 1
    for k in range(3):
        a[2 * k] = t1[3 * k + i]
        a[2 * k + 1] = t1[3 * k + j]
        b[2 * k] = t2[3 * k + i]
        b[2 * k + 1] = t2[3 * k + j]
    for k in range(3):
        for m in range(3):
            if seg_seg_2d(&a[2 * k], &a[2 * ((k + 1) % 3)], &b[2 * m], &b[2 * ((m + 1) % 3)]):
                return True
    return in_tri_2d(&a[0], &b[0], &b[2], &b[4]) or in_tri_2d(&b[0], &a[0], &a[2], &a[4])


cdef bint seg_tri(const double *a, const double *b, const double *p, const double *q, const double *r) nogil:
    cdef double sa = orient3d(p, q, r, a)
    cdef double sb = orient3d(p, q, r, b)
    if (sa > 0 and sb > 0) or (sa < 0 and sb < 0) or (sa == 0 and sb == 0):
        return False
    cdef double s1 = orient3d(a, b, p, q)
    cdef double s2 = orient3d(a, b, q, r)
    cdef double s3 = orient3d(a, b, r, p)
    return (s1 >= 0 and s2 >= 0 and s3 >= 0) or (s1 <= 0 and s2 <= 0 and s3 <= 0)


cdef bint tri_tri(const double *t1, const double *t2) nogil:
    cdef const double *p1 = t1
    cdef const double *q1 = t1 + 3
    cdef const double *r1 = t1 + 6
    cdef const double *p2 = t2
    cdef const double *q2 = t2 + 3
    cdef const double *r2 = t2 + 6
    cdef double a = orient3d(p1, q1, r1, p2)
    cdef double b = orient3d(p1, q1, r1, q2)
    cdef double c = orient3d(p1, q1, r1, r2)
    if (a > 0 and b > 0 and c > 0) or (a < 0 and b < 0 and c < 0):
        return False
    if a == 0 and b == 0 and c == 0:
        return coplanar(t1, t2)
    a = orient3d(p2, q2, r2, p1)
    b = orient3d(p2, q2, r2, q1)
    c = orient3d(p2, q2, r2, r1)
    if (a > 0 and b > 0 and c > 0) or (a < 0 and b < 0 and c < 0):
        return False
    if seg_tri(p1, q1, p2, q2, r2) or seg_tri(q1, r1, p2, q2, r2) or seg_tri(r1, p1, p2, q2, r2):
        return True
    if seg_tri(p2, q2, p1, q1, r1) or seg_tri(q2, r2, p1, q1, r1) or seg_tri(r2, p2, p1, q1, r1):
        return True
    return False


cdef inline bint boxes_overlap(const double *alo, const double *ahi, const double *blo, const double *bhi) nogil:
    return not (alo[0] > bhi[0] or blo[0] > ahi[0] or alo[1] > bhi[1] or blo[1] > ahi[1]
                or alo[2] > bhi[2] or blo[2] > ahi[2])


def tri_tri_intersect(t1, t2):
    cdef double[::1] a = np.ascontiguousarray(t1, dtype=np.float64).ravel()
    cdef double[::1] b = np.ascontiguousarray(t2, dtype=np.float64).ravel()
    return bool(tri_tri(&a[0], &b[0]))


def count_intersecting_pairs(vertices, faces):
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    bvh = build_bvh(vertices, faces)
    cdef double[:, ::1] V = vertices
    cdef cnp.int64_t[:, ::1] F = faces
    cdef double[:, ::1] tlo = bvh["tri_lo"]
    cdef double[:, ::1] thi = bvh["tri_hi"]
    cdef double[:, ::1] nlo = bvh["lo"]
    cdef double[:, ::1] nhi = bvh["hi"]
    cdef cnp.int64_t[::1] left = bvh["left"]
    cdef cnp.int64_t[::1] right = bvh["right"]
    cdef cnp.int64_t[::1] start = bvh["start"]
    cdef cnp.int64_t[::1] count = bvh["count"]
    cdef cnp.int64_t[::1] order = bvh["order"]
    cdef Py_ssize_t nf = F.shape[0]
    cdef Py_ssize_t depth_cap = 2 * left.shape[0] + 2
    cdef long long *stack = <long long *> malloc(depth_cap * sizeof(long long))
    if stack == NULL:
        raise MemoryError()
    cdef double ti[9]
    cdef double tj[9]
    cdef long long total = 0
    cdef Py_ssize_t i, c, sp, kk
    cdef long long node, j
    try:
        with nogil:
            for i in range(nf):
                for c in range(3):
                    ti[3 * c] = V[F[i, c], 0]
                    ti[3 * c + 1] = V[F[i, c], 1]
                    ti[3 * c + 2] = V[F[i, c], 2]
                sp = 0
                stack[sp] = 0
                sp += 1
                while sp > 0:
                    sp -= 1
                    node = stack[sp]
                    if not boxes_overlap(&tlo[i, 0], &thi[i, 0], &nlo[node, 0], &nhi[node, 0]):
                        continue
                    if left[node] < 0:
                        for kk in range(start[node], start[node] + count[node]):
                            j = order[kk]
                            if j <= i or not boxes_overlap(&tlo[i, 0], &thi[i, 0], &tlo[j, 0], &thi[j, 0]):
                                continue
                            if (F[i, 0] == F[j, 0] or F[i, 0] == F[j, 1] or F[i, 0] == F[j, 2]
                                    or F[i, 1] == F[j, 0] or F[i, 1] == F[j, 1] or F[i, 1] == F[j, 2]
                                    or F[i, 2] == F[j, 0] or F[i, 2] == F[j, 1] or F[i, 2] == F[j, 2]):
                                continue
                            for c in range(3):
                                tj[3 * c] = V[F[j, c], 0]
                                tj[3 * c + 1] = V[F[j, c], 1]
                                tj[3 * c + 2] = V[F[j, c], 2]
                            if tri_tri(ti, tj):
                                total += 1
                    else:
                        stack[sp] = right[node]
                        sp += 1
                        stack[sp] = left[node]
                        sp += 1
    finally:
        free(stack)
    return int(total)
