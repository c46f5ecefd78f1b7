"""Analytic test surfaces with exact closest-point queries.

Every shape lives inside the unit box and answers ``closest_point`` for an
``(N, 3)`` array of queries.  Unsigned distance and its gradient follow from
the closest point, which keeps the field module free of per-shape algebra.
Shapes also know their area and how to draw area-uniform samples, which is
what the fixture generator and the Chamfer references need.
"""

from __future__ import annotations

import math

import numpy as np

CENTER = np.array([0.5, 0.5, 0.5])


def _as_points(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 3)


def _closest_on_rect(x, origin, u, v, a, b):
    """Closest point on the rectangle ``origin + s*u + t*v``, ``s, t`` in ``[-a, a] x [-b, b]``.

    ``u`` and ``v`` are orthonormal.
    """
    d = x - origin
    s = np.clip(d @ u, -a, a)
    t = np.clip(d @ v, -b, b)
    return origin + s[:, None] * u + t[:, None] * v


class Shape:
    name = "shape"
    closed = False
    # unbounded shapes have no finite area to sample from
    samplable = True

    def closest_point(self, x):
        raise NotImplementedError

    def distance(self, x):
        x = _as_points(x)
        return np.linalg.norm(x - self.closest_point(x), axis=1)

    @property
    def area(self):
        raise NotImplementedError

    def sample(self, n, rng):
        raise NotImplementedError


class Sphere(Shape):
    name = "sphere"
    closed = True

    def __init__(self, center=CENTER, radius=0.3):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def closest_point(self, x):
        x = _as_points(x)
        d = x - self.center
        n = np.linalg.norm(d, axis=1)
        # the center is equidistant to everything; pick +z deterministically
        at_center = n == 0.0
        d[at_center] = (0.0, 0.0, 1.0)
        n[at_center] = 1.0
        return self.center + self.radius * d / n[:, None]

    def distance(self, x):
        x = _as_points(x)
        return np.abs(np.linalg.norm(x - self.center, axis=1) - self.radius)

    @property
    def area(self):
        return 4.0 * math.pi * self.radius**2

    def sample(self, n, rng):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1)[:, None]
        return self.center + self.radius * d


class Hemisphere(Sphere):
    """Upper half (``z >= center z``) of a sphere; open, with one rim circle."""

    name = "hemisphere"
    closed = False

    def closest_point(self, x):
        x = _as_points(x)
        d = x - self.center
        upper = d[:, 2] >= 0.0
        out = np.empty_like(x)
        out[upper] = Sphere.closest_point(self, x[upper])
        # below the equator the nearest point lies on the rim circle
        lo = d[~upper]
        horiz = lo.copy()
        horiz[:, 2] = 0.0
        hn = np.linalg.norm(horiz, axis=1)
        axis_hit = hn == 0.0
        horiz[axis_hit] = (1.0, 0.0, 0.0)
        hn[axis_hit] = 1.0
        out[~upper] = self.center + self.radius * horiz / hn[:, None]
        return out

    def distance(self, x):
        return Shape.distance(self, x)

    @property
    def area(self):
        return 2.0 * math.pi * self.radius**2

    def sample(self, n, rng):
        p = Sphere.sample(self, n, rng)
        below = p[:, 2] < self.center[2]
        p[below, 2] = 2.0 * self.center[2] - p[below, 2]
        return p


class Torus(Shape):
    name = "torus"
    closed = True

    def __init__(self, center=CENTER, major=0.25, minor=0.1):
        self.center = np.asarray(center, dtype=np.float64)
        self.major = float(major)
        self.minor = float(minor)

    def closest_point(self, x):
        x = _as_points(x)
        d = x - self.center
        horiz = d.copy()
        horiz[:, 2] = 0.0
        hn = np.linalg.norm(horiz, axis=1)
        on_axis = hn == 0.0
        horiz[on_axis] = (1.0, 0.0, 0.0)
        hn[on_axis] = 1.0
        ring = self.major * horiz / hn[:, None]
        tube = d - ring
        tn = np.linalg.norm(tube, axis=1)
        on_ring = tn == 0.0
        tube[on_ring] = (0.0, 0.0, 1.0)
        tn[on_ring] = 1.0
        return self.center + ring + self.minor * tube / tn[:, None]

    @property
    def area(self):
        return 4.0 * math.pi**2 * self.major * self.minor

    def sample(self, n, rng):
        # rejection on the tube angle gives area-uniform samples
        out = np.empty((0, 3))
        R, a = self.major, self.minor
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            theta = rng.uniform(0.0, 2.0 * math.pi, m)
            phi = rng.uniform(0.0, 2.0 * math.pi, m)
            keep = rng.uniform(0.0, R + a, m) < R + a * np.cos(phi)
            theta, phi = theta[keep], phi[keep]
            rho = R + a * np.cos(phi)
            p = np.stack([rho * np.cos(theta), rho * np.sin(theta), a * np.sin(phi)], axis=1)
            out = np.concatenate([out, p + self.center])
        return out[:n]


class Rectangle(Shape):
    """Flat open sheet; by default ``z = 0.5`` over ``[0.3, 0.7]^2``."""

    name = "sheet"

    def __init__(self, origin=CENTER, u=(1.0, 0.0, 0.0), v=(0.0, 1.0, 0.0), half_u=0.2, half_v=0.2):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.u = np.asarray(u, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.half_u = float(half_u)
        self.half_v = float(half_v)

    def closest_point(self, x):
        return _closest_on_rect(_as_points(x), self.origin, self.u, self.v, self.half_u, self.half_v)

    @property
    def area(self):
        return 4.0 * self.half_u * self.half_v

    def sample(self, n, rng):
        s = rng.uniform(-self.half_u, self.half_u, n)
        t = rng.uniform(-self.half_v, self.half_v, n)
        return self.origin + s[:, None] * self.u + t[:, None] * self.v


class Union(Shape):
    """Union of shapes; ties in distance go to the lowest part index."""

    def __init__(self, parts, name="union"):
        self.parts = list(parts)
        self.name = name

    def closest_point(self, x):
        x = _as_points(x)
        cps = np.stack([p.closest_point(x) for p in self.parts])
        dist = np.linalg.norm(x[None] - cps, axis=2)
        best = np.argmin(dist, axis=0)
        return cps[best, np.arange(len(x))]

    @property
    def area(self):
        return sum(p.area for p in self.parts)

    def sample(self, n, rng):
        areas = np.array([p.area for p in self.parts])
        counts = rng.multinomial(n, areas / areas.sum())
        return np.concatenate([p.sample(c, rng) for p, c in zip(self.parts, counts)])


def crossing_rectangles():
    """Two perpendicular sheets meeting along a line; a non-manifold surface."""
    return Union(
        [
            Rectangle(),
            Rectangle(u=(0.0, 1.0, 0.0), v=(0.0, 0.0, 1.0)),
        ],
        name="crossing",
    )


class Cone(Shape):
    """Open lateral cone surface with its tip at ``apex`` pointing down ``-z``.

    Distances reduce to a point-segment problem in the meridian half-plane.
    """

    name = "cone"

    def __init__(self, apex=(0.5, 0.5, 0.25), height=0.5, radius=0.2):
        self.apex = np.asarray(apex, dtype=np.float64)
        self.height = float(height)
        self.radius = float(radius)

    def closest_point(self, x):
        x = _as_points(x)
        d = x - self.apex
        horiz = d.copy()
        horiz[:, 2] = 0.0
        rho = np.linalg.norm(horiz, axis=1)
        on_axis = rho == 0.0
        horiz[on_axis] = (1.0, 0.0, 0.0)
        unit = horiz / np.where(on_axis, 1.0, rho)[:, None]
        seg = np.array([self.radius, self.height])
        q = np.stack([rho, d[:, 2]], axis=1)
        t = np.clip(q @ seg / (seg @ seg), 0.0, 1.0)
        return self.apex + t[:, None] * (self.radius * unit + np.array([0.0, 0.0, self.height]))

    @property
    def area(self):
        return math.pi * self.radius * math.hypot(self.radius, self.height)

    def sample(self, n, rng):
        # lateral area grows linearly with the distance from the apex
        t = np.sqrt(rng.uniform(0.0, 1.0, n))
        theta = rng.uniform(0.0, 2.0 * math.pi, n)
        p = np.stack(
            [t * self.radius * np.cos(theta), t * self.radius * np.sin(theta), t * self.height], axis=1
        )
        return p + self.apex


class Plane(Shape):
    """Unbounded plane ``z = level``; its distance field is piecewise linear."""

    name = "plane"
    samplable = False

    def __init__(self, level=0.5):
        self.level = float(level)

    def closest_point(self, x):
        x = _as_points(x).copy()
        x[:, 2] = self.level
        return x

    def distance(self, x):
        return np.abs(_as_points(x)[:, 2] - self.level)


SHAPES = {
    "sphere": Sphere,
    "torus": Torus,
    "sheet": Rectangle,
    "hemisphere": Hemisphere,
    "crossing": crossing_rectangles,
    "cone": Cone,
    "plane": Plane,
}


def make_shape(shape_id):
    try:
        factory = SHAPES[shape_id]
    except KeyError:
        raise ValueError(f"unknown shape id {shape_id!r}; expected one of {sorted(SHAPES)}") from None
    return factory()
