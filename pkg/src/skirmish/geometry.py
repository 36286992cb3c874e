"""2D geometry primitives shared by the world simulation and the navigation mesh.

Convention: polygons are sequences of (x, y) vertices in counter-clockwise
order.  All convex-polygon helpers assume (and, where noted, enforce) CCW
winding.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

Vec2 = tuple[float, float]


def cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def poly_area(vertices: Sequence[Vec2]) -> float:
    """Signed shoelace area (positive for CCW winding)."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def ensure_ccw(vertices: Sequence[Vec2]) -> tuple[Vec2, ...]:
    verts = tuple((float(x), float(y)) for x, y in vertices)
    if poly_area(verts) < 0.0:
        return tuple(reversed(verts))
    return verts


def is_convex(vertices: Sequence[Vec2], eps: float = 1e-9) -> bool:
    """True when the CCW polygon never turns clockwise at a vertex."""
    n = len(vertices)
    if n < 3:
        return False
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        x2, y2 = vertices[(i + 2) % n]
        if cross(x1 - x0, y1 - y0, x2 - x1, y2 - y1) < -eps:
            return False
    return True


def centroid(vertices: Sequence[Vec2]) -> Vec2:
    area = poly_area(vertices)
    if abs(area) < 1e-12:
        xs = [v[0] for v in vertices]
        ys = [v[1] for v in vertices]
        return (sum(xs) / len(xs), sum(ys) / len(ys))
    cx = cy = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        w = x0 * y1 - x1 * y0
        cx += (x0 + x1) * w
        cy += (y0 + y1) * w
    return (cx / (6.0 * area), cy / (6.0 * area))


def point_in_convex(px: float, py: float, vertices: Sequence[Vec2], eps: float = 1e-9) -> bool:
    """Point-in-polygon for a convex CCW polygon; boundary counts as inside."""
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        if cross(x1 - x0, y1 - y0, px - x0, py - y0) < -eps:
            return False
    return True


def segments_intersect(p: Vec2, q: Vec2, a: Vec2, b: Vec2, eps: float = 1e-12) -> bool:
    """Proper or touching intersection test between segments pq and ab."""
    d1 = cross(q[0] - p[0], q[1] - p[1], a[0] - p[0], a[1] - p[1])
    d2 = cross(q[0] - p[0], q[1] - p[1], b[0] - p[0], b[1] - p[1])
    d3 = cross(b[0] - a[0], b[1] - a[1], p[0] - a[0], p[1] - a[1])
    d4 = cross(b[0] - a[0], b[1] - a[1], q[0] - a[0], q[1] - a[1])
    if ((d1 > eps) != (d2 > eps)) and ((d3 > eps) != (d4 > eps)) and (
        (d1 < -eps) != (d2 < -eps) or (d3 < -eps) != (d4 < -eps)
    ):
        return True
    # Collinear / endpoint-touching cases.
    def on_segment(ax, ay, bx, by, cx, cy):
        return (
            abs(cross(bx - ax, by - ay, cx - ax, cy - ay)) <= eps
            and min(ax, bx) - eps <= cx <= max(ax, bx) + eps
            and min(ay, by) - eps <= cy <= max(ay, by) + eps
        )

    return (
        on_segment(p[0], p[1], q[0], q[1], a[0], a[1])
        or on_segment(p[0], p[1], q[0], q[1], b[0], b[1])
        or on_segment(a[0], a[1], b[0], b[1], p[0], p[1])
        or on_segment(a[0], a[1], b[0], b[1], q[0], q[1])
    )


def segment_crosses_polygon(p: Vec2, q: Vec2, vertices: Sequence[Vec2]) -> bool:
    """True if segment pq touches the convex polygon (edge crossing or containment)."""
    if point_in_convex(*p, vertices) or point_in_convex(*q, vertices):
        return True
    n = len(vertices)
    for i in range(n):
        if segments_intersect(p, q, vertices[i], vertices[(i + 1) % n]):
            return True
    return False


def segment_crosses_polygon_interior(
    p: Vec2, q: Vec2, vertices: Sequence[Vec2], eps: float = 1e-9
) -> bool:
    """True if segment pq passes through the polygon's interior (not just grazing)."""
    # Clip the segment against each CCW half-plane and check the surviving span.
    t0, t1 = 0.0, 1.0
    dx, dy = q[0] - p[0], q[1] - p[1]
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        ex, ey = x1 - x0, y1 - y0
        # Inside condition: cross(e, point - v0) >= 0
        num = cross(ex, ey, p[0] - x0, p[1] - y0)
        den = cross(ex, ey, dx, dy)
        if abs(den) < 1e-15:
            if num < -eps:
                return False
            continue
        t_hit = -num / den
        if den > 0:
            t0 = max(t0, t_hit)
        else:
            t1 = min(t1, t_hit)
        if t0 >= t1 - eps:
            return False
    return t1 - t0 > eps


def inflate_convex(vertices: Sequence[Vec2], radius: float) -> tuple[Vec2, ...]:
    """Outward offset of a convex CCW polygon by ``radius``.

    Implemented as the intersection of outward-shifted edge half-planes, so
    corners stay sharp (a conservative superset of the disc Minkowski sum).
    """
    if radius == 0.0:
        return ensure_ccw(vertices)
    verts = ensure_ccw(vertices)
    n = len(verts)
    # Shift each edge along its outward normal, then intersect consecutive lines.
    lines = []  # (point, direction)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        ex, ey = x1 - x0, y1 - y0
        length = math.hypot(ex, ey)
        if length < 1e-12:
            continue
        nx, ny = ey / length, -ex / length  # outward normal for CCW
        lines.append(((x0 + radius * nx, y0 + radius * ny), (ex, ey)))
    out: list[Vec2] = []
    m = len(lines)
    for i in range(m):
        (p0, d0) = lines[i]
        (p1, d1) = lines[(i + 1) % m]
        den = cross(d0[0], d0[1], d1[0], d1[1])
        if abs(den) < 1e-12:
            # Collinear consecutive edges: keep the shared endpoint.
            out.append((p1[0], p1[1]))
            continue
        t = cross(p1[0] - p0[0], p1[1] - p0[1], d1[0], d1[1]) / den
        out.append((p0[0] + t * d0[0], p0[1] + t * d0[1]))
    return tuple(out)


def dist(a: Vec2, b: Vec2) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def polyline_length(points: Iterable[Vec2]) -> float:
    pts = list(points)
    return sum(dist(pts[i], pts[i + 1]) for i in range(len(pts) - 1))


def clip_polygon_to_rect(
    vertices: Sequence[Vec2], x0: float, y0: float, x1: float, y1: float
) -> tuple[Vec2, ...]:
    """Sutherland-Hodgman clip of a convex polygon against an axis-aligned rect."""
    def clip_half(verts, inside, intersect):
        out = []
        n = len(verts)
        for i in range(n):
            cur, nxt = verts[i], verts[(i + 1) % n]
            cur_in, nxt_in = inside(cur), inside(nxt)
            if cur_in:
                out.append(cur)
                if not nxt_in:
                    out.append(intersect(cur, nxt))
            elif nxt_in:
                out.append(intersect(cur, nxt))
        return out

    def x_cut(bound):
        def f(a, b):
            t = (bound - a[0]) / (b[0] - a[0])
            return (bound, a[1] + t * (b[1] - a[1]))
        return f

    def y_cut(bound):
        def f(a, b):
            t = (bound - a[1]) / (b[1] - a[1])
            return (a[0] + t * (b[0] - a[0]), bound)
        return f

    verts = list(vertices)
    verts = clip_half(verts, lambda v: v[0] >= x0, x_cut(x0))
    if not verts:
        return ()
    verts = clip_half(verts, lambda v: v[0] <= x1, x_cut(x1))
    if not verts:
        return ()
    verts = clip_half(verts, lambda v: v[1] >= y0, y_cut(y0))
    if not verts:
        return ()
    verts = clip_half(verts, lambda v: v[1] <= y1, y_cut(y1))
    return tuple(verts)


def wrap_deg(angle: float) -> float:
    """Wrap an angle in degrees to [0, 360)."""
    return angle % 360.0


def bearing_deg(from_xy: Vec2, to_xy: Vec2) -> float:
    """Absolute bearing in degrees of ``to_xy`` seen from ``from_xy``."""
    return wrap_deg(math.degrees(math.atan2(to_xy[1] - from_xy[1], to_xy[0] - from_xy[0])))
