"""Geometry kernels shared by the micro-world and the driving metrics.

These are the hot inner loops of trajectory scoring (rectangle overlap
tests, point-in-polygon, polyline projection). Each kernel is written once
in plain numpy-scalar style and compiled with numba's ``@njit`` when
available. Setting the environment variable ``DRIVEFLOW_NUMBA=0`` selects
the uncompiled pure-Python/numpy path (same code, same results); the
``benchmarks/bench_kernels.py`` script compares both.
"""

from __future__ import annotations

import math
import os

import numpy as np

_USE_NUMBA = os.environ.get("DRIVEFLOW_NUMBA", "1") not in ("0", "false", "no")

if _USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _USE_NUMBA = False

if not _USE_NUMBA:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


NUMBA_ENABLED = _USE_NUMBA


@njit(cache=True)
def rect_corners(cx, cy, heading, length, width):
    """Corners of an oriented rectangle, CCW order, (4, 2) array."""
    c = math.cos(heading)
    s = math.sin(heading)
    hl = 0.5 * length
    hw = 0.5 * width
    out = np.empty((4, 2))
    # front-left, front-right, rear-right, rear-left
    out[0, 0] = cx + c * hl - s * hw
    out[0, 1] = cy + s * hl + c * hw
    out[1, 0] = cx + c * hl + s * hw
    out[1, 1] = cy + s * hl - c * hw
    out[2, 0] = cx - c * hl + s * hw
    out[2, 1] = cy - s * hl - c * hw
    out[3, 0] = cx - c * hl - s * hw
    out[3, 1] = cy - s * hl + c * hw
    return out


@njit(cache=True)
def _project_extent(corners, ax, ay):
    lo = corners[0, 0] * ax + corners[0, 1] * ay
    hi = lo
    for i in range(1, 4):
        p = corners[i, 0] * ax + corners[i, 1] * ay
        if p < lo:
            lo = p
        if p > hi:
            hi = p
    return lo, hi


@njit(cache=True)
def rects_overlap(a, b):
    """Separating-axis test for two convex quads given as (4, 2) corners."""
    for quad in (a, b):
        for i in range(4):
            j = (i + 1) % 4
            # outward normal of edge i->j
            ax = quad[j, 1] - quad[i, 1]
            ay = quad[i, 0] - quad[j, 0]
            lo_a, hi_a = _project_extent(a, ax, ay)
            lo_b, hi_b = _project_extent(b, ax, ay)
            if hi_a < lo_b or hi_b < lo_a:
                return False
    return True


@njit(cache=True)
def point_in_polygon(px, py, poly):
    """Crossing-number test; points on the boundary count as inside."""
    n = poly.shape[0]
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = poly[i, 0], poly[i, 1]
        xj, yj = poly[j, 0], poly[j, 1]
        # boundary: point on segment (i, j)
        cross = (xj - xi) * (py - yi) - (yj - yi) * (px - xi)
        if abs(cross) < 1e-12:
            if min(xi, xj) - 1e-12 <= px <= max(xi, xj) + 1e-12 and (
                min(yi, yj) - 1e-12 <= py <= max(yi, yj) + 1e-12
            ):
                return True
        if (yi > py) != (yj > py):
            x_at = (xj - xi) * (py - yi) / (yj - yi) + xi
            if px < x_at:
                inside = not inside
        j = i
    return inside


@njit(cache=True)
def points_in_any_polygon(points, polys, poly_lens):
    """Vectorised membership of each point in the union of padded polygons.

    ``polys`` is a (n_poly, max_len, 2) padded array, ``poly_lens`` the true
    vertex counts. Returns a boolean vector over points.
    """
    n_pts = points.shape[0]
    out = np.zeros(n_pts, dtype=np.bool_)
    for k in range(n_pts):
        px, py = points[k, 0], points[k, 1]
        for p in range(polys.shape[0]):
            if point_in_polygon(px, py, polys[p, : poly_lens[p]]):
                out[k] = True
                break
    return out


@njit(cache=True)
def segments_intersect(ax, ay, bx, by, cx, cy, dx, dy):
    """True when segment AB intersects segment CD (touching counts)."""
    d1 = (dx - cx) * (ay - cy) - (dy - cy) * (ax - cx)
    d2 = (dx - cx) * (by - cy) - (dy - cy) * (bx - cx)
    d3 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    d4 = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True

    def on_seg(px, py, qx, qy, rx, ry):
        return (
            min(px, qx) - 1e-12 <= rx <= max(px, qx) + 1e-12
            and min(py, qy) - 1e-12 <= ry <= max(py, qy) + 1e-12
        )

    if abs(d1) < 1e-12 and on_seg(cx, cy, dx, dy, ax, ay):
        return True
    if abs(d2) < 1e-12 and on_seg(cx, cy, dx, dy, bx, by):
        return True
    if abs(d3) < 1e-12 and on_seg(ax, ay, bx, by, cx, cy):
        return True
    if abs(d4) < 1e-12 and on_seg(ax, ay, bx, by, dx, dy):
        return True
    return False


@njit(cache=True)
def polyline_project(poly, px, py):
    """(arc length of closest point, distance) of a point to a polyline."""
    best_d2 = 1e300
    best_s = 0.0
    s_acc = 0.0
    for i in range(poly.shape[0] - 1):
        x0, y0 = poly[i, 0], poly[i, 1]
        x1, y1 = poly[i + 1, 0], poly[i + 1, 1]
        ex, ey = x1 - x0, y1 - y0
        seg_len2 = ex * ex + ey * ey
        if seg_len2 > 0.0:
            t = ((px - x0) * ex + (py - y0) * ey) / seg_len2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        else:
            t = 0.0
        qx = x0 + t * ex
        qy = y0 + t * ey
        d2 = (px - qx) ** 2 + (py - qy) ** 2
        seg_len = math.sqrt(seg_len2)
        if d2 < best_d2:
            best_d2 = d2
            best_s = s_acc + t * seg_len
        s_acc += seg_len
    return best_s, math.sqrt(best_d2)


@njit(cache=True)
def polyline_length(poly):
    s = 0.0
    for i in range(poly.shape[0] - 1):
        s += math.hypot(poly[i + 1, 0] - poly[i, 0], poly[i + 1, 1] - poly[i, 1])
    return s


@njit(cache=True)
def nearest_polyline_point(poly, px, py):
    """(distance, index of nearest vertex) of a point to a polyline's vertices."""
    best_d2 = 1e300
    best_i = 0
    for i in range(poly.shape[0]):
        d2 = (poly[i, 0] - px) ** 2 + (poly[i, 1] - py) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best_i = i
    return math.sqrt(best_d2), best_i


def warmup():
    """Trigger JIT compilation of every kernel (no-op without numba)."""
    box = rect_corners(0.0, 0.0, 0.0, 2.0, 1.0)
    rects_overlap(box, box)
    poly = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    point_in_polygon(0.5, 0.5, poly)
    pts = np.zeros((1, 2))
    pad = poly.reshape(1, 4, 2)
    points_in_any_polygon(pts, pad, np.array([4], dtype=np.int64))
    segments_intersect(0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0)
    polyline_project(poly, 0.5, 2.0)
    polyline_length(poly)
    nearest_polyline_point(poly, 0.0, 0.0)
