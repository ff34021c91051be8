"""Small 2-D geometry helpers shared by the doll rasterizer and mask tweaks."""
from __future__ import annotations

import numpy as np


def segment_distance(px: np.ndarray, py: np.ndarray, a, b) -> np.ndarray:
    """Distance from points (px, py) to the segment a-b. Arrays broadcast."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    dx, dy = bx - ax, by - ay
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        return np.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg_len2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def polyline_distance_and_param(
    px: np.ndarray, py: np.ndarray, points: list | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Distance to a polyline and normalized arc-length parameter of the
    closest point (0 at the first vertex, 1 at the last)."""
    points = np.asarray(points, dtype=np.float64)
    seg_lens = np.hypot(*(points[1:] - points[:-1]).T)
    total = float(seg_lens.sum())
    if total == 0.0:
        return np.hypot(px - points[0, 0], py - points[0, 1]), np.zeros_like(px, dtype=np.float64)

    best_d = np.full(np.broadcast(px, py).shape, np.inf, dtype=np.float64)
    best_t = np.zeros_like(best_d)
    arc = 0.0
    for i in range(len(points) - 1):
        a, b = points[i], points[i + 1]
        dx, dy = b[0] - a[0], b[1] - a[1]
        seg_len2 = dx * dx + dy * dy
        if seg_len2 == 0.0:
            d = np.hypot(px - a[0], py - a[1])
            t_here = np.full_like(d, arc / total)
        else:
            t = np.clip(((px - a[0]) * dx + (py - a[1]) * dy) / seg_len2, 0.0, 1.0)
            d = np.hypot(px - (a[0] + t * dx), py - (a[1] + t * dy))
            t_here = (arc + t * seg_lens[i]) / total
        closer = d < best_d
        best_d = np.where(closer, d, best_d)
        best_t = np.where(closer, t_here, best_t)
        arc += seg_lens[i]
    return best_d, best_t


def capsule_mask(px: np.ndarray, py: np.ndarray, a, b, radius: float) -> np.ndarray:
    return segment_distance(px, py, a, b) <= radius


def disk_mask(px: np.ndarray, py: np.ndarray, center, radius: float) -> np.ndarray:
    return np.hypot(px - center[0], py - center[1]) <= radius


def convex_quad_mask(px: np.ndarray, py: np.ndarray, corners) -> np.ndarray:
    """Points inside a convex quad given in consistent winding order."""
    corners = np.asarray(corners, dtype=np.float64)
    inside = np.ones(np.broadcast(px, py).shape, dtype=bool)
    n = len(corners)
    # Establish winding sign from the polygon itself so either order works.
    area2 = 0.0
    for i in range(n):
        x0, y0 = corners[i]
        x1, y1 = corners[(i + 1) % n]
        area2 += x0 * y1 - x1 * y0
    sign = 1.0 if area2 >= 0 else -1.0
    for i in range(n):
        a = corners[i]
        b = corners[(i + 1) % n]
        cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
        inside &= sign * cross >= 0.0
    return inside


def dilate_bool(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev (square structuring element) boolean dilation."""
    if radius <= 0:
        return mask.copy()
    out = mask.copy()
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            y = np.clip(ys + dy, 0, h - 1)
            x = np.clip(xs + dx, 0, w - 1)
            out[y, x] = True
    return out
