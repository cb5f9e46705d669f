"""Axis-aligned box geometry used by the obstacle environments and the scripted planner."""

from __future__ import annotations

import numpy as np

# Slab-test tolerance; boxes are closed sets, so boundary contacts count as hits.
_EPS = 1e-12


def point_in_box(point: np.ndarray, center: np.ndarray, half_extents: np.ndarray) -> bool:
    """True iff ``point`` lies inside the closed box ``|p_i - c_i| <= h_i`` on every axis."""
    return bool(np.all(np.abs(np.asarray(point) - center) <= half_extents + _EPS))


def points_in_box(points: np.ndarray, center: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """Vectorized :func:`point_in_box` over the leading axis of ``points``."""
    return np.all(np.abs(points - center) <= half_extents + _EPS, axis=-1)


def segment_intersects_box(
    p0: np.ndarray,
    p1: np.ndarray,
    center: np.ndarray,
    half_extents: np.ndarray,
) -> bool:
    """Slab test: does the closed segment p0->p1 meet the closed box at any point?"""
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    lo = center - half_extents
    hi = center + half_extents

    t_min, t_max = 0.0, 1.0
    for i in range(len(p0)):
        if abs(d[i]) < _EPS:
            if p0[i] < lo[i] - _EPS or p0[i] > hi[i] + _EPS:
                return False
            continue
        t0 = (lo[i] - p0[i]) / d[i]
        t1 = (hi[i] - p0[i]) / d[i]
        if t0 > t1:
            t0, t1 = t1, t0
        t_min = max(t_min, t0)
        t_max = min(t_max, t1)
        if t_min > t_max + _EPS:
            return False
    return True


def point_segment_distance(point: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> float:
    """Euclidean distance from ``point`` to the closed segment p0->p1."""
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    denom = float(d @ d)
    if denom < _EPS:
        return float(np.linalg.norm(point - p0))
    t = np.clip(float((np.asarray(point) - p0) @ d) / denom, 0.0, 1.0)
    return float(np.linalg.norm(point - (p0 + t * d)))


def box_corners(center: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """The four corners of a 2D box, as a (4, 2) array."""
    cx, cy = center
    hx, hy = half_extents
    return np.array(
        [
            [cx - hx, cy - hy],
            [cx - hx, cy + hy],
            [cx + hx, cy - hy],
            [cx + hx, cy + hy],
        ]
    )


def detour_corner(
    p0: np.ndarray,
    p1: np.ndarray,
    center: np.ndarray,
    half_extents: np.ndarray,
    margin: float,
) -> np.ndarray:
    """Waypoint for steering around a blocking box.

    Picks the corner of the box nearest to the segment p0->p1 and pushes it
    outward by ``margin`` on each axis, so a path through the waypoint clears
    the box itself.
    """
    corners = box_corners(center, half_extents)
    dists = [point_segment_distance(c, p0, p1) for c in corners]
    nearest = corners[int(np.argmin(dists))]
    outward = np.sign(nearest - center)
    # Degenerate sign only happens for a zero-size box axis; still push outward.
    outward[outward == 0.0] = 1.0
    return nearest + margin * outward
