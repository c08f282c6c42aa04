"""Small 2-D geometry helpers shared across the package."""

import numpy as np


def unit(v):
    """Normalize a 2-D vector; raises on zero length."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero-length vector")
    return v / n


def perp_ccw(v):
    """Rotate a vector by +90 degrees: (x, y) -> (-y, x)."""
    v = np.asarray(v, dtype=float)
    return np.array([-v[1], v[0]])


def rotate(v, theta):
    """Rotate a vector counter-clockwise by theta radians."""
    c, s = np.cos(theta), np.sin(theta)
    v = np.asarray(v, dtype=float)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def cross2(a, b):
    """Scalar z-component of the 2-D cross product."""
    return a[0] * b[1] - a[1] * b[0]


def line_intersection(p1, d1, p2, d2, min_sin=0.0):
    """Intersect two lines given as point + direction.

    Returns (t1, t2, point) with point = p1 + t1*d1 = p2 + t2*d2, or None
    when the normalized directions are parallel within min_sin.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    den = cross2(d1, d2)
    sin_angle = abs(den) / (np.linalg.norm(d1) * np.linalg.norm(d2))
    if sin_angle <= min_sin:
        return None
    dp = np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float)
    t1 = cross2(dp, d2) / den
    t2 = cross2(dp, d1) / den
    return t1, t2, np.asarray(p1, dtype=float) + t1 * d1


def segment_crossing(a0, a1, b0, b1):
    """Intersection point of segments a0-a1 and b0-b1, or None."""
    a0 = np.asarray(a0, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    res = line_intersection(a0, np.asarray(a1, dtype=float) - a0,
                            b0, np.asarray(b1, dtype=float) - b0)
    if res is None:
        return None
    t, s, point = res
    if -1e-12 <= t <= 1.0 + 1e-12 and -1e-12 <= s <= 1.0 + 1e-12:
        return point
    return None


def point_segment_distance(p, a, b):
    """Euclidean distance from point p to segment a-b."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def angle_mod_pi(theta):
    """Fold an angle into [0, pi) — direction of an undirected line."""
    return float(theta % np.pi)


def line_angle_difference(t1, t2):
    """Smallest angle between two undirected line directions, in [0, pi/2]."""
    d = abs(angle_mod_pi(t1) - angle_mod_pi(t2))
    return float(min(d, np.pi - d))
