"""Evaluation: point MSE against the target outline, surface direction error,
and the shape close rate over Monte-Carlo trials."""

from dataclasses import dataclass

import numpy as np

from .geometry import line_angle_difference, point_segment_distance, unit
from .reconstruct import ShapeEstimate, closed_polygon_vertices
from .scene import ConvexPolygon


class EmptyPointSet(ValueError):
    pass


class NoMatches(ValueError):
    """No fitted line lies near any ground-truth edge."""


@dataclass(frozen=True)
class TrialResult:
    snr_db: float
    method: str
    mse: float  # m^2; NaN when no points were detected
    direction_error: float  # degrees; NaN when no line matched an edge
    closed: bool
    runtime: float  # seconds
    n_points: int = 0
    n_edges: int = 0
    failure: str | None = None


def _min_edge_distance(point, target: ConvexPolygon) -> float:
    return min(point_segment_distance(point, a, b) for a, b in target.edges())


def nearest_edge_index(point, target: ConvexPolygon) -> int:
    dists = [point_segment_distance(point, a, b) for a, b in target.edges()]
    return int(np.argmin(dists))


def point_mse(points, target: ConvexPolygon) -> float:
    """Mean squared distance from each point to the nearest target edge
    segment (segments, not infinite lines)."""
    pts = [np.asarray(getattr(p, "position", p), dtype=float) for p in points]
    if len(pts) == 0:
        raise EmptyPointSet("no points to score")
    return float(np.mean([_min_edge_distance(p, target) ** 2 for p in pts]))


def match_lines_to_edges(shape: ShapeEstimate, target: ConvexPolygon,
                         max_offset: float) -> tuple:
    """Assign each fitted line its best ground-truth edge.

    A line is matchable to the edges whose midpoint sits within max_offset of
    the (infinite) line; among those it picks the smallest angular difference.
    Returns (matches, n_unmatched) with matches as (line index, edge index,
    angular difference in degrees).
    """
    edges = target.edges()
    mids = [(a + b) / 2.0 for a, b in edges]
    angles = [float(np.arctan2(*(b - a)[::-1]) % np.pi) for a, b in edges]
    matches = []
    unmatched = 0
    for li, line in enumerate(shape.lines):
        best = None
        for ei, mid in enumerate(mids):
            if float(line.distance(mid)[0]) > max_offset:
                continue
            diff = np.rad2deg(line_angle_difference(line.angle, angles[ei]))
            if best is None or diff < best[1]:
                best = (ei, diff)
        if best is None:
            unmatched += 1
        else:
            matches.append((li, best[0], best[1]))
    return matches, unmatched


def direction_error(shape: ShapeEstimate, target: ConvexPolygon,
                    max_offset: float = 0.6) -> float:
    """Mean absolute angular difference (degrees, mod 180) between fitted
    lines and their matched edges; unmatched lines are excluded.

    max_offset defaults to three Hough offset cells.
    """
    matches, _ = match_lines_to_edges(shape, target, max_offset)
    if not matches:
        raise NoMatches("no fitted line matches any target edge")
    return float(np.mean([m[2] for m in matches]))


def is_closed(shape: ShapeEstimate, n_edges_expected: int) -> bool:
    """Closure criterion: as many lines as ground-truth edges, and they bound
    a convex polygon."""
    if shape.k != n_edges_expected:
        return False
    return closed_polygon_vertices(shape) is not None


def close_rate(trials) -> float:
    """Fraction of trials whose reconstruction closed."""
    trials = list(trials)
    if not trials:
        return 0.0
    return float(np.mean([bool(t.closed) for t in trials]))


def aggregate_rows(trials) -> list:
    """One summary dict per (snr_db, method), ordered by (snr, method)."""
    groups: dict = {}
    for t in trials:
        groups.setdefault((t.snr_db, t.method), []).append(t)
    rows = []
    for (snr, method) in sorted(groups):
        batch = groups[(snr, method)]
        mses = np.array([t.mse for t in batch], dtype=float)
        errs = np.array([t.direction_error for t in batch], dtype=float)
        valid_mse = mses[~np.isnan(mses)]
        valid_err = errs[~np.isnan(errs)]
        rows.append({
            "snr_db": snr,
            "method": method,
            "mse_mean": float(valid_mse.mean()) if valid_mse.size else float("nan"),
            "mse_std": float(valid_mse.std()) if valid_mse.size else float("nan"),
            "dir_err_mean": float(valid_err.mean()) if valid_err.size else float("nan"),
            "close_rate": close_rate(batch),
            "n_trials": len(batch),
        })
    return rows


def write_results_csv(rows, path) -> None:
    cols = ["snr_db", "method", "mse_mean", "mse_std", "dir_err_mean",
            "close_rate", "n_trials"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = []
            for col in cols:
                v = row[col]
                cells.append(v if isinstance(v, str) else f"{v:.12g}")
            fh.write(",".join(cells) + "\n")
