"""Shape reconstruction from detected points.

Stage one fits edge lines to the scattering point cloud: Hough voting selects
candidate point subsets (largest first), each subset gets a total-least-squares
line via PCA, the fit is kept only if the points spread uniformly along the
line and the major/minor spread ratio is large enough, and accepted subsets
either merge into a sufficiently similar existing edge or open a new one.

Stage two refines the result with detected reflections: a reflection close to
an existing edge fuses with it (direction taken from the reflection, offset
re-optimized), a reflection far from every edge is appended as a new edge so
surfaces masked by the reflection's own noise floor are still completed.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .geometry import line_angle_difference, line_intersection


class DegeneratePoints(ValueError):
    """All points coincide; no line direction is defined."""


@dataclass(frozen=True)
class ReconstructionParams:
    gamma_v: float = 5.0  # min major/minor spread ratio of a valid fit
    gamma_l: float = 0.2  # min overlap ratio to merge into an edge
    gamma_u: float = 0.5  # max overlap ratio for opening a new edge
    eps_theta: float = np.deg2rad(1.0)  # max angle gap for merging
    gamma_s: float = 3.0  # reflection fuses if sigma_r <= gamma_s * sigma_s
    lambda_r: float = 0.5  # fusion weight on the reflection point
    delta_rho: float = 0.2  # Hough offset cell size [m]
    delta_theta: float = np.deg2rad(2.0)  # Hough angle cell size
    min_points: int = 5  # smallest Hough cell worth fitting
    alpha_u: float = 0.05  # KS significance for the uniformity test

    def __post_init__(self):
        if not 0.0 < self.gamma_l < self.gamma_u <= 1.0:
            raise ValueError("need 0 < gamma_l < gamma_u <= 1")
        if self.gamma_v <= 1.0:
            raise ValueError("need gamma_v > 1")
        if self.eps_theta <= 0.0:
            raise ValueError("need eps_theta > 0")


@dataclass(frozen=True)
class HoughGrid:
    delta_rho: float
    delta_theta: float
    rho_min: float
    accumulator: dict  # (rho bin, theta bin) -> frozenset of point indices

    def ranked_cells(self, min_points: int) -> list:
        """Cells sorted by descending size; ties by (rho, theta) bin ascending.

        Cells smaller than min_points are dropped.
        """
        items = [(key, idxs) for key, idxs in self.accumulator.items()
                 if len(idxs) >= min_points]
        items.sort(key=lambda kv: (-len(kv[1]), kv[0]))
        return items


@dataclass
class FittedLine:
    """Line a*x + b*y + c = 0 with a^2 + b^2 = 1, plus its supporting points.

    sigma1/sigma2 are the standard deviations of the support along/across the
    line. Completed edges (inserted from a reflection) carry an empty support
    and use `anchor` (the reflection point) as their representative point.
    """

    a: float
    b: float
    c: float
    support: frozenset
    sigma1: float
    sigma2: float
    anchor: np.ndarray
    completed: bool = False

    @property
    def angle(self) -> float:
        """Direction of the line (not the normal), folded into [0, pi)."""
        return float(np.arctan2(self.a, -self.b) % np.pi)

    def distance(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return np.abs(xy @ np.array([self.a, self.b]) + self.c)


@dataclass
class ShapeEstimate:
    lines: list = field(default_factory=list)
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def k(self) -> int:
        return len(self.lines)

    def support_xy(self, line: FittedLine) -> np.ndarray:
        return self.points[sorted(line.support)]


def hough_grid(points: np.ndarray, params: ReconstructionParams) -> HoughGrid:
    """Vote every point into one (rho, theta) cell per theta column.

    Theta columns sit at multiples of delta_theta over [0, pi), so axis-aligned
    structures fall on exact columns.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n_theta = int(np.ceil(np.pi / params.delta_theta))
    thetas = np.arange(n_theta) * params.delta_theta
    rho_min = -float(np.max(np.linalg.norm(points, axis=1))) if len(points) else 0.0
    acc: dict = {}
    if len(points):
        rho = points @ np.vstack([np.cos(thetas), np.sin(thetas)])  # (N, n_theta)
        bins = np.floor((rho - rho_min) / params.delta_rho).astype(int)
        for j in range(n_theta):
            order = np.argsort(bins[:, j], kind="stable")
            col = bins[order, j]
            starts = np.flatnonzero(np.diff(col)) + 1
            for group in np.split(order, starts):
                acc[(int(bins[group[0], j]), j)] = frozenset(int(i) for i in group)
    return HoughGrid(delta_rho=params.delta_rho, delta_theta=params.delta_theta,
                     rho_min=rho_min, accumulator=acc)


def hough_transform(points: np.ndarray, params: ReconstructionParams) -> list:
    """Ranked Hough cells: [(cell key, point-index frozenset), ...]."""
    return hough_grid(points, params).ranked_cells(params.min_points)


def pca_fit(points: np.ndarray, support: frozenset = frozenset()) -> FittedLine:
    """Total-least-squares line through the centroid along the principal axis."""
    xy = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(xy) < 2:
        raise DegeneratePoints("need at least two points")
    centroid = xy.mean(axis=0)
    centered = xy - centroid
    cov = centered.T @ centered / len(xy)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    if evals[1] <= 0.0:
        raise DegeneratePoints("all points coincide")
    direction = evecs[:, 1]
    normal = np.array([-direction[1], direction[0]])
    c = -float(normal @ centroid)
    return FittedLine(a=float(normal[0]), b=float(normal[1]), c=c,
                      support=support,
                      sigma1=float(np.sqrt(max(evals[1], 0.0))),
                      sigma2=float(np.sqrt(max(evals[0], 0.0))),
                      anchor=centroid)


_ks_critical_cache: dict = {}


def _ks_critical(n: int, alpha: float) -> float:
    """Exact two-sided one-sample KS critical value D_crit(n, alpha)."""
    key = (n, alpha)
    if key not in _ks_critical_cache:
        _ks_critical_cache[key] = float(stats.kstwo.isf(alpha, n))
    return _ks_critical_cache[key]


def validate_line(line: FittedLine, points: np.ndarray,
                  params: ReconstructionParams) -> bool:
    """Accept a fit iff the support is uniform along the line and elongated.

    Uniformity: KS test of the projections against U(min, max) at level
    alpha_u (reject when the KS statistic exceeds the exact critical value).
    Elongation: sigma1/sigma2 >= gamma_v, with sigma2 = 0 passing.
    """
    xy = np.asarray(points, dtype=float).reshape(-1, 2)
    proj = xy @ np.array([-line.b, line.a])
    lo, hi = float(proj.min()), float(proj.max())
    if hi - lo <= 0.0:
        return False
    u = np.sort((proj - lo) / (hi - lo))
    n = u.size
    steps = np.arange(1, n + 1) / n
    d = max(float(np.max(steps - u)), float(np.max(u - (steps - 1.0 / n))))
    if d > _ks_critical(n, params.alpha_u):
        return False
    if line.sigma2 == 0.0:
        return True
    return line.sigma1 / line.sigma2 >= params.gamma_v


def merge_or_add(cell: frozenset, shape: ShapeEstimate,
                 params: ReconstructionParams,
                 cell_line: FittedLine | None = None) -> ShapeEstimate:
    """One accumulator step: merge the cell into similar edges, or append it.

    The cell merges into every existing edge whose support it overlaps by
    >= gamma_l (relative to that support) with an angle gap <= eps_theta; the
    edge is refit on the union. It is appended as a new edge only when the
    fraction of the cell already claimed by the union of existing supports
    stays <= gamma_u: cells that mostly re-describe established edges (split
    accumulator cells, corner mixtures straddling two edges) explain nothing
    new and would otherwise spawn duplicate edges.
    """
    if cell_line is None:
        cell_line = pca_fit(shape.points[sorted(cell)], support=cell)
    claimed: set = set()
    for k, line in enumerate(shape.lines):
        if not line.support:
            continue  # completed edges have no scatter support to compare
        shared = cell & line.support
        claimed |= shared
        angle_gap = line_angle_difference(cell_line.angle, line.angle)
        if (len(shared) / len(line.support) >= params.gamma_l
                and angle_gap <= params.eps_theta and not cell <= line.support):
            union = line.support | cell
            refit = pca_fit(shape.points[sorted(union)], support=union)
            shape.lines[k] = refit
    if len(claimed) / len(cell) <= params.gamma_u:
        shape.lines.append(cell_line)
    return shape


def ht_pca_tsr(points, params: ReconstructionParams | None = None) -> ShapeEstimate:
    """Full scatter-point shape fit: Hough ranking, PCA fits, validity tests,
    merge-or-append accumulation. Empty input yields an empty shape."""
    params = params or ReconstructionParams()
    xy = np.asarray(points, dtype=float).reshape(-1, 2)
    shape = ShapeEstimate(lines=[], points=xy)
    if len(xy) == 0:
        return shape
    fits: dict = {}  # identical supports recur across theta columns
    for _, cell in hough_transform(xy, params):
        if cell not in fits:
            try:
                line = pca_fit(xy[sorted(cell)], support=cell)
                fits[cell] = line if validate_line(line, xy[sorted(cell)], params) else None
            except DegeneratePoints:
                fits[cell] = None
        line = fits[cell]
        if line is not None:
            merge_or_add(cell, shape, params, cell_line=line)
    return shape


def refine_with_reflection(shape: ShapeEstimate, refl,
                           params: ReconstructionParams | None = None) -> ShapeEstimate:
    """Fold one detected reflection (point + surface direction) into the shape.

    The reflection's surface line either replaces the direction of the nearest
    scatter edge (offset re-optimized as the lambda_r-weighted least-squares
    blend of the reflection point and the edge's support) or, when no edge
    lies close, is appended as a completed edge. An empty shape gets the
    reflection as its only edge.
    """
    params = params or ReconstructionParams()
    direction = np.asarray(refl.surface_dir, dtype=float)
    normal = np.array([-direction[1], direction[0]])
    normal /= np.linalg.norm(normal)
    a_r, b_r = float(normal[0]), float(normal[1])
    c_r = -float(normal @ refl.position)
    refl_line = FittedLine(a=a_r, b=b_r, c=c_r, support=frozenset(),
                           sigma1=0.0, sigma2=0.0,
                           anchor=np.asarray(refl.position, dtype=float),
                           completed=True)

    candidates = [(k, line) for k, line in enumerate(shape.lines) if line.support]
    if not candidates:
        shape.lines.append(refl_line)
        return shape

    dists = [float(refl_line.distance(shape.support_xy(line)).mean())
             for _, line in candidates]
    pick = int(np.argmin(dists))
    k_near, near = candidates[pick]
    xy = shape.support_xy(near)
    sigma_s = float(near.distance(xy).mean())
    sigma_r = dists[pick]

    if sigma_r <= params.gamma_s * sigma_s:
        lam = params.lambda_r
        c_sr = -(lam * float(normal @ refl.position)
                 + (1.0 - lam) * float((xy @ normal).mean()))
        shape.lines[k_near] = FittedLine(a=a_r, b=b_r, c=c_sr,
                                         support=near.support,
                                         sigma1=near.sigma1, sigma2=near.sigma2,
                                         anchor=near.anchor)
    else:
        shape.lines.append(refl_line)
    return shape


def closed_polygon_vertices(shape: ShapeEstimate) -> np.ndarray | None:
    """Vertices of the convex polygon bounded by the shape's edges, or None.

    Edge normals are oriented away from the mean of the per-edge anchor
    points, edges are sorted by outward-normal angle, and consecutive edges
    are intersected; the result must come out strictly convex.
    """
    if shape.k < 3:
        return None
    ref = np.mean([line.anchor for line in shape.lines], axis=0)
    oriented = []
    for line in shape.lines:
        a, b, c = line.a, line.b, line.c
        if a * ref[0] + b * ref[1] + c > 0:
            a, b, c = -a, -b, -c
        oriented.append((float(np.arctan2(b, a)), a, b, c))
    oriented.sort()
    n = len(oriented)
    verts = []
    for i in range(n):
        _, a1, b1, c1 = oriented[i]
        _, a2, b2, c2 = oriented[(i + 1) % n]
        res = line_intersection(np.array([-a1 * c1, -b1 * c1]), np.array([-b1, a1]),
                                np.array([-a2 * c2, -b2 * c2]), np.array([-b2, a2]),
                                min_sin=1e-9)
        if res is None:
            return None
        verts.append(res[2])
    verts = np.array(verts)
    for i in range(n):
        e0 = verts[(i + 1) % n] - verts[i]
        e1 = verts[(i + 2) % n] - verts[(i + 1) % n]
        if e0[0] * e1[1] - e0[1] * e1[0] <= 0:
            return None
    return verts


def dump_shape_csv(shape: ShapeEstimate, path, vertices_path=None) -> None:
    """Write fitted lines as CSV; optionally the closure vertices next to it."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("a,b,c,support_size,completed\n")
        for line in shape.lines:
            fh.write(f"{line.a:.12g},{line.b:.12g},{line.c:.12g},"
                     f"{len(line.support)},{int(line.completed)}\n")
    if vertices_path is not None:
        verts = closed_polygon_vertices(shape)
        if verts is not None:
            with open(vertices_path, "w", encoding="utf-8") as fh:
                fh.write("x,y\n")
                for x, y in verts:
                    fh.write(f"{x:.12g},{y:.12g}\n")
