"""Turn path-parameter estimates into world-coordinate detected points."""

from dataclasses import dataclass

import numpy as np

from .geometry import line_intersection, perp_ccw, unit
from .scene import C_LIGHT, BaseStation, SystemConfig


class NearParallelRays(ValueError):
    pass


class NonPositiveDelay(ValueError):
    pass


@dataclass(frozen=True)
class DetectedPoint:
    position: np.ndarray
    kind: str  # 'scatter' | 'reflect'
    surface_dir: np.ndarray | None = None  # unit vector, reflections only
    source: tuple | None = None  # (tx id, rx id, method)
    consistent: bool = True  # bistatic delay agreed with the geometry


def localize_dual(aoa: float, aod: float, tx: BaseStation, rx: BaseStation,
                  source=None, kind: str = "scatter") -> DetectedPoint:
    """Intersect the TX departure ray with the RX arrival ray.

    Raises NearParallelRays when the rays are parallel within |sin| < 1e-3.
    """
    res = line_intersection(tx.position, tx.direction(aod),
                            rx.position, rx.direction(aoa), min_sin=1e-3)
    if res is None:
        raise NearParallelRays("departure and arrival rays are near parallel")
    _, _, point = res
    return DetectedPoint(position=point, kind=kind, source=source)


def localize_single(aoa: float, tau: float, bs: BaseStation,
                    source=None, kind: str = "scatter") -> DetectedPoint:
    """Monostatic ranging: half the round-trip distance along the AoA ray."""
    if tau <= 0:
        raise NonPositiveDelay("monostatic delay must be positive")
    point = bs.position + 0.5 * C_LIGHT * tau * bs.direction(aoa)
    return DetectedPoint(position=point, kind=kind, source=source)


def reflection_surface(est, tx: BaseStation, rx: BaseStation,
                       system: SystemConfig, source=None) -> DetectedPoint:
    """Reflection point plus the direction of the reflecting surface.

    The surface normal bisects the directions from the point back to TX and
    RX (specular geometry); surface_dir is that normal rotated 90 degrees.
    Bistatic solutions are cross-checked against the measured delay: a
    mismatch beyond half the range resolution marks the point inconsistent.
    """
    monostatic = np.allclose(tx.position, rx.position)
    if monostatic:
        base = localize_single(est.aoa, est.tau, tx)
        point = base.position
        consistent = True
    else:
        base = localize_dual(est.aoa, est.aod, tx, rx)
        point = base.position
        d1 = float(np.linalg.norm(tx.position - point))
        d2 = float(np.linalg.norm(rx.position - point))
        tol = C_LIGHT / (2.0 * system.bandwidth)
        consistent = abs(d1 + d2 - C_LIGHT * est.tau) < tol
    normal = unit(unit(tx.position - point) + unit(rx.position - point))
    return DetectedPoint(position=point, kind="reflect",
                         surface_dir=perp_ccw(normal), source=source,
                         consistent=consistent)


def dump_points_csv(points: list, path) -> None:
    """Point-cloud CSV: kind, x, y, nx, ny (normals blank for scatter)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("kind,x,y,nx,ny\n")
        for p in points:
            if p.surface_dir is None:
                fh.write(f"{p.kind},{p.position[0]:.12g},{p.position[1]:.12g},,\n")
            else:
                fh.write(f"{p.kind},{p.position[0]:.12g},{p.position[1]:.12g},"
                         f"{p.surface_dir[0]:.12g},{p.surface_dir[1]:.12g}\n")


def load_points_csv(path) -> list:
    """Read a point-cloud CSV written by dump_points_csv."""
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("kind,"):
            raise ValueError("not a point-cloud CSV")
        for line in fh:
            kind, x, y, nx, ny = line.rstrip("\n").split(",")
            sd = None if nx == "" else np.array([float(nx), float(ny)])
            points.append(DetectedPoint(position=np.array([float(x), float(y)]),
                                        kind=kind, surface_dir=sd))
    return points
