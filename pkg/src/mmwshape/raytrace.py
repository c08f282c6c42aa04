"""First-order propagation paths between base stations and the convex target.

Two path families are produced:
  * diffuse scattering from surface microfacets (Lambertian model), with
    received power  alpha_s^2 * Pt * lambda^2 / (16 pi^3 d1^2 d2^2) * cos(ti) * cos(ts) * dS
  * at most one specular reflection per TX/RX pair, built with a mirror
    source, with power  alpha_r^2 * Pt * lambda^2 / ((4 pi)^2 (d1+d2)^2)

Path gains are beta = sqrt(P_R / P_T), kept real and non-negative by default;
pass an rng to draw i.i.d. uniform phases instead (robustness experiments).
The LOS path is intentionally never generated.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import segment_crossing, unit
from .scene import C_LIGHT, BaseStation, Scene


class MultipleReflectionPaths(RuntimeError):
    """More than one specular path for a TX/RX pair: convexity is broken."""


@dataclass(frozen=True)
class MicroFacet:
    """A short piece of a polygon edge acting as a Lambertian scatterer."""

    center: np.ndarray
    normal: np.ndarray
    ds: float


@dataclass(frozen=True)
class PathRecord:
    """One propagation path between a TX and an RX base station.

    kind is 'scatter' or 'reflect'; aoa/aod are array-frame angles in
    (-pi/2, pi/2); point is the facet center or the specular point; normal is
    the local outward surface normal; ds is the facet length (scatter only).
    """

    kind: str
    tau: float
    aoa: float
    aod: float
    beta: complex
    point: np.ndarray
    normal: np.ndarray
    ds: float | None = None


def default_facet_len(scene: Scene) -> float:
    """Default subdivision length: ten wavelengths."""
    return 10.0 * scene.system.wavelength


def subdivide_edges(target, facet_len: float) -> list[MicroFacet]:
    """Split every polygon edge into facets of equal length <= facet_len."""
    if facet_len <= 0:
        raise ValueError("facet_len must be positive")
    facets = []
    for i, (a, b) in enumerate(target.edges()):
        length = float(np.linalg.norm(b - a))
        n_sub = max(1, int(np.ceil(length / facet_len)))
        ds = length / n_sub
        normal = target.edge_normal(i)
        for k in range(n_sub):
            center = a + (k + 0.5) / n_sub * (b - a)
            facets.append(MicroFacet(center=center, normal=normal, ds=ds))
    return facets


def _in_front(bs: BaseStation, point) -> bool:
    # ULA angles are only defined in the front half-plane of the array
    return (np.asarray(point) - bs.position) @ bs.boresight > 0


def _phase(rng) -> complex:
    if rng is None:
        return 1.0 + 0.0j
    return np.exp(2j * np.pi * rng.uniform())


def enumerate_scatter_paths(scene: Scene, tx: BaseStation, rx: BaseStation,
                            facet_len: float | None = None,
                            rng=None) -> list[PathRecord]:
    """All doubly-visible microfacet scattering paths from tx to rx.

    A facet contributes iff its outward normal faces both stations
    (cos(theta_i) > 0 and cos(theta_s) > 0) and it lies in the front
    half-plane of both arrays. Returns an empty list when nothing is visible.
    """
    if facet_len is None:
        facet_len = default_facet_len(scene)
    sysc = scene.system
    lam = sysc.wavelength
    alpha_s2 = scene.material.alpha_s**2
    paths = []
    for facet in subdivide_edges(scene.target, facet_len):
        to_tx = tx.position - facet.center
        to_rx = rx.position - facet.center
        d1 = float(np.linalg.norm(to_tx))
        d2 = float(np.linalg.norm(to_rx))
        cos_i = float(facet.normal @ to_tx) / d1
        cos_s = float(facet.normal @ to_rx) / d2
        if cos_i <= 0 or cos_s <= 0:
            continue
        if not (_in_front(tx, facet.center) and _in_front(rx, facet.center)):
            continue
        p_ratio = alpha_s2 * lam**2 / (16.0 * np.pi**3 * d1**2 * d2**2) * cos_i * cos_s * facet.ds
        paths.append(PathRecord(
            kind="scatter",
            tau=(d1 + d2) / C_LIGHT,
            aoa=rx.angle_to(facet.center),
            aod=tx.angle_to(facet.center),
            beta=np.sqrt(p_ratio) * _phase(rng),
            point=facet.center,
            normal=facet.normal,
            ds=facet.ds,
        ))
    return paths


def find_reflection_path(scene: Scene, tx: BaseStation, rx: BaseStation,
                         rng=None) -> PathRecord | None:
    """The specular reflection path from tx to rx, if one exists.

    Each edge is tested with a mirror source: reflect tx across the edge's
    supporting line and intersect the mirror-to-rx segment with the edge. For
    a single convex target at most one edge can produce a path; finding more
    raises MultipleReflectionPaths.
    """
    sysc = scene.system
    lam = sysc.wavelength
    alpha_r2 = scene.material.alpha_r**2
    found = None
    for i, (a, b) in enumerate(scene.target.edges()):
        normal = scene.target.edge_normal(i)
        # both stations must be strictly on the outward side of the edge line
        if (tx.position - a) @ normal <= 0 or (rx.position - a) @ normal <= 0:
            continue
        mirror = tx.position - 2.0 * ((tx.position - a) @ normal) * normal
        point = segment_crossing(mirror, rx.position, a, b)
        if point is None:
            continue
        if not (_in_front(tx, point) and _in_front(rx, point)):
            continue
        if found is not None:
            raise MultipleReflectionPaths("two specular paths for one TX/RX pair")
        d1 = float(np.linalg.norm(tx.position - point))
        d2 = float(np.linalg.norm(rx.position - point))
        p_ratio = alpha_r2 * lam**2 / ((4.0 * np.pi) ** 2 * (d1 + d2) ** 2)
        found = PathRecord(
            kind="reflect",
            tau=(d1 + d2) / C_LIGHT,
            aoa=rx.angle_to(point),
            aod=tx.angle_to(point),
            beta=np.sqrt(p_ratio) * _phase(rng),
            point=point,
            normal=normal,
        )
    return found


def dump_paths_csv(paths: list[PathRecord], path) -> None:
    """Write paths as CSV: kind, tau, aoa, aod, |beta|, x, y."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("kind,tau,aoa,aod,beta_abs,x,y\n")
        for p in paths:
            fh.write(f"{p.kind},{p.tau:.12g},{p.aoa:.12g},{p.aod:.12g},"
                     f"{abs(p.beta):.12g},{p.point[0]:.12g},{p.point[1]:.12g}\n")
