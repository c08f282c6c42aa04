"""World geometry: system parameters, base stations, the convex target, materials.

Angle convention used everywhere: an array-frame angle theta maps to the world
direction rotate(boresight, theta), i.e. positive angles lean toward the
array's positive tangent (boresight rotated +90 degrees). Angles are measured
from boresight and are only meaningful in (-pi/2, pi/2).
"""

from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import cross2, perp_ccw, rotate, unit

C_LIGHT = 299_792_458.0


class BadSystemConfig(ValueError):
    pass


class NonConvexTarget(ValueError):
    pass


class EnergyConservationViolated(ValueError):
    pass


class BSInsideTarget(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    """MIMO-OFDM system parameters.

    f0: carrier frequency [Hz]
    bandwidth: total system bandwidth [Hz]; subcarrier spacing is bandwidth/n_subcarriers
    n_subcarriers, n_tx, n_rx: grid sizes (>= 2)
    spacing: ULA element spacing [m]; None selects half a wavelength
    tx_power: total transmit power [W]
    """

    f0: float = 28e9
    bandwidth: float = 1e9
    n_subcarriers: int = 64
    n_tx: int = 32
    n_rx: int = 32
    spacing: float | None = None
    tx_power: float = 1.0

    def __post_init__(self):
        if self.f0 <= 0 or self.bandwidth <= 0:
            raise BadSystemConfig("f0 and bandwidth must be positive")
        if min(self.n_subcarriers, self.n_tx, self.n_rx) < 2:
            raise BadSystemConfig("n_subcarriers, n_tx, n_rx must all be >= 2")
        if self.spacing is None:
            object.__setattr__(self, "spacing", self.wavelength / 2.0)
        if self.spacing <= 0:
            raise BadSystemConfig("element spacing must be positive")
        # delta_f * Nc must reproduce the bandwidth (derived, so exact)
        if abs(self.delta_f * self.n_subcarriers - self.bandwidth) > 1e-9 * self.bandwidth:
            raise BadSystemConfig("inconsistent subcarrier spacing")

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.f0

    @property
    def delta_f(self) -> float:
        return self.bandwidth / self.n_subcarriers


@dataclass(frozen=True)
class BaseStation:
    """A ULA base station at a fixed position facing along `boresight`."""

    position: np.ndarray
    boresight: np.ndarray
    role: str = "both"  # 'tx', 'rx' or 'both'

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        try:
            object.__setattr__(self, "boresight", unit(self.boresight))
        except ValueError as exc:
            raise BadSystemConfig("boresight must be a nonzero vector") from exc
        if self.role not in ("tx", "rx", "both"):
            raise BadSystemConfig(f"unknown role {self.role!r}")

    @property
    def tangent(self) -> np.ndarray:
        """Positive array axis; element n sits at position + n*d*tangent."""
        return perp_ccw(self.boresight)

    def angle_to(self, point) -> float:
        """Array-frame angle of the direction from the BS to `point`.

        In (-pi/2, pi/2) for points in front of the array; outside that range
        the point is behind the array plane and cannot be represented.
        """
        u = unit(np.asarray(point, dtype=float) - self.position)
        return float(np.arctan2(u @ self.tangent, u @ self.boresight))

    def direction(self, theta: float) -> np.ndarray:
        """World-frame unit direction for an array-frame angle."""
        return rotate(self.boresight, theta)


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon target; vertices stored counter-clockwise.

    Clockwise input is auto-normalized to CCW. Collinear consecutive edges are
    rejected as non-convex.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise NonConvexTarget("need at least 3 two-dimensional vertices")
        area2 = sum(cross2(v[i], v[(i + 1) % len(v)]) for i in range(len(v)))
        if area2 < 0:
            v = v[::-1].copy()
        n = len(v)
        for i in range(n):
            e0 = v[(i + 1) % n] - v[i]
            e1 = v[(i + 2) % n] - v[(i + 1) % n]
            if cross2(e0, e1) <= 0:
                raise NonConvexTarget("vertices are not strictly convex")
        object.__setattr__(self, "vertices", v)

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    def edges(self):
        """List of (start, end) vertex pairs, CCW order."""
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def edge_normal(self, i: int) -> np.ndarray:
        """Outward unit normal of edge i (CCW polygon: clockwise perp)."""
        a, b = self.edges()[i]
        return -perp_ccw(unit(b - a))

    def contains(self, point) -> bool:
        """True if the point is inside or on the boundary."""
        p = np.asarray(point, dtype=float)
        v = self.vertices
        for i in range(len(v)):
            if cross2(v[(i + 1) % len(v)] - v[i], p - v[i]) < 0:
                return False
        return True


@dataclass(frozen=True)
class Material:
    """Surface material: reflection and scattering attenuation coefficients.

    Energy conservation requires alpha_r**2 + alpha_s**2 == 1.
    """

    alpha_r: float
    alpha_s: float

    def __post_init__(self):
        if not (0.0 <= self.alpha_r <= 1.0 and 0.0 <= self.alpha_s <= 1.0):
            raise EnergyConservationViolated("coefficients must lie in [0, 1]")
        if abs(self.alpha_r**2 + self.alpha_s**2 - 1.0) > 1e-12:
            raise EnergyConservationViolated(
                f"alpha_r^2 + alpha_s^2 = {self.alpha_r**2 + self.alpha_s**2!r} != 1"
            )

    @classmethod
    def from_reflectivity(cls, alpha_r: float) -> "Material":
        """Build a material from alpha_r alone; alpha_s follows exactly."""
        if not 0.0 <= alpha_r <= 1.0:
            raise EnergyConservationViolated("alpha_r must lie in [0, 1]")
        return cls(alpha_r=alpha_r, alpha_s=float(np.sqrt(1.0 - alpha_r**2)))


DEFAULT_MATERIAL = Material.from_reflectivity(float(np.sqrt(0.5)))


@dataclass(frozen=True)
class Scene:
    """Validated, immutable world description."""

    system: SystemConfig
    base_stations: tuple
    target: ConvexPolygon
    material: Material = field(default=DEFAULT_MATERIAL)


def validate_scene(system, base_stations, target, material=DEFAULT_MATERIAL) -> Scene:
    """Check cross-object invariants and return an immutable Scene.

    The per-type invariants are enforced by the type constructors; this adds
    the check that no base station sits inside (or on) the target.
    """
    for i, bs in enumerate(base_stations):
        if target.contains(bs.position):
            raise BSInsideTarget(f"base station {i} lies inside the target")
    return Scene(system=system, base_stations=tuple(base_stations),
                 target=target, material=material)


def _material_from_dict(d) -> Material:
    if d is None:
        return DEFAULT_MATERIAL
    if "alpha_s" in d:
        return Material(alpha_r=float(d["alpha_r"]), alpha_s=float(d["alpha_s"]))
    return Material.from_reflectivity(float(d["alpha_r"]))


def load_scene(path) -> Scene:
    """Load a scene from a YAML file (see README for the schema)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    sysd = raw.get("system", {})
    system = SystemConfig(
        f0=float(sysd.get("f0", 28e9)),
        bandwidth=float(sysd.get("bandwidth", 1e9)),
        n_subcarriers=int(sysd.get("n_subcarriers", 64)),
        n_tx=int(sysd.get("n_tx", 32)),
        n_rx=int(sysd.get("n_rx", 32)),
        spacing=None if sysd.get("spacing") is None else float(sysd["spacing"]),
        tx_power=float(sysd.get("tx_power", 1.0)),
    )
    bss = [
        BaseStation(position=np.array(b["position"], dtype=float),
                    boresight=np.array(b["boresight"], dtype=float),
                    role=b.get("role", "both"))
        for b in raw["base_stations"]
    ]
    target = ConvexPolygon(np.array(raw["target"]["vertices"], dtype=float))
    material = _material_from_dict(raw.get("material"))
    return validate_scene(system, bss, target, material)


def save_scene(scene: Scene, path) -> None:
    """Write a scene back out in the YAML config format."""
    doc = {
        "system": {
            "f0": scene.system.f0,
            "bandwidth": scene.system.bandwidth,
            "n_subcarriers": scene.system.n_subcarriers,
            "n_tx": scene.system.n_tx,
            "n_rx": scene.system.n_rx,
            "spacing": scene.system.spacing,
            "tx_power": scene.system.tx_power,
        },
        "base_stations": [
            {"position": bs.position.tolist(), "boresight": bs.boresight.tolist(),
             "role": bs.role}
            for bs in scene.base_stations
        ],
        "target": {"vertices": scene.target.vertices.tolist()},
        "material": {"alpha_r": scene.material.alpha_r, "alpha_s": scene.material.alpha_s},
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
