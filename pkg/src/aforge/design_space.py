"""Design encoding, baseline airframes and mass/inertia estimation.

A design vector lives in ``[0, 1]^15`` and holds three tuples
``(r, theta, phi, alpha, gamma)``, one per independent motor.  Motors
4-6 are the mirror images of motors 1-3 across the body xz-plane.

Conventions
-----------
* Body frame: x forward, y left, z up.
* Position: ``r * (cos(theta) cos(phi), cos(theta) sin(phi), sin(theta))``,
  so ``theta`` is the elevation above the body xy-plane.
* Orientation: ``R = Rz(gamma) @ Rx(alpha)``; the thrust axis is
  ``R @ e_z``.  With ``alpha = 0`` the motor points straight up, and the
  thrust axis tilts towards body azimuth ``gamma - 90 deg``.  This is the
  convention under which the tilted baselines keep their xz-symmetry.
* Spin: ``+1`` (CCW) for even layout indices, ``-1`` (CW) for odd ones.
  Mirror partners ``i`` and ``i + 3`` therefore always spin in opposite
  directions.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .rotations import matrix_to_quat, quat_to_matrix, rot_x, rot_z

N_MOTORS = 6
N_INDEPENDENT = 3
VARS = ("r", "theta", "phi", "alpha", "gamma")
ANGLE_VARS = ("theta", "phi", "alpha", "gamma")
DIM = N_INDEPENDENT * len(VARS)

SPIN_CCW = 1
SPIN_CW = -1

MIRROR = np.diag([1.0, -1.0, 1.0])


class DesignError(ValueError):
    """Raised for malformed design vectors, bound tables or layouts."""


# Defaults in metres / degrees.  The per-motor phi and alpha subranges keep
# motor 1 in front, motor 2 at the side and motor 3 at the back.
DEFAULT_BOUNDS_DEG = {
    "motor1": {"r": (0.09, 0.25), "theta": (-60.0, 60.0), "phi": (0.0, 60.0),
               "alpha": (0.0, 60.0), "gamma": (0.0, 360.0)},
    "motor2": {"r": (0.09, 0.25), "theta": (-60.0, 60.0), "phi": (60.0, 120.0),
               "alpha": (0.0, 90.0), "gamma": (0.0, 360.0)},
    "motor3": {"r": (0.09, 0.25), "theta": (-60.0, 60.0), "phi": (120.0, 180.0),
               "alpha": (0.0, 60.0), "gamma": (0.0, 360.0)},
}


@dataclass(frozen=True)
class BoundTable:
    """Per-motor ``[min, max]`` ranges; lengths in m, angles in rad.

    ``lo`` and ``hi`` have shape (3, 5), rows are motors 1-3 and columns
    follow :data:`VARS`.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (N_INDEPENDENT, len(VARS)) or hi.shape != lo.shape:
            raise DesignError(f"bound table must have shape (3, 5), got {lo.shape} / {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DesignError("bound table contains non-finite entries")
        bad = np.argwhere(lo > hi)
        if bad.size:
            m, v = bad[0]
            raise DesignError(f"motor{m + 1}.{VARS[v]}: min {lo[m, v]} > max {hi[m, v]}")
        if np.any(lo[:, 0] <= 0):
            raise DesignError("radial distance bounds must be positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_mapping(cls, table: Mapping, degrees: bool = True) -> "BoundTable":
        """Build from ``{"motor1": {"r": [lo, hi], ...}, ...}``."""
        lo = np.zeros((N_INDEPENDENT, len(VARS)))
        hi = np.zeros_like(lo)
        for m in range(N_INDEPENDENT):
            key = f"motor{m + 1}"
            if key not in table:
                raise DesignError(f"bound table is missing section '{key}'")
            for v, name in enumerate(VARS):
                if name not in table[key]:
                    raise DesignError(f"bound table is missing '{key}.{name}'")
                pair = table[key][name]
                if len(pair) != 2:
                    raise DesignError(f"'{key}.{name}' must be a [min, max] pair")
                a, b = float(pair[0]), float(pair[1])
                if degrees and name in ANGLE_VARS:
                    a, b = np.deg2rad(a), np.deg2rad(b)
                lo[m, v], hi[m, v] = a, b
        return cls(lo, hi)

    def to_mapping(self, degrees: bool = True) -> dict:
        out = {}
        for m in range(N_INDEPENDENT):
            sec = {}
            for v, name in enumerate(VARS):
                a, b = float(self.lo[m, v]), float(self.hi[m, v])
                if degrees and name in ANGLE_VARS:
                    a, b = float(np.rad2deg(a)), float(np.rad2deg(b))
                sec[name] = [a, b]
            out[f"motor{m + 1}"] = sec
        return out

    def digest(self) -> str:
        blob = json.dumps({"lo": self.lo.tolist(), "hi": self.hi.tolist()}, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def default_bounds() -> BoundTable:
    return BoundTable.from_mapping(DEFAULT_BOUNDS_DEG)


def as_design_vector(xi) -> np.ndarray:
    """Validate ``xi`` and clamp it onto ``[0, 1]^15``."""
    arr = np.asarray(xi, dtype=float).reshape(-1)
    if arr.shape != (DIM,):
        raise DesignError(f"design vector must have {DIM} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DesignError("design vector contains non-finite entries")
    return np.clip(arr, 0.0, 1.0)


@dataclass(frozen=True)
class MotorPose:
    r: float
    theta: float
    phi: float
    alpha: float
    gamma: float
    spin: int

    def position(self) -> np.ndarray:
        ct = np.cos(self.theta)
        return self.r * np.array([ct * np.cos(self.phi), ct * np.sin(self.phi), np.sin(self.theta)])

    def rotation(self) -> np.ndarray:
        return rot_z(self.gamma) @ rot_x(self.alpha)


@dataclass(frozen=True)
class Motor:
    position: np.ndarray
    rotation: np.ndarray
    spin: int

    @property
    def axis(self) -> np.ndarray:
        return self.rotation[:, 2]

    def mirrored(self) -> "Motor":
        return Motor(MIRROR @ self.position, MIRROR @ self.rotation @ MIRROR, -self.spin)


@dataclass(frozen=True)
class MotorLayout:
    motors: tuple
    propeller_radius: float = 0.0375
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.motors) != N_MOTORS:
            raise DesignError(f"a layout needs {N_MOTORS} motors, got {len(self.motors)}")
        if not self.propeller_radius > 0:
            raise DesignError("propeller radius must be positive")
        for i, m in enumerate(self.motors):
            if not np.all(np.isfinite(m.position)):
                raise DesignError(f"motor {i + 1} position is not finite")
            if not np.allclose(m.rotation.T @ m.rotation, np.eye(3), atol=1e-9):
                raise DesignError(f"motor {i + 1} orientation is not orthonormal")

    @property
    def positions(self) -> np.ndarray:
        return np.array([m.position for m in self.motors])

    @property
    def axes(self) -> np.ndarray:
        return np.array([m.axis for m in self.motors])

    @property
    def rotations(self) -> np.ndarray:
        return np.array([m.rotation for m in self.motors])

    @property
    def spins(self) -> np.ndarray:
        return np.array([m.spin for m in self.motors], dtype=float)

    def with_positions(self, positions) -> "MotorLayout":
        positions = np.asarray(positions, dtype=float)
        motors = tuple(Motor(positions[i].copy(), m.rotation, m.spin) for i, m in enumerate(self.motors))
        return replace(self, motors=motors)

    def mirror_error(self) -> float:
        """Largest deviation from the ``i <-> i+3`` xz-mirror invariant."""
        err = 0.0
        for i in range(N_INDEPENDENT):
            a, b = self.motors[i].mirrored(), self.motors[i + N_INDEPENDENT]
            # roll about the thrust axis is irrelevant for a propeller
            err = max(err, float(np.max(np.abs(a.position - b.position))),
                      float(np.max(np.abs(a.axis - b.axis))))
            if a.spin != b.spin:
                return np.inf
        return err

    def to_json_dict(self) -> dict:
        return {
            "motors": [
                {
                    "position": [float(v) for v in m.position],
                    "quaternion": [float(v) for v in matrix_to_quat(m.rotation)],
                    "spin": "CCW" if m.spin == SPIN_CCW else "CW",
                }
                for m in self.motors
            ],
            "propeller_radius": float(self.propeller_radius),
            "provenance": self.provenance,
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "MotorLayout":
        try:
            motors = []
            for m in doc["motors"]:
                q = np.asarray(m["quaternion"], dtype=float)
                q = q / np.linalg.norm(q)
                spin = {"CCW": SPIN_CCW, "CW": SPIN_CW}[m["spin"]]
                motors.append(Motor(np.asarray(m["position"], dtype=float), quat_to_matrix(q), spin))
            return cls(tuple(motors), float(doc["propeller_radius"]), dict(doc.get("provenance", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise DesignError(f"malformed layout document: {exc!r}") from exc


def layout_from_motors(first_three: Sequence[Motor], propeller_radius=0.0375, provenance=None) -> MotorLayout:
    """Complete motors 1-3 with their xz-mirrors as motors 4-6."""
    motors = list(first_three) + [m.mirrored() for m in first_three]
    return MotorLayout(tuple(motors), propeller_radius, provenance or {})


def _spin(index: int) -> int:
    return SPIN_CCW if index % 2 == 0 else SPIN_CW


def decode_poses(xi, bounds: BoundTable | None = None) -> list[MotorPose]:
    bounds = bounds or default_bounds()
    xi = as_design_vector(xi).reshape(N_INDEPENDENT, len(VARS))
    vals = bounds.lo + xi * (bounds.hi - bounds.lo)
    return [MotorPose(*vals[m], spin=_spin(m)) for m in range(N_INDEPENDENT)]


def decode(xi, bounds: BoundTable | None = None, propeller_radius: float = 0.0375) -> MotorLayout:
    """Map a design vector to a symmetric six-motor layout."""
    bounds = bounds or default_bounds()
    xi = as_design_vector(xi)
    first = [Motor(p.position(), p.rotation(), p.spin) for p in decode_poses(xi, bounds)]
    prov = {"design_vector": [float(v) for v in xi], "bounds_hash": bounds.digest()}
    return layout_from_motors(first, propeller_radius, prov)


def encode(layout: MotorLayout, bounds: BoundTable | None = None) -> np.ndarray:
    """Inverse of :func:`decode` for motors 1-3 (angles wrapped into range)."""
    bounds = bounds or default_bounds()
    vals = np.zeros((N_INDEPENDENT, len(VARS)))
    for m in range(N_INDEPENDENT):
        p = layout.motors[m].position
        rot = layout.motors[m].rotation
        r = np.linalg.norm(p)
        theta = np.arctan2(p[2], np.hypot(p[0], p[1]))
        phi = np.arctan2(p[1], p[0])
        alpha = np.arctan2(rot[2, 1], rot[2, 2])
        gamma = np.arctan2(rot[1, 0], rot[0, 0])
        raw = np.array([r, theta, phi, alpha, gamma])
        for v in (2, 4):
            # periodic angles: pick the representative inside [lo, lo + 2pi)
            raw[v] = bounds.lo[m, v] + np.mod(raw[v] - bounds.lo[m, v], 2 * np.pi)
        span = bounds.hi[m] - bounds.lo[m]
        with np.errstate(invalid="ignore", divide="ignore"):
            vals[m] = np.where(span > 0, (raw - bounds.lo[m]) / np.where(span > 0, span, 1.0), 0.0)
    return vals.reshape(-1)


# Published baseline poses by motor azimuth; angles in degrees.
BASELINE_TABLE = {
    "phi": (30, 90, 150, 210, 270, 330),
    "planar": {"alpha": (0, 0, 0, 0, 0, 0), "gamma": (180, 180, 180, 180, 180, 180)},
    "franchi": {"alpha": (42, 42, 42, 42, 42, 42), "gamma": (240, 60, 0, 180, 120, 300)},
    "shen": {"alpha": (45, 45, 45, 45, 45, 45), "gamma": (240, 180, 120, 60, 0, 300)},
    "rajappa": {"alpha": (17, 17, 17, 17, 17, 17), "gamma": (67, 307, 187, 353, 233, 113)},
}
BASELINES = ("planar", "franchi", "shen", "rajappa")
# Layout slot k holds table motor TABLE_ORDER[k]; this puts mirror partners at i, i+3.
TABLE_ORDER = (1, 2, 3, 6, 5, 4)


def baseline_layout(name: str, arm_length: float, propeller_radius: float = 0.0375) -> MotorLayout:
    """One of the four literature baselines with all motors at radius ``arm_length``."""
    if name not in BASELINES:
        raise DesignError(f"unknown baseline '{name}', expected one of {BASELINES}")
    if not arm_length > 0:
        raise DesignError("arm length must be positive")
    row = BASELINE_TABLE[name]
    motors = []
    for k, t in enumerate(TABLE_ORDER):
        pose = MotorPose(arm_length, 0.0, np.deg2rad(BASELINE_TABLE["phi"][t - 1]),
                         np.deg2rad(row["alpha"][t - 1]), np.deg2rad(row["gamma"][t - 1]), _spin(k))
        motors.append(Motor(pose.position(), pose.rotation(), pose.spin))
    prov = {"baseline": name, "arm_length": float(arm_length)}
    return MotorLayout(tuple(motors), propeller_radius, prov)


@dataclass(frozen=True)
class BodyGeometry:
    cage_dims: tuple = (0.09, 0.06, 0.09)
    cage_mass: float = 0.45
    arm_linear_density: float = 0.08
    motor_prop_mass: float = 0.035
    propeller_radius: float = 0.0375

    def __post_init__(self):
        if len(self.cage_dims) != 3 or min(self.cage_dims) <= 0:
            raise DesignError("cage dimensions must be three positive lengths")
        if self.cage_mass < 0 or self.arm_linear_density < 0 or self.motor_prop_mass < 0:
            raise DesignError("masses must be non-negative")
        if self.propeller_radius <= 0:
            raise DesignError("propeller radius must be positive")

    @property
    def half_extents(self) -> np.ndarray:
        return 0.5 * np.asarray(self.cage_dims, dtype=float)


@dataclass(frozen=True)
class MassProperties:
    mass: float
    center_of_mass: np.ndarray
    inertia: np.ndarray
    arm_lengths: np.ndarray

    @property
    def mean_arm_length(self) -> float:
        return float(np.mean(self.arm_lengths))


def arm_attachments(layout: MotorLayout, geom: BodyGeometry):
    """Closest cage-surface point to each motor and the resulting arm lengths."""
    h = geom.half_extents
    pos = layout.positions
    attach = np.clip(pos, -h, h)
    inside = np.all(np.abs(pos) < h, axis=1)
    return attach, np.linalg.norm(pos - attach, axis=1), inside


def _shift(inertia_c, m, d):
    return inertia_c + m * (np.dot(d, d) * np.eye(3) - np.outer(d, d))


def mass_inertia(layout: MotorLayout, geom: BodyGeometry | None = None, strict: bool = True) -> MassProperties:
    """Composite mass, centre of mass and inertia of cage, arms and motors.

    The cage is a solid cuboid centred at the body origin, arms are slender
    rods from the nearest cage-surface point to the motor, and each
    motor-propeller pair is a point mass.  With ``strict`` a motor inside
    the cage raises :class:`DesignError`.
    """
    geom = geom or BodyGeometry()
    attach, lengths, inside = arm_attachments(layout, geom)
    if strict and np.any(inside):
        raise DesignError(f"motors {list(np.flatnonzero(inside) + 1)} lie inside the electronics cage")
    pos = layout.positions
    a, b, c = geom.cage_dims
    parts = [(geom.cage_mass, np.zeros(3), geom.cage_mass / 12.0 * np.diag([b * b + c * c, a * a + c * c, a * a + b * b]))]
    for i in range(N_MOTORS):
        parts.append((geom.motor_prop_mass, pos[i], np.zeros((3, 3))))
        L = lengths[i]
        m_arm = geom.arm_linear_density * L
        if m_arm > 0:
            u = (pos[i] - attach[i]) / L
            parts.append((m_arm, 0.5 * (pos[i] + attach[i]), m_arm * L * L / 12.0 * (np.eye(3) - np.outer(u, u))))
    mass = sum(p[0] for p in parts)
    if mass <= 0:
        raise DesignError("total mass must be positive")
    com = sum(p[0] * p[1] for p in parts) / mass
    inertia = sum(_shift(p[2], p[0], p[1] - com) for p in parts)
    inertia = 0.5 * (inertia + inertia.T)
    return MassProperties(float(mass), com, inertia, lengths)


def match_inertia_arm_length(baseline: str, target: MassProperties, geom: BodyGeometry | None = None) -> float:
    """Arm length at which to build ``baseline`` so it matches ``target``.

    This is the average motor-to-cage distance of the target design; pass it
    as ``arm_length`` to :func:`baseline_layout`.
    """
    if baseline not in BASELINES:
        raise DesignError(f"unknown baseline '{baseline}'")
    return target.mean_arm_length
