"""Rigid transforms, the Euler extrinsic vector and small-angle increments.

Rotation convention for the six-number extrinsic vector
``(x, y, z, phi, theta, psi)``: ``R = Rz(psi) @ Ry(theta) @ Rx(phi)``
(roll about x, pitch about y, yaw about z, applied in that order to a
fixed frame).

Increments are ordered ``(translation, rotation)`` and are applied by
left-composition, ``T' = Exp(d) @ T``, so they live in the target frame
(the camera frame for the registration problem).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GimbalLock

EULER_CONVENTION = "R = Rz(psi) Ry(theta) Rx(phi)  (extrinsic x-y-z roll/pitch/yaw)"

# pitch closer than this to +-pi/2 cannot be decomposed reliably
GIMBAL_MARGIN = 1e-6


def normalize_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def skew(v):
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def so3_exp(omega):
    """Exact rotation exponential (Rodrigues)."""
    omega = np.asarray(omega, dtype=float)
    angle2 = float(omega @ omega)
    K = skew(omega)
    if angle2 < 1e-24:
        # second-order series is exact to machine precision here
        return np.eye(3) + K + 0.5 * (K @ K)
    angle = math.sqrt(angle2)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / angle2
    return np.eye(3) + a * K + b * (K @ K)


def _frozen(a, shape):
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3) acting on 3-vectors as ``rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other):
        """``self @ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def apply(self, points):
        """Transform a single point ``(3,)`` or an ``(N, 3)`` array."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def rotate(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def orthonormalized(self):
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] *= -1
            r = u @ vt
        return RigidTransform(r, self.translation)

    def to_line(self):
        """Twelve numbers: row-major rotation then translation (metres)."""
        values = list(self.rotation.ravel()) + list(self.translation)
        return " ".join(f"{v:.17g}" for v in values)

    @classmethod
    def from_line(cls, line):
        values = [float(v) for v in line.split()]
        if len(values) != 12:
            raise ValueError(f"expected 12 numbers, got {len(values)}")
        return cls(np.reshape(values[:9], (3, 3)), values[9:])

    def allclose(self, other, atol=1e-10):
        return (np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol))

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class ExtrinsicParams:
    """Translation in metres and roll/pitch/yaw in radians, angles in (-pi, pi]."""

    x_e: float = 0.0
    y_e: float = 0.0
    z_e: float = 0.0
    phi_e: float = 0.0
    theta_e: float = 0.0
    psi_e: float = 0.0

    def __post_init__(self):
        for name in ("x_e", "y_e", "z_e"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("phi_e", "theta_e", "psi_e"):
            object.__setattr__(self, name, normalize_angle(getattr(self, name)))

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.size != 6:
            raise ValueError(f"expected 6 extrinsic values, got {values.size}")
        return cls(*values)

    def as_array(self):
        return np.array([self.x_e, self.y_e, self.z_e, self.phi_e, self.theta_e, self.psi_e])

    @property
    def translation(self):
        return self.as_array()[:3]

    @property
    def angles(self):
        return self.as_array()[3:]

    def to_line(self):
        return " ".join(f"{v:.17g}" for v in self.as_array())

    @classmethod
    def from_line(cls, line):
        return cls.from_array([float(v) for v in line.split()])


@dataclass(frozen=True)
class TwistIncrement:
    delta_translation: np.ndarray
    delta_rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta_translation", _frozen(self.delta_translation, (3,)))
        object.__setattr__(self, "delta_rotation", _frozen(self.delta_rotation, (3,)))

    @classmethod
    def from_vector(cls, d):
        d = np.asarray(d, dtype=float)
        return cls(d[:3], d[3:6])

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self):
        return np.concatenate([self.delta_translation, self.delta_rotation])

    def __neg__(self):
        return TwistIncrement(-self.delta_translation, -self.delta_rotation)


def extrinsic_to_transform(p: ExtrinsicParams) -> RigidTransform:
    rotation = rot_z(p.psi_e) @ rot_y(p.theta_e) @ rot_x(p.phi_e)
    return RigidTransform(rotation, [p.x_e, p.y_e, p.z_e])


def transform_to_extrinsic(T: RigidTransform) -> ExtrinsicParams:
    R = T.rotation
    sin_pitch = float(np.clip(-R[2, 0], -1.0, 1.0))
    pitch = math.asin(sin_pitch)
    if abs(pitch) >= math.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLock(f"pitch {pitch:.9f} rad is within {GIMBAL_MARGIN} of +-pi/2")
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    x, y, z = T.translation
    return ExtrinsicParams(x, y, z, roll, pitch, yaw)


def increment_transform(d: TwistIncrement) -> RigidTransform:
    return RigidTransform(so3_exp(d.delta_rotation), d.delta_translation)


def apply_increment(T: RigidTransform, d: TwistIncrement) -> RigidTransform:
    """Left-compose an increment: ``Exp(d) @ T`` with the exact exponential."""
    if not (np.any(d.delta_translation) or np.any(d.delta_rotation)):
        return T
    return increment_transform(d) @ T


def apply_to_point(T: RigidTransform, p) -> np.ndarray:
    return T.apply(p)


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(math.atan2(s, c))


def transform_error(estimate: RigidTransform, truth: RigidTransform):
    """Translation error vector (m) and rotation angle error (rad)."""
    dt = estimate.translation - truth.translation
    dR = estimate.rotation @ truth.rotation.T
    return dt, rotation_angle(dR)
