"""Denavit-Hartenberg forward kinematics and contact-point construction.

The contact point of a record is the origin of the end-effector frame
expressed in the manipulator base frame.  Joint biases are additive encoder
offsets: a chain carrying biases ``b`` evaluated at ``theta`` is identical to
the nominal chain evaluated at ``theta + b``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, ParseError
from .pointcloud import PointCloud
from .se3 import RigidTransform


@dataclass(frozen=True)
class DHRow:
    alpha: float
    r: float
    d: float


@dataclass(frozen=True, eq=False)
class KinematicChain:
    rows: tuple
    joint_biases: np.ndarray = field(default=None)

    def __post_init__(self):
        rows = tuple(r if isinstance(r, DHRow) else DHRow(*r) for r in self.rows)
        if not rows:
            raise ValueError("a chain needs at least one joint")
        object.__setattr__(self, "rows", rows)
        biases = np.zeros(len(rows)) if self.joint_biases is None else np.array(self.joint_biases, dtype=float)
        if biases.shape != (len(rows),):
            raise DimensionMismatch(f"expected {len(rows)} joint biases, got {biases.shape}")
        biases.setflags(write=False)
        object.__setattr__(self, "joint_biases", biases)

    @property
    def dof(self) -> int:
        return len(self.rows)

    @cached_property
    def params(self):
        """``(K, 3)`` array of ``alpha, r, d``."""
        return np.array([(row.alpha, row.r, row.d) for row in self.rows])

    def with_biases(self, biases):
        return KinematicChain(self.rows, biases)

    def nominal(self):
        return KinematicChain(self.rows)


@dataclass(eq=False)
class ContactRecord:
    """Joint readings of one contact event plus the chain used to place it."""

    joints: np.ndarray
    chain: KinematicChain

    @cached_property
    def base_point(self):
        return contact_point(self.chain, self.joints)


def generic_six_axis() -> KinematicChain:
    """Six-axis arm of roughly 1.3 m reach with a laterally offset probe tip.

    The last row places the contact tip 5 cm off the wrist-roll axis so that a
    wrist-roll bias moves the tip (a tip on the axis would make that bias
    invisible to any contact data).
    """
    half_pi = np.pi / 2
    return KinematicChain((
        DHRow(half_pi, 0.0, 0.13),
        DHRow(0.0, -0.61, 0.0),
        DHRow(0.0, -0.57, 0.0),
        DHRow(half_pi, 0.0, 0.16),
        DHRow(-half_pi, 0.0, 0.12),
        DHRow(0.0, 0.05, 0.24),
    ))


def dh_matrix(theta: float, row: DHRow) -> RigidTransform:
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    rotation = np.array([
        [ct, -st * ca, st * sa],
        [st, ct * ca, -ct * sa],
        [0.0, sa, ca],
    ])
    return RigidTransform(rotation, [row.r * ct, row.r * st, row.d])


def _dh_batch(theta, alpha, r, d):
    """``(N, 4, 4)`` DH matrices for one joint over N samples."""
    n = theta.shape[0]
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    m = np.zeros((n, 4, 4))
    m[:, 0, 0] = ct
    m[:, 0, 1] = -st * ca
    m[:, 0, 2] = st * sa
    m[:, 0, 3] = r * ct
    m[:, 1, 0] = st
    m[:, 1, 1] = ct * ca
    m[:, 1, 2] = -ct * sa
    m[:, 1, 3] = r * st
    m[:, 2, 1] = sa
    m[:, 2, 2] = ca
    m[:, 2, 3] = d
    m[:, 3, 3] = 1.0
    return m


def _as_joint_matrix(chain: KinematicChain, joints) -> np.ndarray:
    q = np.asarray(joints, dtype=float)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2:
        raise DimensionMismatch(f"joint array must be 1-D or 2-D, got shape {q.shape}")
    if q.shape[1] != chain.dof:
        raise DimensionMismatch(f"expected {chain.dof} joint angles, got {q.shape[1]}")
    return q


def joint_frames(chain: KinematicChain, joints) -> np.ndarray:
    """Cumulative frames ``(N, K+1, 4, 4)``; index 0 is the base, K the end effector."""
    q = _as_joint_matrix(chain, joints) + chain.joint_biases
    n = q.shape[0]
    frames = np.empty((n, chain.dof + 1, 4, 4))
    frames[:, 0] = np.eye(4)
    p = chain.params
    for k in range(chain.dof):
        frames[:, k + 1] = frames[:, k] @ _dh_batch(q[:, k], p[k, 0], p[k, 1], p[k, 2])
    return frames


def forward_kinematics(chain: KinematicChain, joints) -> RigidTransform:
    q = np.asarray(joints, dtype=float)
    if q.ndim != 1 or q.shape[0] != chain.dof:
        raise DimensionMismatch(f"expected {chain.dof} joint angles, got shape {q.shape}")
    T = RigidTransform.identity()
    for theta, bias, row in zip(q, chain.joint_biases, chain.rows):
        T = T @ dh_matrix(theta + bias, row)
    return T


def contact_point(chain: KinematicChain, joints) -> np.ndarray:
    return forward_kinematics(chain, joints).translation.copy()


def contact_points(chain: KinematicChain, joints) -> np.ndarray:
    """Vectorized contact points for an ``(N, K)`` joint array."""
    q = _as_joint_matrix(chain, joints)
    if q.shape[0] == 0:
        return np.zeros((0, 3))
    return joint_frames(chain, q)[:, -1, :3, 3]


def build_contact_cloud(chain: KinematicChain, records: Sequence) -> PointCloud:
    if len(records) == 0:
        return PointCloud(np.zeros((0, 3)))
    rows = []
    for i, rec in enumerate(records):
        rec = np.asarray(rec, dtype=float)
        if rec.shape != (chain.dof,):
            raise DimensionMismatch(f"expected {chain.dof} joint angles, got shape {rec.shape}", index=i)
        rows.append(rec)
    return PointCloud(contact_points(chain, np.vstack(rows)))


def bias_jacobians(chain: KinematicChain, joints) -> np.ndarray:
    """``(N, 3, K)`` derivative of each contact point w.r.t. each joint bias.

    Column k is ``z_{k-1} x (p - o_{k-1})``: the joint-k axis (base frame)
    crossed with the lever arm from that axis origin to the contact point.
    """
    frames = joint_frames(chain, joints)
    axes = frames[:, :-1, :3, 2]
    origins = frames[:, :-1, :3, 3]
    tip = frames[:, -1, :3, 3]
    cols = np.cross(axes, tip[:, None, :] - origins)
    return np.transpose(cols, (0, 2, 1))


def bias_jacobian(chain: KinematicChain, joints) -> np.ndarray:
    q = np.asarray(joints, dtype=float)
    if q.ndim != 1 or q.shape[0] != chain.dof:
        raise DimensionMismatch(f"expected {chain.dof} joint angles, got shape {q.shape}")
    return bias_jacobians(chain, q)[0]


def angular_jacobians(chain: KinematicChain, joints) -> np.ndarray:
    """``(N, 3, K)`` angular-velocity Jacobian (joint axes in the base frame)."""
    frames = joint_frames(chain, joints)
    return np.transpose(frames[:, :-1, :3, 2], (0, 2, 1))


# -- file formats -----------------------------------------------------------

def read_chain(path) -> KinematicChain:
    """DH chain text file: one ``alpha r d`` row per joint, ``#`` comments."""
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"expected 'alpha r d', got {len(parts)} fields", lineno, path)
            try:
                values = [float(v) for v in parts]
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None
            if not np.all(np.isfinite(values)):
                raise ParseError("non-finite DH value", lineno, path)
            rows.append(DHRow(*values))
    if not rows:
        raise ParseError("no DH rows found", None, path)
    return KinematicChain(tuple(rows))


def write_chain(chain: KinematicChain, path):
    lines = ["# alpha[rad] r[m] d[m]"]
    lines += [f"{row.alpha:.17g} {row.r:.17g} {row.d:.17g}" for row in chain.rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_joint_log(path, dof=None) -> np.ndarray:
    """CSV with header ``theta_1,...,theta_K``; one contact record per line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty joint log", 1, path) from None
        expected = [f"theta_{k + 1}" for k in range(len(header))]
        if [h.strip() for h in header] != expected:
            raise ParseError(f"header must be {','.join(expected)}", 1, path)
        if dof is not None and len(header) != dof:
            raise DimensionMismatch(f"joint log has {len(header)} columns, chain has {dof} joints")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(row)}", lineno, path)
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None
            if not np.all(np.isfinite(values)):
                raise ParseError("non-finite joint angle", lineno, path)
            rows.append(values)
    return np.array(rows, dtype=float).reshape(-1, len(header))


def write_joint_log(joints, path):
    q = np.atleast_2d(np.asarray(joints, dtype=float))
    header = ",".join(f"theta_{k + 1}" for k in range(q.shape[1]))
    lines = [header] + [",".join(f"{v:.17g}" for v in row) for row in q]
    Path(path).write_text("\n".join(lines) + "\n")


def joint_ranges(joint_logs) -> np.ndarray:
    """Per-joint angular range of a log, radians.

    Angles are treated as circular: the range is ``2 pi`` minus the largest
    empty arc, so a joint swinging across +-pi is not reported as a full turn.
    """
    q = np.sort(np.mod(np.atleast_2d(np.asarray(joint_logs, dtype=float)), 2 * np.pi), axis=0)
    gaps = np.diff(q, axis=0, append=q[:1] + 2 * np.pi)
    return 2 * np.pi - gaps.max(axis=0)
