"""Rigid point-to-plane ICP between a contact map and a depth map.

Contact points ``a_i`` live in the manipulator base frame, depth points
``b_i`` and their normals ``n_i`` in the camera frame.  For the current
estimate ``T`` of the base-to-camera transform the residual of a pair is
``r_i = n_i . (T a_i - b_i)`` and its Jacobian row is

    J_i = [-n_i, -(p_i x n_i)],   p_i = T a_i,

so that after a left-composed increment ``d`` the residual is
``r_i - J_i d`` to first order.  Each Gauss-Newton step solves
``(sum w J^T J) d = sum w J^T r``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateNormalEquations,
    InsufficientCorrespondences,
    NoCorrespondences,
)
from .pointcloud import NeighborIndex, PointCloud, estimate_normals
from .se3 import RigidTransform, TwistIncrement, apply_increment

log = logging.getLogger(__name__)

STEP_RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 100
    translation_tolerance: float = 1e-7
    rotation_tolerance: float = 1e-7
    max_correspondence_distance: float = 0.5
    trim_ratio: float = 0.10
    normal_k: int = 12
    workers: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.translation_tolerance <= 0 or self.rotation_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_correspondence_distance <= 0:
            raise ValueError("max_correspondence_distance must be positive")
        if not 0.0 <= self.trim_ratio < 1.0:
            raise ValueError("trim_ratio must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Struct-of-arrays view of the current contact -> depth pairing."""

    source_index: np.ndarray
    target_index: np.ndarray
    normal: np.ndarray
    weight: np.ndarray
    distance: np.ndarray

    def __len__(self):
        return len(self.source_index)

    @property
    def active(self):
        return self.weight > 0

    def only_active(self):
        m = self.active
        return Correspondences(self.source_index[m], self.target_index[m], self.normal[m],
                               self.weight[m], self.distance[m])


@dataclass(eq=False)
class IcpResult:
    transform: RigidTransform
    final_cost: float
    iterations: int
    converged: bool
    correspondences_used: int
    hessian: np.ndarray
    degenerate: DegenerateNormalEquations | None = None
    history: list = field(default_factory=list)


def point_to_plane_residual(T: RigidTransform, a, b, n) -> float:
    return float(np.dot(n, T.apply(a) - np.asarray(b, dtype=float)))


def residual_jacobian(T: RigidTransform, a, n) -> np.ndarray:
    p = T.apply(a)
    n = np.asarray(n, dtype=float)
    return np.concatenate([-n, -np.cross(p, n)])


def residual_jacobians(points_cam, normals) -> np.ndarray:
    """Stacked ``(N, 6)`` Jacobian rows for points already in the camera frame."""
    return np.hstack([-normals, -np.cross(points_cam, normals)])


def residuals(points_cam, targets, normals) -> np.ndarray:
    return np.einsum("ij,ij->i", normals, points_cam - targets)


def depth_index(depth: PointCloud) -> NeighborIndex:
    """Index over the depth points that carry a valid normal."""
    return NeighborIndex(depth, np.flatnonzero(depth.weights > 0))


def find_correspondences(contact: PointCloud, depth: PointCloud, index: NeighborIndex,
                         T: RigidTransform, cfg: IcpConfig) -> Correspondences:
    if depth.normals is None:
        raise ValueError("depth cloud has no normals")
    src = np.flatnonzero(contact.weights > 0)
    moved = T.apply(contact.points[src])
    tgt, dist = index.nearest(moved, workers=cfg.workers)
    keep = dist <= cfg.max_correspondence_distance
    src, tgt, dist = src[keep], tgt[keep], dist[keep]
    if len(src) == 0:
        raise NoCorrespondences(
            f"no pair within {cfg.max_correspondence_distance} m")
    weight = np.ones(len(src))
    n_trim = int(np.floor(cfg.trim_ratio * len(src)))
    if n_trim > 0:
        # stable sort keeps ties in input order, so trimming is deterministic
        order = np.argsort(dist, kind="stable")
        weight[order[len(src) - n_trim:]] = 0.0
    return Correspondences(src, tgt, depth.normals[tgt], weight, dist)


def _pair_arrays(corr: Correspondences, T: RigidTransform, contact: PointCloud, depth: PointCloud):
    p = T.apply(contact.points[corr.source_index])
    return p, depth.points[corr.target_index], corr.normal


def pair_cost(corr: Correspondences, T: RigidTransform, contact: PointCloud, depth: PointCloud) -> float:
    p, b, n = _pair_arrays(corr, T, contact, depth)
    r = residuals(p, b, n)
    return float(np.sum(corr.weight * r * r))


def solve_normal_equations(H, g, rank_tolerance=STEP_RANK_TOLERANCE):
    """Minimum-norm solution of ``H d = g`` for symmetric PSD ``H``.

    Returns ``(d, rank, null_directions)``.
    """
    evals, evecs = np.linalg.eigh(H)
    lam_max = evals[-1]
    if lam_max <= 0:
        return np.zeros(len(g)), 0, evecs.T
    good = evals > rank_tolerance * lam_max
    coeff = np.zeros_like(evals)
    coeff[good] = (evecs[:, good].T @ g) / evals[good]
    d = evecs @ coeff
    return d, int(good.sum()), evecs[:, ~good].T


def icp_step(corr: Correspondences, T: RigidTransform, contact: PointCloud,
             depth: PointCloud) -> TwistIncrement:
    """One Gauss-Newton increment for fixed correspondences.

    Rank-deficient systems raise DegenerateNormalEquations; the exception
    still carries the minimum-norm increment so callers may apply it.
    """
    active = corr.only_active()
    if len(active) < 6:
        raise InsufficientCorrespondences(f"{len(active)} weighted pairs, need at least 6")
    p, b, n = _pair_arrays(active, T, contact, depth)
    r = residuals(p, b, n)
    J = residual_jacobians(p, n)
    w = active.weight
    H = np.einsum("n,ni,nj->ij", w, J, J)
    g = np.einsum("n,ni,n->i", w, J, r)
    d, rank, null = solve_normal_equations(H, g)
    step = TwistIncrement.from_vector(d)
    if rank < 6:
        raise DegenerateNormalEquations(rank, null, step)
    return step


def pairing_key(corr: Correspondences) -> bytes:
    """Hashable fingerprint of which pairs are active, used to spot pairing cycles."""
    keep = corr.weight > 0
    return corr.source_index[keep].tobytes() + corr.target_index[keep].tobytes()


def register(contact: PointCloud, depth: PointCloud, initial: RigidTransform,
             cfg: IcpConfig = IcpConfig(), viewpoint=None) -> IcpResult:
    """Iterate pairing and Gauss-Newton steps until the increment is negligible.

    When the depth cloud has no normals they are estimated with
    ``cfg.normal_k`` neighbours, oriented towards ``viewpoint`` (camera frame).
    Noisy data can make the pairing flip between a few sets forever; once a
    set repeats, the pairing is frozen and the step is solved on fixed pairs.
    """
    if depth.normals is None:
        if viewpoint is None:
            raise ValueError("depth cloud has no normals and no viewpoint was given")
        depth = estimate_normals(depth, cfg.normal_k, viewpoint, workers=cfg.workers)
    index = depth_index(depth)
    T = initial
    converged = False
    degenerate = None
    history = []
    iterations = 0
    seen, frozen, corr = set(), False, None
    for iterations in range(1, cfg.max_iterations + 1):
        if not frozen:
            prev = corr
            corr = find_correspondences(contact, depth, index, T, cfg)
            key = pairing_key(corr)
            if key in seen and (prev is None or key != pairing_key(prev)):
                frozen = True
            seen.add(key)
        history.append(pair_cost(corr, T, contact, depth))
        try:
            step = icp_step(corr, T, contact, depth)
            degenerate = None
        except DegenerateNormalEquations as exc:
            step = exc.increment
            degenerate = exc
        T = apply_increment(T, step)
        if (np.linalg.norm(step.delta_translation) < cfg.translation_tolerance
                and np.linalg.norm(step.delta_rotation) < cfg.rotation_tolerance):
            converged = True
            break

    corr = find_correspondences(contact, depth, index, T, cfg)
    active = corr.only_active()
    p, b, n = _pair_arrays(active, T, contact, depth)
    J = residual_jacobians(p, n)
    hessian = np.einsum("ni,nj->ij", J, J)
    final_cost = pair_cost(corr, T, contact, depth)
    if degenerate is not None:
        log.warning("registration ended on rank-%d normal equations", degenerate.rank)
        converged = False
    return IcpResult(T, final_cost, iterations, converged, len(active), hessian, degenerate, history)
