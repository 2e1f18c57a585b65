"""Joint extrinsic and joint-bias calibration by Levenberg-Marquardt.

The unknowns are a left-composed camera-frame increment of the extrinsic
transform (six numbers) and an additive bias per joint.  Every residual is
``n . (T a(theta + bias) - b)`` and every Jacobian column follows the same
convention as the rigid problem: ``r(params + d) ~ r - J d``.  The bias
columns are therefore ``-n^T R (d a / d bias)``.

Before a result is accepted the spectrum of the augmented hessian is
checked.  A joint solve whose hessian is (near) singular is reported as
degenerate and the rigid-only extrinsic is returned instead of biases that
the data cannot support.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateProblem, NonDecreasingCost
from .kinematics import KinematicChain, bias_jacobians, contact_points
from .pointcloud import PointCloud
from .registration import (
    Correspondences,
    IcpConfig,
    depth_index,
    find_correspondences,
    pairing_key,
    register,
    residuals,
    solve_normal_equations,
)
from .se3 import (
    ExtrinsicParams,
    RigidTransform,
    TwistIncrement,
    apply_increment,
    extrinsic_to_transform,
    transform_to_extrinsic,
)
from .stability import RIGID_NAMES, StabilityReport, _label, analyze

log = logging.getLogger(__name__)

def parameter_names(dof):
    return RIGID_NAMES + tuple(f"dtheta_{k + 1}" for k in range(dof))


@dataclass(frozen=True)
class CalibrationConfig:
    damping_init: float = 1e-4
    damping_decrease: float = 0.3
    damping_increase: float = 3.0
    max_iterations: int = 100
    parameter_tolerance: float = 1e-10
    max_rejections: int = 30
    condition_threshold: float = 1e10
    min_eigen_ratio: float = 1e-12
    pin_base_bias: bool = False
    icp: IcpConfig = field(default_factory=IcpConfig)


@dataclass(frozen=True, eq=False)
class CalibrationProblem:
    chain: KinematicChain
    joint_logs: np.ndarray
    depth: PointCloud
    initial_extrinsic: ExtrinsicParams
    solve_biases: bool = True
    config: CalibrationConfig = field(default_factory=CalibrationConfig)

    def __post_init__(self):
        logs = np.atleast_2d(np.asarray(self.joint_logs, dtype=float))
        if logs.size == 0:
            raise ValueError("joint_logs is empty")
        if logs.shape[1] != self.chain.dof:
            raise ValueError(f"joint logs have {logs.shape[1]} columns, chain has {self.chain.dof} joints")
        if self.depth.normals is None:
            raise ValueError("depth cloud needs normals")
        object.__setattr__(self, "joint_logs", logs)
        # the chain is the nominal model; biases are the unknowns
        object.__setattr__(self, "chain", self.chain.nominal())

    @property
    def dof(self):
        return self.chain.dof

    def active_parameters(self):
        """Indices into the 6+K parameter vector that the solver may move."""
        idx = list(range(6))
        if self.solve_biases:
            first = 1 if self.config.pin_base_bias else 0
            idx += [6 + k for k in range(first, self.dof)]
        return np.array(idx)


@dataclass(frozen=True)
class Degeneracy:
    determinant: float
    condition_number: float
    eigen_ratio: float
    labels: tuple

    def verdict(self):
        return "DEGENERATE: " + "; ".join(self.labels)


@dataclass(eq=False)
class CalibrationResult:
    extrinsic: ExtrinsicParams
    transform: RigidTransform
    joint_biases: np.ndarray
    final_cost: float
    augmented_hessian: np.ndarray
    degeneracy: Degeneracy | None
    history: list
    iterations: int
    converged: bool
    rigid_only: bool
    inner_history: list = field(default_factory=list)   # (cost before, cost after) per accepted step
    spectrum: StabilityReport | None = None

    @property
    def verdict(self):
        return "IDENTIFIABLE" if self.degeneracy is None else self.degeneracy.verdict()


def _contact_cloud(problem, biases):
    return PointCloud(contact_points(problem.chain.with_biases(biases), problem.joint_logs))


def _system(problem, corr: Correspondences, T: RigidTransform, biases, depth, center=None):
    """Residuals and full ``(N, 6+K)`` Jacobian over the active pairs of ``corr``."""
    active = corr.only_active()
    q = problem.joint_logs[active.source_index]
    chain = problem.chain.with_biases(biases)
    a = contact_points(chain, q)
    p = T.apply(a)
    n = active.normal
    r = residuals(p, depth.points[active.target_index], n)
    lever = p if center is None else p - center
    Jb = bias_jacobians(chain, q)                                  # (N, 3, K) base frame
    Jb_cam = np.einsum("ij,njk->nik", T.rotation, Jb)
    J = np.hstack([-n, -np.cross(lever, n), -np.einsum("ni,nik->nk", n, Jb_cam)])
    return r, J


def augmented_residual_jacobian(problem: CalibrationProblem, transform: RigidTransform, biases,
                                corr: Correspondences | None = None):
    """Residuals and ``(N, 6+K)`` Jacobian rows for the current pairing."""
    biases = np.asarray(biases, dtype=float)
    depth = problem.depth
    if corr is None:
        corr = find_correspondences(_contact_cloud(problem, biases), depth, depth_index(depth),
                                    transform, problem.config.icp)
    return _system(problem, corr, transform, biases, depth)


def _apply(T, biases, step, active):
    full = np.zeros(6 + len(biases))
    full[active] = step
    return apply_increment(T, TwistIncrement.from_vector(full[:6])), biases + full[6:]


def _fixed_pair_cost(problem, corr, T, biases, depth):
    active = corr.only_active()
    q = problem.joint_logs[active.source_index]
    p = T.apply(contact_points(problem.chain.with_biases(biases), q))
    r = residuals(p, depth.points[active.target_index], active.normal)
    return float(r @ r)


def identifiability_report(problem: CalibrationProblem, transform: RigidTransform, biases,
                           rank_tolerance=1e-8, center=None) -> StabilityReport:
    """Spectrum of the full 6+K hessian with labelled near-null combinations."""
    depth = problem.depth
    biases = np.asarray(biases, dtype=float)
    corr = find_correspondences(_contact_cloud(problem, biases), depth, depth_index(depth),
                                transform, problem.config.icp)
    _, J = _system(problem, corr, transform, biases, depth, center)
    H = np.einsum("ni,nj->ij", J, J)
    return analyze(H, rank_tolerance, parameter_names(problem.dof))


def gauge_direction(transform: RigidTransform, dof):
    """Parameter direction trading a base-joint bias against camera motion.

    A bias ``+delta`` on a first joint whose axis is the base z axis rotates
    every contact point about that axis; composing the extrinsic with the
    opposite base rotation cancels it exactly.  Unit length.
    """
    z = transform.rotation[:, 2]
    v = np.zeros(6 + dof)
    v[:3] = np.cross(z, transform.translation)
    v[3:6] = -z
    v[6] = 1.0
    return v / np.linalg.norm(v)


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    cfg = problem.config
    depth = problem.depth
    index = depth_index(depth)
    zero = np.zeros(problem.dof)

    rigid = register(_contact_cloud(problem, zero), depth,
                     extrinsic_to_transform(problem.initial_extrinsic), cfg.icp)
    rigid_rep = analyze(rigid.hessian)
    if rigid_rep.numeric_rank < 6:
        labels = ", ".join(label for _, label in rigid_rep.null_directions)
        raise DegenerateProblem(f"rigid registration has rank {rigid_rep.numeric_rank}: {labels}")

    active = problem.active_parameters()
    names = [parameter_names(problem.dof)[i] for i in active]
    T, biases = rigid.transform, zero.copy()
    corr = find_correspondences(_contact_cloud(problem, biases), depth, index, T, cfg.icp)
    mu = cfg.damping_init
    history, inner = [], []
    rejections = 0
    converged = False
    seen, frozen = {pairing_key(corr)}, False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        r, J = _system(problem, corr, T, biases, depth)
        J = J[:, active]
        cost = float(r @ r)
        if not history:
            history.append(cost)
        H = J.T @ J
        g = J.T @ r
        diag = np.diag(H).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        step, _, _ = solve_normal_equations(H + mu * np.diag(diag), g, rank_tolerance=1e-15)
        T_new, b_new = _apply(T, biases, step, active)
        new_cost = _fixed_pair_cost(problem, corr, T_new, b_new, depth)
        small = np.linalg.norm(step) < cfg.parameter_tolerance
        if new_cost <= cost:
            inner.append((cost, new_cost))
            T, biases = T_new, b_new
            mu *= cfg.damping_decrease
            rejections = 0
            if not frozen:
                # stop re-pairing once the pairing starts cycling
                prev = pairing_key(corr)
                corr = find_correspondences(_contact_cloud(problem, biases), depth, index, T, cfg.icp)
                key = pairing_key(corr)
                frozen = key != prev and key in seen
                seen.add(key)
            history.append(_fixed_pair_cost(problem, corr, T, biases, depth))
        else:
            mu *= cfg.damping_increase
            rejections += 1
            if rejections >= cfg.max_rejections and not small:
                raise NonDecreasingCost(f"{rejections} consecutive rejected steps at cost {cost:.6g}")
        if small:
            converged = True
            break

    r, J = _system(problem, corr, T, biases, depth)
    centroid = T.apply(contact_points(problem.chain.with_biases(biases),
                                      problem.joint_logs[corr.only_active().source_index])).mean(axis=0)
    _, Jc = _system(problem, corr, T, biases, depth, center=centroid)
    Jc = Jc[:, active]
    H = Jc.T @ Jc
    spectrum = analyze(H, names=names)
    lam = spectrum.eigenvalues
    lam_max, lam_min = lam[0], lam[-1]
    cond = float("inf") if lam_min <= 0 else float(lam_max / lam_min)
    ratio = lam_min / lam_max if lam_max > 0 else 0.0
    degeneracy = None
    if cond > cfg.condition_threshold or ratio < cfg.min_eigen_ratio:
        cut = max(lam_max / cfg.condition_threshold, cfg.min_eigen_ratio * lam_max)
        weak = [i for i in range(len(lam)) if lam[i] <= cut]
        labels = tuple(_label(spectrum.eigenvectors[i], tuple(names)) for i in weak)
        degeneracy = Degeneracy(float(np.prod(lam)), cond, float(ratio), labels)
        log.warning("augmented hessian is degenerate (cond %.3g): %s", cond, "; ".join(labels))

    if degeneracy is not None:
        return CalibrationResult(
            transform_to_extrinsic(rigid.transform), rigid.transform, zero.copy(), rigid.final_cost,
            H, degeneracy, history, it, converged, True, inner, spectrum)
    final_cost = float(r @ r)
    return CalibrationResult(transform_to_extrinsic(T), T, biases, final_cost, H, None, history,
                             it, converged, False, inner, spectrum)
