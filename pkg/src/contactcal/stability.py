"""Observability of a registration from the approximate Hessian ``Q = sum J^T J``.

The rotation block of ``Q`` depends on where rotations are centred, so
hessians can be assembled about an explicit centre (by default the centroid
of the paired contact points in the camera frame).  Both the raw and the
centred condition numbers are useful; only the centred one is invariant to
moving the whole scene.  No unit balancing is applied between the metre and
radian blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import AsymmetricInput, NoActivePairs
from .registration import Correspondences, residual_jacobians
from .se3 import RigidTransform

RIGID_NAMES = ("tx", "ty", "tz", "rx", "ry", "rz")

_PRETTY = {
    "tx": "translation x", "ty": "translation y", "tz": "translation z",
    "rx": "rotation about x", "ry": "rotation about y", "rz": "rotation about z",
}


@dataclass(eq=False)
class StabilityReport:
    hessian: np.ndarray
    eigenvalues: np.ndarray          # descending
    eigenvectors: np.ndarray         # rows, unit
    condition_number: float
    numeric_rank: int
    null_directions: list = field(default_factory=list)   # (vector, label)
    names: tuple = RIGID_NAMES

    @property
    def determinant(self):
        return float(np.prod(self.eigenvalues))


def hessian_from_pairs(points_cam, normals, center=None) -> np.ndarray:
    """``sum J_i^T J_i`` with rotation lever arms measured from ``center``."""
    points_cam = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(points_cam) == 0:
        raise NoActivePairs("no pairs to build a hessian from")
    if center is not None:
        points_cam = points_cam - np.asarray(center, dtype=float)
    J = residual_jacobians(points_cam, normals)
    return np.einsum("ni,nj->ij", J, J)


def assemble_hessian(corr: Correspondences, T: RigidTransform, contact, depth=None,
                     center=None) -> np.ndarray:
    """Hessian over the weight-1 pairs of ``corr`` at transform ``T``.

    ``center="centroid"`` re-centres on the paired contact points.
    """
    active = corr.only_active()
    if len(active) == 0:
        raise NoActivePairs("every pair has weight 0")
    p = T.apply(contact.points[active.source_index])
    if isinstance(center, str) and center == "centroid":
        center = p.mean(axis=0)
    return hessian_from_pairs(p, active.normal, center)


def _label(vec, names):
    share = vec ** 2 / np.sum(vec ** 2)
    order = np.argsort(-share, kind="stable")
    top = names[order[0]]
    if share[order[0]] >= 0.9:
        return _PRETTY.get(top, top)
    second = names[order[1]]
    if share[order[0]] + share[order[1]] >= 0.9:
        return f"{_PRETTY.get(top, top)} vs {_PRETTY.get(second, second)} trade-off"
    # list the parameters that together carry 90% of the direction
    cum = np.cumsum(share[order])
    count = int(np.searchsorted(cum, 0.9) + 1)
    return "mixed: " + ", ".join(_PRETTY.get(names[i], names[i]) for i in order[:count])


def _aligned_basis(null):
    """Re-express a null-space basis along coordinate axes where possible.

    Repeated (zero) eigenvalues leave the eigenvectors arbitrary inside the
    null space; projecting coordinate axes onto it and orthonormalizing in
    order of projection length yields a readable, deterministic basis.
    """
    dim = len(null)
    if dim <= 1:
        return list(null)
    P = null.T @ null
    order = np.argsort(-np.diag(P), kind="stable")
    basis = []
    for i in order:
        v = P[:, i].copy()
        for b in basis:
            v -= (b @ v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            v /= norm
            j = int(np.argmax(np.abs(v)))
            basis.append(v if v[j] >= 0 else -v)
        if len(basis) == dim:
            break
    return basis


def condition_number(eigenvalues) -> float:
    lam = np.asarray(eigenvalues, dtype=float)
    if lam[-1] <= 0:
        return float("inf")
    return float(lam[0] / lam[-1])


def analyze(Q, rank_tolerance=1e-8, names=None) -> StabilityReport:
    """Eigen-structure of a symmetric PSD hessian, eigenvalues descending."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if Q.shape != (n, n):
        raise ValueError(f"hessian must be square, got {Q.shape}")
    scale = max(1.0, float(np.max(np.abs(Q))))
    if np.max(np.abs(Q - Q.T)) > 1e-9 * scale:
        raise AsymmetricInput("hessian is not symmetric")
    names = tuple(names) if names is not None else (RIGID_NAMES if n == 6 else tuple(f"p{i}" for i in range(n)))
    Q = 0.5 * (Q + Q.T)
    evals, evecs = np.linalg.eigh(Q)
    evals = evals[::-1]
    evecs = evecs[:, ::-1].T
    # a deterministic sign per eigenvector keeps reports byte-stable
    for i, v in enumerate(evecs):
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            evecs[i] = -v
    lam1 = evals[0]
    if lam1 <= 0:
        rank = 0
    else:
        rank = int(np.sum(evals > rank_tolerance * lam1))
    cond = float("inf") if rank < n else condition_number(evals)
    null = [(v, _label(v, names)) for v in _aligned_basis(evecs[rank:])]
    return StabilityReport(Q, evals, evecs, cond, rank, null, names)


@dataclass(frozen=True)
class SamplingRow:
    label: str
    n_points: int
    rank: int
    eigenvalues: np.ndarray
    condition_number: float


def mask_members(labels, selection):
    labels = np.asarray(labels)
    keep = np.zeros(len(labels), dtype=bool)
    for sel in selection:
        keep |= (labels == sel) | np.char.startswith(labels.astype(str), sel + ".")
    return keep


def compare_sampling(points_base, normals_base, labels, masks: Mapping[str, Sequence[str]] | Sequence,
                     transform: RigidTransform = RigidTransform(), rank_tolerance=1e-8):
    """Condition number per sampling mask, using ground-truth pairing.

    ``masks`` maps a mask name to the patch labels it keeps (a label also
    matches ``label.<anything>``).  Rotation lever arms are centred on each
    mask's own contact centroid.
    """
    items = masks.items() if isinstance(masks, Mapping) else masks
    points_cam = transform.apply(np.asarray(points_base, dtype=float))
    normals_cam = transform.rotate(np.asarray(normals_base, dtype=float))
    rows = []
    for name, selection in items:
        keep = mask_members(labels, list(selection))
        if not np.any(keep):
            raise NoActivePairs(f"mask '{name}' selects no contact points")
        p = points_cam[keep]
        Q = hessian_from_pairs(p, normals_cam[keep], p.mean(axis=0))
        rep = analyze(Q, rank_tolerance)
        rows.append(SamplingRow(name, int(keep.sum()), rep.numeric_rank, rep.eigenvalues, rep.condition_number))
    return rows
