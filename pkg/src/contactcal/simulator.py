"""Synthetic ground truth: planar scenes, depth scans, contact rasters and joint logs.

Everything is expressed in the manipulator base frame unless stated
otherwise; depth clouds come out in the camera frame.  Randomness is drawn
from per-purpose child streams of a single seed, so changing one stage
(e.g. the raster spacing) does not reshuffle the noise of another.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySelection, IkFailure, ParseError, UnknownPreset
from .kinematics import KinematicChain, contact_points, joint_frames
from .pointcloud import PointCloud
from .se3 import ExtrinsicParams, RigidTransform, extrinsic_to_transform, normalize_angle, so3_exp

log = logging.getLogger(__name__)

# camera looking down at the table from behind-left of the arm
DEFAULT_EXTRINSIC = ExtrinsicParams(0.447, 0.350, 1.256, math.radians(-135.0),
                                    math.radians(-36.7), math.radians(-149.1))

PRESETS = ("two_prisms_table", "one_prism_table", "single_plane", "orthogonal_triplet")

# candidate starting configurations for the generic six-axis arm
HOME_CONFIGS = np.array([
    [0.0, -1.2, 1.6, -1.97, -1.57, 0.0],
    [0.0, -1.0, 1.2, -0.2, 1.57, 0.0],
    [0.0, -0.8, 1.4, 0.6, 1.57, 0.0],
    [0.0, -1.4, 2.0, -0.6, -1.57, 0.0],
    [0.0, -0.6, 1.0, -1.97, -1.57, 0.0],
    [0.0, -1.5, 1.8, 1.2, 1.57, 0.0],
])


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True, eq=False)
class Patch:
    """Rectangle ``corner + u*edge1 + v*edge2`` with outward normal ``edge1 x edge2``."""

    label: str
    corner: np.ndarray
    edge1: np.ndarray
    edge2: np.ndarray

    def __post_init__(self):
        for name in ("corner", "edge1", "edge2"):
            a = np.array(getattr(self, name), dtype=float).reshape(3)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        e1, e2 = self.edge1, self.edge2
        if abs(e1 @ e2) > 1e-9 * max(1.0, np.linalg.norm(e1) * np.linalg.norm(e2)):
            raise ValueError(f"patch {self.label}: edges are not orthogonal")
        if np.linalg.norm(np.cross(e1, e2)) == 0:
            raise ValueError(f"patch {self.label}: zero area")

    @property
    def normal(self):
        n = np.cross(self.edge1, self.edge2)
        return n / np.linalg.norm(n)

    @property
    def area(self):
        return float(np.linalg.norm(np.cross(self.edge1, self.edge2)))

    @property
    def center(self):
        return self.corner + 0.5 * (self.edge1 + self.edge2)

    def at(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        return self.corner + u * self.edge1 + v * self.edge2

    def distance(self, points):
        """Euclidean distance from points to the (closed) rectangle."""
        d = np.asarray(points, dtype=float) - self.corner
        l1, l2 = np.linalg.norm(self.edge1), np.linalg.norm(self.edge2)
        u = np.clip(d @ self.edge1 / l1 ** 2, 0.0, 1.0)
        v = np.clip(d @ self.edge2 / l2 ** 2, 0.0, 1.0)
        return np.linalg.norm(np.asarray(points) - self.at(u, v), axis=-1)


@dataclass(frozen=True)
class Scene:
    patches: tuple

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))

    @property
    def labels(self):
        return [p.label for p in self.patches]

    def select(self, selection):
        """Patches whose label equals a selector or starts with ``selector + '.'``."""
        chosen = []
        for p in self.patches:
            if any(p.label == s or p.label.startswith(s + ".") for s in selection):
                chosen.append(p)
        return chosen

    def nearest_patch(self, points):
        """Label of the closest patch for each point, and that distance."""
        d = np.stack([p.distance(points) for p in self.patches], axis=-1)
        idx = np.argmin(d, axis=-1)
        return np.array(self.labels)[idx], np.min(d, axis=-1)


def _box_faces(name, x0, x1, y0, y1, h):
    lx, ly = x1 - x0, y1 - y0
    return [
        Patch(f"{name}.top", (x0, y0, h), (lx, 0, 0), (0, ly, 0)),
        Patch(f"{name}.xneg", (x0, y0, 0), (0, 0, h), (0, ly, 0)),
        Patch(f"{name}.xpos", (x1, y0, 0), (0, ly, 0), (0, 0, h)),
        Patch(f"{name}.yneg", (x0, y0, 0), (lx, 0, 0), (0, 0, h)),
        Patch(f"{name}.ypos", (x0, y1, 0), (0, 0, h), (lx, 0, 0)),
    ]


def _table_cells(x0, x1, y0, y1, footprints):
    """Split a table rectangle into cells that avoid the box footprints."""
    xs = sorted({x0, x1, *[v for f in footprints for v in f[:2] if x0 < v < x1]})
    ys = sorted({y0, y1, *[v for f in footprints for v in f[2:] if y0 < v < y1]})
    cells = []
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            cx, cy = 0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])
            if any(f[0] <= cx <= f[1] and f[2] <= cy <= f[3] for f in footprints):
                continue
            cells.append(Patch(f"table.{len(cells)}", (xs[i], ys[j], 0.0),
                               (xs[i + 1] - xs[i], 0, 0), (0, ys[j + 1] - ys[j], 0)))
    return cells


TABLE = (0.2, 1.0, -0.6, 0.6)
BIG_PRISM = (0.4, 0.8, -0.45, -0.15, 0.345)
SMALL_PRISM = (0.45, 0.7, 0.1, 0.3, 0.15)


def make_benchmark_scene(name: str) -> Scene:
    """Named planar scene in the base frame (z up, table top at z = 0)."""
    if name == "two_prisms_table":
        boxes = [("big", BIG_PRISM), ("small", SMALL_PRISM)]
    elif name == "one_prism_table":
        boxes = [("big", BIG_PRISM)]
    elif name == "single_plane":
        return Scene(_table_cells(*TABLE, []))
    elif name == "orthogonal_triplet":
        return Scene([
            Patch("floor", (0.3, -0.3, 0.0), (0.5, 0, 0), (0, 0.6, 0)),
            Patch("wall_x", (0.8, -0.3, 0.0), (0, 0, 0.4), (0, 0.6, 0)),
            Patch("wall_y", (0.3, -0.3, 0.0), (0, 0, 0.4), (0.5, 0, 0)),
        ])
    else:
        raise UnknownPreset(name)
    patches = _table_cells(*TABLE, [b[:4] for _, b in boxes])
    for label, (x0, x1, y0, y1, h) in boxes:
        patches += _box_faces(label, x0, x1, y0, y1, h)
    return Scene(patches)


def write_patches(scene: Scene, path):
    lines = ["# label cx cy cz e1x e1y e1z e2x e2y e2z  (metres)"]
    for p in scene.patches:
        nums = " ".join(f"{v:.17g}" for v in (*p.corner, *p.edge1, *p.edge2))
        lines.append(f"{p.label} {nums}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_patches(path) -> Scene:
    patches = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 10:
                raise ParseError(f"expected label + 9 numbers, got {len(parts)} fields", lineno, path)
            try:
                v = [float(x) for x in parts[1:]]
                patches.append(Patch(parts[0], v[0:3], v[3:6], v[6:9]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None
    return Scene(patches)


# -- depth ------------------------------------------------------------------

@dataclass(frozen=True)
class DepthScanConfig:
    camera_pose: RigidTransform = field(default_factory=lambda: extrinsic_to_transform(DEFAULT_EXTRINSIC))
    point_density: float = 50_000.0
    gaussian_sigma: float = 0.0
    bow_amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.point_density <= 0:
            raise ValueError("point_density must be positive")
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be non-negative")


def render_depth(scene: Scene, cfg: DepthScanConfig) -> PointCloud:
    """Uniform samples on camera-facing patches, expressed in the camera frame.

    ``camera_pose`` is the base-to-camera transform.  Each sample is displaced
    along its patch normal by Gaussian noise plus a bow that peaks at the
    patch centre and vanishes at the corners.  Normals are the true ones.
    """
    camera = cfg.camera_pose.inverse().translation
    rngs = _streams(cfg.seed, len(scene.patches))
    points, normals = [], []
    for patch, rng in zip(scene.patches, rngs):
        count = int(round(cfg.point_density * patch.area))
        u = rng.random(count)
        v = rng.random(count)
        noise = rng.standard_normal(count) * cfg.gaussian_sigma
        p = patch.at(u, v)
        n = patch.normal
        visible = (camera - p) @ n > 0
        if not np.any(visible):
            continue
        bow = cfg.bow_amplitude * (1.0 - 0.5 * ((2 * u - 1) ** 2 + (2 * v - 1) ** 2))
        p = p + (noise + bow)[:, None] * n
        points.append(p[visible])
        normals.append(np.broadcast_to(n, (int(visible.sum()), 3)))
    if not points:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    cloud = PointCloud(np.vstack(points), np.vstack(normals))
    return cloud.transformed(cfg.camera_pose)


# -- contact ----------------------------------------------------------------

@dataclass(frozen=True)
class ContactScanConfig:
    selected_patches: tuple = ("table", "big", "small")
    raster_spacing: float = 0.02
    contact_noise_sigma: float = 0.001
    force_setpoint: float = -4.0
    force_min: float = -3.0
    force_max: float = -15.0
    force_sigma: float = 1.0
    tool_tilt_max: float = 0.0      # rad, spread of tool axis about the surface normal
    seed_jitter: float = 0.0        # rad, spread of IK starting configurations
    visible_only: bool = True       # drop contacts on surfaces facing away from the camera
    fixed_wrist: bool = False       # hold joints 4.. at one configuration, position with joints 1-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "selected_patches", tuple(self.selected_patches))
        if not abs(self.force_min) < abs(self.force_setpoint) < abs(self.force_max):
            raise ValueError("need |force_min| < |force_setpoint| < |force_max|")
        if self.raster_spacing <= 0:
            raise ValueError("raster_spacing must be positive")
        if self.contact_noise_sigma < 0:
            raise ValueError("contact_noise_sigma must be non-negative")


@dataclass(frozen=True, eq=False)
class RasterPlan:
    points: np.ndarray
    normals: np.ndarray
    labels: np.ndarray
    forces: np.ndarray
    drawn: int          # raster nodes before force admission

    def __len__(self):
        return len(self.points)

    def subset(self, index):
        return RasterPlan(self.points[index], self.normals[index], self.labels[index],
                          self.forces[index], self.drawn)


def admission_probability(cfg: ContactScanConfig) -> float:
    """Probability that a Gaussian force reading falls inside the thresholds."""
    lo, hi = sorted((cfg.force_min, cfg.force_max))
    s = cfg.force_sigma * math.sqrt(2.0)
    return 0.5 * (math.erf((hi - cfg.force_setpoint) / s) - math.erf((lo - cfg.force_setpoint) / s))


def _raster_uv(patch: Patch, spacing):
    l1, l2 = np.linalg.norm(patch.edge1), np.linalg.norm(patch.edge2)
    n1 = max(1, int(round(l1 / spacing)))
    n2 = max(1, int(round(l2 / spacing)))
    us = (np.arange(n1) + 0.5) / n1
    vs = (np.arange(n2) + 0.5) / n2
    rows = []
    for j, v in enumerate(vs):
        line = us if j % 2 == 0 else us[::-1]   # boustrophedon
        rows.append(np.column_stack([line, np.full(n1, v)]))
    return np.vstack(rows)


def plan_contact_raster(scene: Scene, cfg: ContactScanConfig) -> RasterPlan:
    """Raster the selected patches and keep the contacts the force model admits.

    Normal-direction contact noise is truncated at 4 sigma.
    """
    patches = scene.select(cfg.selected_patches) if cfg.selected_patches else []
    if not patches:
        raise EmptySelection(f"no patch matches {list(cfg.selected_patches)}")
    force_rng, noise_rng = _streams(cfg.seed, 2)
    pts, nrm, lab = [], [], []
    for patch in patches:
        uv = _raster_uv(patch, cfg.raster_spacing)
        pts.append(patch.at(uv[:, 0], uv[:, 1]))
        nrm.append(np.broadcast_to(patch.normal, (len(uv), 3)))
        lab += [patch.label] * len(uv)
    points = np.vstack(pts)
    normals = np.vstack(nrm)
    labels = np.array(lab)
    drawn = len(points)

    forces = cfg.force_setpoint + cfg.force_sigma * force_rng.standard_normal(drawn)
    lo, hi = sorted((cfg.force_min, cfg.force_max))
    admitted = (forces >= lo) & (forces <= hi)

    noise = cfg.contact_noise_sigma * noise_rng.standard_normal(drawn)
    noise = np.clip(noise, -4 * cfg.contact_noise_sigma, 4 * cfg.contact_noise_sigma)
    points = points + noise[:, None] * normals
    return RasterPlan(points[admitted], normals[admitted].copy(), labels[admitted],
                      forces[admitted], drawn)


# -- inverse kinematics -----------------------------------------------------

def _tilt(normals, max_angle, rng):
    """Rotate each normal by a random angle in [0, max_angle] about a random perpendicular axis."""
    if max_angle <= 0:
        return normals.copy()
    n = len(normals)
    ref = np.where(np.abs(normals[:, [0]]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    a = np.cross(normals, ref)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = np.cross(normals, a)
    phi = rng.uniform(0, 2 * np.pi, n)
    tau = rng.uniform(0, max_angle, n)
    axis = np.cos(phi)[:, None] * a + np.sin(phi)[:, None] * b
    out = np.empty_like(normals)
    for i in range(n):
        out[i] = so3_exp(tau[i] * axis[i]) @ normals[i]
    return out


def solve_ik_batch(chain: KinematicChain, targets, approach_normals, seeds, damping=0.05,
                   max_iterations=200, position_tolerance=1e-6,
                   orientation_tolerance=math.radians(1.0), orientation_weight=0.5,
                   free_joints=None):
    """Damped least-squares IK for many targets at once.

    Position is the hard goal; the tool z axis is pulled towards
    ``-approach_normal`` as a soft goal.  With ``orientation_weight=0`` the
    tool axis is ignored.  ``free_joints`` (bool mask) freezes the other
    joints at their seed values.  Returns ``(joints, ok)``.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    z_goal = -np.atleast_2d(np.asarray(approach_normals, dtype=float))
    q = np.array(np.atleast_2d(seeds), dtype=float)
    if len(q) == 1 and len(targets) > 1:
        q = np.repeat(q, len(targets), axis=0)
    n, k = q.shape
    running = np.ones(n, dtype=bool)
    pos_err = np.full(n, np.inf)
    ang_err = np.full(n, np.inf)
    lam2 = damping ** 2
    use_orientation = orientation_weight > 0
    frozen = None if free_joints is None else ~np.asarray(free_joints, dtype=bool)
    for _ in range(max_iterations + 1):
        idx = np.flatnonzero(running)
        if len(idx) == 0:
            break
        frames = joint_frames(chain, q[idx])
        tip = frames[:, -1, :3, 3]
        z_tool = frames[:, -1, :3, 2]
        ep = targets[idx] - tip
        eo = np.cross(z_tool, z_goal[idx])
        pos_err[idx] = np.linalg.norm(ep, axis=1)
        if use_orientation:
            ang_err[idx] = np.arctan2(np.linalg.norm(eo, axis=1), np.einsum("ij,ij->i", z_tool, z_goal[idx]))
        else:
            ang_err[idx] = 0.0
        # keep refining orientation well past the soft tolerance while cheap
        done = (pos_err[idx] < position_tolerance) & (ang_err[idx] < 1e-9)
        running[idx[done]] = False
        idx = idx[~done]
        if len(idx) == 0:
            break
        frames = frames[~done]
        tip, ep, eo = tip[~done], ep[~done], eo[~done]
        axes = frames[:, :-1, :3, 2]
        origins = frames[:, :-1, :3, 3]
        jp = np.cross(axes, tip[:, None, :] - origins).transpose(0, 2, 1)
        jw = axes.transpose(0, 2, 1) * orientation_weight
        if use_orientation:
            J = np.concatenate([jp, jw], axis=1)
            e = np.concatenate([ep, orientation_weight * eo], axis=1)
        else:
            J, e = jp, ep
        if frozen is not None:
            J = J.copy()
            J[:, :, frozen] = 0.0
        A = J @ J.transpose(0, 2, 1) + lam2 * np.eye(J.shape[1])
        y = np.linalg.solve(A, e[:, :, None])
        q[idx] += (J.transpose(0, 2, 1) @ y)[:, :, 0]
    ok = (pos_err < position_tolerance) & (ang_err < orientation_tolerance)
    return q, ok


def solve_ik(chain: KinematicChain, target, approach_normal, seed_config, **kwargs) -> np.ndarray:
    q, ok = solve_ik_batch(chain, target, approach_normal, seed_config, **kwargs)
    if not ok[0]:
        raise IkFailure(f"no IK solution for target {np.asarray(target).tolist()}")
    return q[0]


def _patch_seed(chain, point, normal):
    for home in HOME_CONFIGS:
        try:
            return solve_ik(chain, point, normal, home, max_iterations=400)
        except IkFailure:
            continue
    return None


# -- datasets ---------------------------------------------------------------

@dataclass(eq=False)
class GroundTruth:
    extrinsic: ExtrinsicParams
    biases: np.ndarray
    scene: Scene
    contact_points: np.ndarray     # base frame, true positions
    contact_normals: np.ndarray
    labels: np.ndarray

    @property
    def transform(self):
        return extrinsic_to_transform(self.extrinsic)


@dataclass(eq=False)
class Dataset:
    depth: PointCloud
    joint_logs: np.ndarray
    truth: GroundTruth


def generate_dataset(scene: Scene, depth_cfg: DepthScanConfig, contact_cfg: ContactScanConfig,
                     chain: KinematicChain, true_extrinsic: ExtrinsicParams, true_biases=None) -> Dataset:
    """Simulate a calibration session.

    Joint logs are what the encoders of the true (biased) arm would read, so
    forward kinematics with the nominal chain reproduces the contact map a
    miscalibrated system would build.
    """
    true_biases = np.zeros(chain.dof) if true_biases is None else np.asarray(true_biases, dtype=float)
    true_chain = chain.with_biases(true_biases)
    true_T = extrinsic_to_transform(true_extrinsic)
    depth_cfg = DepthScanConfig(true_T, depth_cfg.point_density, depth_cfg.gaussian_sigma,
                                depth_cfg.bow_amplitude, depth_cfg.seed)
    plan = plan_contact_raster(scene, contact_cfg)
    if contact_cfg.visible_only:
        camera = true_T.inverse().translation
        facing = np.einsum("ij,ij->i", camera - plan.points, plan.normals) > 0
        if not np.any(facing):
            raise EmptySelection("no selected surface faces the camera")
        plan = plan.subset(np.flatnonzero(facing))
    tilt_rng, jitter_rng = _streams(contact_cfg.seed + 7919, 2)
    approach = _tilt(plan.normals, contact_cfg.tool_tilt_max, tilt_rng)

    seeds = np.zeros((len(plan), chain.dof))
    usable = np.ones(len(plan), dtype=bool)
    if contact_cfg.fixed_wrist:
        # one wrist configuration for every contact; only the arm joints move
        seeds[:] = HOME_CONFIGS[0]
        if contact_cfg.seed_jitter > 0:
            seeds[:, :3] += contact_cfg.seed_jitter * jitter_rng.standard_normal((len(plan), 3))
        free = np.zeros(chain.dof, dtype=bool)
        free[:3] = True
        joints, ok = solve_ik_batch(true_chain, plan.points, approach, seeds, orientation_weight=0.0,
                                    free_joints=free, max_iterations=400)
        return _finish(scene, plan, joints, ok, usable, depth_cfg, true_extrinsic, true_biases)
    for lab in dict.fromkeys(plan.labels.tolist()):
        members = np.flatnonzero(plan.labels == lab)
        patch = scene.select([lab])[0]
        seed = _patch_seed(true_chain, patch.center + 0.0 * patch.normal, patch.normal)
        if seed is None:
            log.warning("patch %s unreachable, skipping %d contacts", lab, len(members))
            usable[members] = False
            continue
        seeds[members] = seed
    if contact_cfg.seed_jitter > 0:
        seeds += contact_cfg.seed_jitter * jitter_rng.standard_normal(seeds.shape)

    joints, ok = solve_ik_batch(true_chain, plan.points, approach, seeds)
    return _finish(scene, plan, joints, ok, usable, depth_cfg, true_extrinsic, true_biases)


def _finish(scene, plan, joints, ok, usable, depth_cfg, true_extrinsic, true_biases):
    keep = ok & usable
    if not np.all(keep):
        log.info("IK skipped %d of %d contacts", int((~keep).sum()), len(plan))
    joints = normalize_angle(joints[keep])
    truth = GroundTruth(true_extrinsic, true_biases, scene, plan.points[keep],
                        plan.normals[keep], plan.labels[keep])
    depth = render_depth(scene, depth_cfg)
    return Dataset(depth, joints, truth)


def bias_deformation(chain: KinematicChain, joint_logs, biases):
    """Contact maps without and with ``biases`` plus per-point displacement."""
    q = np.asarray(joint_logs, dtype=float)
    base = contact_points(chain.nominal(), q)
    moved = contact_points(chain.with_biases(biases), q)
    return base, moved, np.linalg.norm(moved - base, axis=1)
