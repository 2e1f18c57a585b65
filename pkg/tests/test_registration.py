import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import dataset, planes_cloud
from contactcal.kinematics import contact_points, generic_six_axis
from contactcal.errors import DegenerateNormalEquations, InsufficientCorrespondences, NoCorrespondences
from contactcal.pointcloud import PointCloud
from contactcal.registration import (
    IcpConfig,
    depth_index,
    find_correspondences,
    icp_step,
    pair_cost,
    point_to_plane_residual,
    register,
    residual_jacobian,
    residual_jacobians,
    solve_normal_equations,
)
from contactcal.se3 import (
    ExtrinsicParams,
    RigidTransform,
    TwistIncrement,
    apply_increment,
    extrinsic_to_transform,
    transform_error,
    transform_to_extrinsic,
)

AXES = np.eye(3)
TRUTH = extrinsic_to_transform(ExtrinsicParams(0.837, 0.257, 0.688, math.radians(-125), 0.1, -0.2))


CORNER = np.array([0.3, -0.2, 0.1])


def corner_faces(rng, n_each, size=0.5, margin=0.0):
    """Three orthogonal square faces meeting at CORNER (inside of a box corner)."""
    pts, nrm = [], []
    for k in range(3):
        uv = rng.uniform(margin, size, (n_each, 2))
        p = np.zeros((n_each, 3))
        p[:, [(k + 1) % 3, (k + 2) % 3]] = uv
        pts.append(p + CORNER)
        nrm.append(np.broadcast_to(AXES[k], (n_each, 3)))
    return PointCloud(np.vstack(pts), np.vstack(nrm))


def triplet_scene(rng, n_depth=3000, n_contact=600, truth=TRUTH):
    """Dense camera-frame depth of a box corner plus sparse base-frame contacts off the edges."""
    depth = corner_faces(rng, n_depth // 3).transformed(truth)
    contact = corner_faces(rng, n_contact // 3, size=0.45, margin=0.05)
    return PointCloud(contact.points), depth


def perturbed(T, rng, t=0.1, deg=15.0):
    """Shift every extrinsic parameter by up to ``t`` metres or ``deg`` degrees."""
    p = transform_to_extrinsic(T).as_array()
    p += np.concatenate([rng.uniform(-t, t, 3), np.radians(rng.uniform(-deg, deg, 3))])
    return extrinsic_to_transform(ExtrinsicParams.from_array(p))


def test_residual_examples():
    I = RigidTransform.identity()
    assert point_to_plane_residual(I, [0, 0, 1], [0, 0, 0], [0, 0, 1]) == 1.0
    assert point_to_plane_residual(I, [0.3, -2, 5], [0.3, -2, 5], [0.6, 0.8, 0]) == 0.0
    down = RigidTransform(np.eye(3), [0, 0, -1])
    assert point_to_plane_residual(down, [0, 0, 1], [0, 0, 0], [0, 0, 1]) == 0.0


def test_jacobian_examples():
    I = RigidTransform.identity()
    assert np.array_equal(residual_jacobian(I, [0, 0, 0], [0, 0, 1]), [0, 0, -1, 0, 0, 0])
    J = residual_jacobian(I, [1, 0, 0], [0, 0, 1])
    assert np.allclose(J, [0, 0, -1, 0, 1, 0])


def fd_jacobian(T, a, b, n, h=1e-7):
    # r(T (+) d) ~ r - J d
    out = np.empty(6)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        rp = point_to_plane_residual(apply_increment(T, TwistIncrement.from_vector(e)), a, b, n)
        rm = point_to_plane_residual(apply_increment(T, TwistIncrement.from_vector(-e)), a, b, n)
        out[k] = -(rp - rm) / (2 * h)
    return out


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(500):
        T = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
        a, b = rng.normal(size=3), rng.normal(size=3)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        worst = max(worst, np.max(np.abs(residual_jacobian(T, a, n) - fd_jacobian(T, a, b, n))))
    assert worst < 1e-6


def test_batched_jacobian_matches_single():
    rng = np.random.default_rng(1)
    T = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
    a = rng.normal(size=(20, 3))
    n = rng.normal(size=(20, 3))
    rows = residual_jacobians(T.apply(a), n)
    for i in range(20):
        assert np.allclose(rows[i], residual_jacobian(T, a[i], n[i]), atol=1e-14)


def test_identical_clouds_pair_with_themselves():
    rng = np.random.default_rng(2)
    cloud = planes_cloud(rng, AXES, 100)
    corr = find_correspondences(PointCloud(cloud.points), cloud, depth_index(cloud),
                                RigidTransform.identity(), IcpConfig(trim_ratio=0.0))
    assert np.array_equal(corr.source_index, corr.target_index)
    assert np.all(corr.distance == 0) and np.all(corr.weight == 1)


def test_ghost_points_are_trimmed():
    rng = np.random.default_rng(3)
    depth = planes_cloud(rng, [[0, 0, 1]], 2000, extent=0.5)
    inliers = depth.points[rng.choice(len(depth), 900, replace=False)] + rng.normal(0, 1e-3, (900, 3))
    dist = depth_index(depth).nearest(inliers)[1]
    far = 10 * dist.max()
    ghosts = depth.points[rng.choice(len(depth), 100)] + [0, 0, far]
    contact = PointCloud(np.vstack([inliers, ghosts]))
    cfg = IcpConfig(trim_ratio=0.15, max_correspondence_distance=10.0)
    corr = find_correspondences(contact, depth, depth_index(depth), RigidTransform.identity(), cfg)
    ghost = corr.source_index >= 900
    assert ghost.sum() == 100
    assert np.all(corr.weight[ghost] == 0)


def test_no_overlap():
    rng = np.random.default_rng(4)
    depth = planes_cloud(rng, AXES, 100)
    contact = PointCloud(depth.points + [10.0, 0, 0])
    with pytest.raises(NoCorrespondences):
        find_correspondences(contact, depth, depth_index(depth), RigidTransform.identity(),
                             IcpConfig(max_correspondence_distance=0.1))


def test_aligned_step_is_zero():
    rng = np.random.default_rng(5)
    contact, depth = triplet_scene(rng)
    corr = find_correspondences(contact, depth, depth_index(depth), TRUTH, IcpConfig())
    d = icp_step(corr, TRUTH, contact, depth).as_vector()
    assert np.max(np.abs(d)) < 1e-12


def test_translation_offset_recovered_in_one_step():
    rng = np.random.default_rng(6)
    depth = planes_cloud(rng, AXES, 500, extent=0.5)
    contact = PointCloud(depth.points - [0, 0, 0.01])
    # pair each contact with its own depth point: the problem is then linear
    from contactcal.registration import Correspondences
    idx = np.arange(len(depth))
    corr = Correspondences(idx, idx, depth.normals, np.ones(len(idx)), np.full(len(idx), 0.01))
    d = icp_step(corr, RigidTransform.identity(), contact, depth).as_vector()
    assert np.allclose(d, [0, 0, 0.01, 0, 0, 0], atol=1e-6)


def test_single_plane_step_is_degenerate():
    rng = np.random.default_rng(7)
    depth = planes_cloud(rng, [[0, 0, 1]], 500)
    contact = PointCloud(depth.points + [0, 0, 0.01])
    corr = find_correspondences(contact, depth, depth_index(depth), RigidTransform.identity(), IcpConfig())
    with pytest.raises(DegenerateNormalEquations) as info:
        icp_step(corr, RigidTransform.identity(), contact, depth)
    assert info.value.rank == 3
    assert len(info.value.null_directions) == 3


def test_too_few_pairs():
    rng = np.random.default_rng(8)
    depth = planes_cloud(rng, AXES, 1)
    contact = PointCloud(depth.points)
    corr = find_correspondences(contact, depth, depth_index(depth), RigidTransform.identity(),
                                IcpConfig(trim_ratio=0.0))
    with pytest.raises(InsufficientCorrespondences):
        icp_step(corr, RigidTransform.identity(), contact, depth)


def test_min_norm_solver():
    H = np.diag([2.0, 0.0, 1.0])
    d, rank, null = solve_normal_equations(H, np.array([2.0, 5.0, 3.0]))
    assert rank == 2 and np.allclose(d, [1, 0, 3]) and np.allclose(np.abs(null), [[0, 1, 0]])


@pytest.mark.parametrize("seed", range(5))
def test_register_recovers_truth(seed):
    rng = np.random.default_rng(100 + seed)
    contact, depth = triplet_scene(rng)
    res = register(contact, depth, perturbed(TRUTH, rng))
    dt, ang = transform_error(res.transform, TRUTH)
    assert res.converged
    assert np.max(np.abs(dt)) < 1e-6 and ang < 1e-6


def test_register_from_truth_stops_quickly():
    rng = np.random.default_rng(9)
    contact, depth = triplet_scene(rng)
    res = register(contact, depth, TRUTH)
    assert res.converged and res.iterations <= 2
    assert res.transform.allclose(TRUTH, atol=1e-9)


def test_register_noisy_triplet():
    errs = []
    for seed in range(20):
        rng = np.random.default_rng(200 + seed)
        base = corner_faces(rng, 3000)
        noisy_depth = PointCloud(base.points + rng.normal(0, 0.002, (len(base), 1)) * base.normals,
                                 base.normals).transformed(TRUTH)
        c = corner_faces(rng, 300, size=0.45, margin=0.05)
        contact = PointCloud(c.points + rng.normal(0, 0.001, (len(c), 1)) * c.normals)
        res = register(contact, noisy_depth, perturbed(TRUTH, rng))
        dt, ang = transform_error(res.transform, TRUTH)
        errs.append(np.concatenate([np.abs(dt), [ang]]))
    errs = np.array(errs)
    assert np.all(errs[:, :3] < 0.010)
    assert np.all(errs[:, 3] < math.radians(1.0))


def test_register_frame_invariance():
    rng = np.random.default_rng(10)
    contact, depth = triplet_scene(rng)
    start = perturbed(TRUTH, rng)
    ref = register(contact, depth, start).transform
    G = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
    moved = register(contact.transformed(G), depth.transformed(G), G @ start @ G.inverse()).transform
    assert moved.allclose(G @ ref @ G.inverse(), atol=1e-8)


def test_zero_weight_points_do_not_change_the_step():
    rng = np.random.default_rng(11)
    contact, depth = triplet_scene(rng)
    start = perturbed(TRUTH, rng, 0.02, 2.0)
    extra = rng.normal(size=(50, 3))
    padded = PointCloud(np.vstack([contact.points, extra]),
                        weights=np.concatenate([np.ones(len(contact)), np.zeros(50)]))
    index = depth_index(depth)
    cfg = IcpConfig()
    a = icp_step(find_correspondences(contact, depth, index, start, cfg), start, contact, depth)
    b = icp_step(find_correspondences(padded, depth, index, start, cfg), start, padded, depth)
    assert np.max(np.abs(a.as_vector() - b.as_vector())) < 1e-12


def test_fixed_pairing_cost_decreases():
    rng = np.random.default_rng(12)
    contact, depth = triplet_scene(rng)
    T = perturbed(TRUTH, rng, 0.05, 5.0)
    index = depth_index(depth)
    for _ in range(10):
        corr = find_correspondences(contact, depth, index, T, IcpConfig())
        before = pair_cost(corr, T, contact, depth)
        T = apply_increment(T, icp_step(corr, T, contact, depth))
        assert pair_cost(corr, T, contact, depth) <= before * (1 + 1e-9) + 1e-25


def test_register_estimates_missing_normals():
    rng = np.random.default_rng(13)
    contact, depth = triplet_scene(rng, n_depth=9000)
    bare = PointCloud(depth.points)
    with pytest.raises(ValueError):
        register(contact, bare, TRUTH)
    viewpoint = TRUTH.apply([1.5, 1.5, 1.5])
    res = register(contact, bare, perturbed(TRUTH, rng, 0.02, 2.0), viewpoint=viewpoint)
    dt, ang = transform_error(res.transform, TRUTH)
    assert np.linalg.norm(dt) < 5e-3 and ang < math.radians(0.5)


def test_noisy_registration_converges_despite_pairing_flips():
    data = dataset(density=40000.0, depth_sigma=0.002, contact_sigma=0.001, seed=1)
    contact = PointCloud(contact_points(generic_six_axis(), data.joint_logs))
    guess = ExtrinsicParams.from_array(data.truth.extrinsic.as_array() + [0.1, -0.1, 0.1, 0.26, -0.26, 0.26])
    res = register(contact, data.depth, extrinsic_to_transform(guess), IcpConfig())
    assert res.converged and res.iterations < 100
    dt, _ = transform_error(res.transform, data.truth.transform)
    assert np.linalg.norm(dt) < 0.002
