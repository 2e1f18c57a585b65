import functools
import math

import numpy as np
import pytest

from contactcal.kinematics import generic_six_axis
from contactcal.pointcloud import PointCloud
from contactcal.simulator import (
    DEFAULT_EXTRINSIC,
    ContactScanConfig,
    DepthScanConfig,
    generate_dataset,
    make_benchmark_scene,
)


def plane_samples(rng, normal, n, extent=1.0, offset=0.0):
    """Points on the plane ``normal . x = offset`` plus matching normals."""
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    helper = np.eye(3)[np.argmin(np.abs(normal))]
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    uv = rng.uniform(-extent, extent, (n, 2))
    pts = uv[:, :1] * e1 + uv[:, 1:] * e2 + offset * normal
    return pts, np.broadcast_to(normal, (n, 3)).copy()


def planes_cloud(rng, normals, n_each=400, extent=1.0, offsets=None):
    offsets = offsets if offsets is not None else [0.0] * len(normals)
    parts = [plane_samples(rng, nrm, n_each, extent, off) for nrm, off in zip(normals, offsets)]
    return PointCloud(np.vstack([p for p, _ in parts]), np.vstack([q for _, q in parts]))


@functools.lru_cache(maxsize=None)
def dataset(preset="two_prisms_table", spacing=0.02, density=20000.0, depth_sigma=0.0,
            contact_sigma=0.0, tilt_deg=0.0, jitter=0.0, fixed_wrist=False, biases_deg=None,
            seed=0, bow=0.0):
    scene = make_benchmark_scene(preset)
    chain = generic_six_axis()
    biases = None if biases_deg is None else np.radians(biases_deg)
    depth_cfg = DepthScanConfig(point_density=density, gaussian_sigma=depth_sigma,
                                bow_amplitude=bow, seed=seed)
    contact_cfg = ContactScanConfig(
        selected_patches=tuple(dict.fromkeys(p.label.split(".")[0] for p in scene.patches)),
        raster_spacing=spacing, contact_noise_sigma=contact_sigma,
        tool_tilt_max=math.radians(tilt_deg), seed_jitter=jitter,
        fixed_wrist=fixed_wrist, seed=seed)
    return generate_dataset(scene, depth_cfg, contact_cfg, chain, DEFAULT_EXTRINSIC, biases)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def chain():
    return generic_six_axis()


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record(criterion, passed, detail):
    line = f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
