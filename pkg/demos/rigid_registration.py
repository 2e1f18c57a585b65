"""Recover the camera extrinsic from contacts on two prisms and a table.

Run: python demos/rigid_registration.py
"""

import math

import numpy as np

from contactcal import IcpConfig, PointCloud, contact_points, generic_six_axis, register
from contactcal.se3 import ExtrinsicParams, extrinsic_to_transform, transform_error, transform_to_extrinsic
from contactcal.simulator import (
    DEFAULT_EXTRINSIC,
    ContactScanConfig,
    DepthScanConfig,
    generate_dataset,
    make_benchmark_scene,
)
from contactcal.stability import analyze


def main():
    chain = generic_six_axis()
    scene = make_benchmark_scene("two_prisms_table")
    data = generate_dataset(scene, DepthScanConfig(point_density=40000, gaussian_sigma=0.002, seed=1),
                            ContactScanConfig(contact_noise_sigma=0.001, seed=1), chain, DEFAULT_EXTRINSIC)
    contact = PointCloud(contact_points(chain, data.joint_logs))
    print(f"{len(contact)} contacts, {len(data.depth)} depth points")

    # a hand-measured guess: 10 cm and 15 degrees off on every parameter
    guess = DEFAULT_EXTRINSIC.as_array() + [0.1, -0.1, 0.1, *np.radians([15, -15, 15])]
    result = register(contact, data.depth, extrinsic_to_transform(ExtrinsicParams.from_array(guess)), IcpConfig())

    dt, ang = transform_error(result.transform, data.truth.transform)
    print(f"converged={result.converged} after {result.iterations} iterations")
    print("estimate :", np.round(transform_to_extrinsic(result.transform).as_array(), 5))
    print("truth    :", np.round(DEFAULT_EXTRINSIC.as_array(), 5))
    print(f"translation error {np.round(dt * 1000, 3)} mm, rotation error {math.degrees(ang):.4f} deg")
    rep = analyze(result.hessian)
    print(f"hessian rank {rep.numeric_rank}, condition number {rep.condition_number:.1f} (uncentred)")


if __name__ == "__main__":
    main()
