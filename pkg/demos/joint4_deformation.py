"""Write contact maps with and without a 29 degree bias on joint 4.

Open the two PLY files in any point-cloud viewer to compare them.

Run: python demos/joint4_deformation.py [OUTPUT_DIR]
"""

import math
import sys
from pathlib import Path

import numpy as np

from contactcal import PointCloud, generic_six_axis, write_cloud
from contactcal.simulator import (
    DEFAULT_EXTRINSIC,
    ContactScanConfig,
    DepthScanConfig,
    bias_deformation,
    generate_dataset,
    make_benchmark_scene,
)


def main(out):
    chain = generic_six_axis()
    data = generate_dataset(make_benchmark_scene("two_prisms_table"), DepthScanConfig(point_density=2000),
                            ContactScanConfig(raster_spacing=0.01, contact_noise_sigma=0.0), chain,
                            DEFAULT_EXTRINSIC)
    biases = np.zeros(chain.dof)
    biases[3] = math.radians(29)
    true_map, deformed, disp = bias_deformation(chain, data.joint_logs, biases)
    out.mkdir(parents=True, exist_ok=True)
    write_cloud(PointCloud(true_map), out / "contact_map_true.ply")
    write_cloud(PointCloud(deformed), out / "contact_map_deformed.ply")
    print(f"{len(disp)} contacts; displacement max {disp.max() * 100:.1f} cm, mean {disp.mean() * 100:.1f} cm")
    print(f"wrote {out / 'contact_map_true.ply'} and {out / 'contact_map_deformed.ply'}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "output")
