"""Camera-to-arm extrinsic calibration from contact points and a depth map."""

__version__ = "0.1.0"

from .calibration import (  # noqa: E402
    CalibrationConfig,
    CalibrationProblem,
    CalibrationResult,
    calibrate,
    identifiability_report,
)
from .kinematics import KinematicChain, build_contact_cloud, contact_points, generic_six_axis  # noqa: E402
from .pointcloud import PointCloud, estimate_normals, read_cloud, write_cloud  # noqa: E402
from .registration import IcpConfig, IcpResult, register  # noqa: E402
from .se3 import ExtrinsicParams, RigidTransform, extrinsic_to_transform, transform_to_extrinsic  # noqa: E402
from .stability import StabilityReport, analyze, compare_sampling  # noqa: E402
