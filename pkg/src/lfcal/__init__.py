"""Calibration, rectification and refocusing for camera-array light-field cameras."""

from .errors import (
    BehindCameraError,
    CalibrationError,
    ConfigurationError,
    EstimationError,
    NumericalError,
    OptimizationError,
    ParseError,
    RankDeficiencyError,
    ValidationError,
)
from .geometry import (
    Distortion,
    Intrinsics,
    RigidTransform,
    axis_angle_to_matrix,
    compose_world_pose,
    distort,
    matrix_to_axis_angle,
    project,
    project_points,
    relative_from_world,
    undistort,
)
from .homography import apply_homography, estimate_homography
from .imaging import Image, read_pnm, write_pnm
from .lightfield import LightField, pixel_to_slant, rectify, refocus, sharpness, slant_to_st
from .model import BoardSpec, CalibrationResult, ObservationSet, OptimizeReport, TerminationReason
from .optimizer import OptimizeOptions, jacobian, optimize, per_viewpoint_errors, refine_independently, residuals
from .simulator import PRESETS, SimConfig, add_noise, generate_scene, render_plane_views, run_noise_sweep
from .zhang import (
    aggregate_relative_poses,
    extrinsics_from_homography,
    intrinsics_from_homographies,
    run_closed_form,
)

__version__ = "0.1.0"
