"""Desk-scale differentiable 3D Gaussian splatting for extremely sparse views.

Pure numpy/scipy engine: tiled forward splatting with an analytic
backward pass, pose trajectory interpolation between view pairs,
Laplacian-pyramid band consistency and scheduled multi-scale depth
correlation regularizers, a momentum trainer, and file-based ingestion
of externally synthesized pseudo views.
"""

__version__ = "0.1.0"

from .gaussians import Gaussian, GaussianSet, PointCloud, covariance_from_rs, evaluate_gaussian, init_from_pointcloud
from .geometry import CameraView, Intrinsics, Pose, interpolate_trajectory, pose_compose, pose_inverse, project_point
from .renderer import RenderOutput, Splat2D, render, render_pointmap, render_reference

__all__ = [
    "CameraView",
    "Gaussian",
    "GaussianSet",
    "Intrinsics",
    "PointCloud",
    "Pose",
    "RenderOutput",
    "Splat2D",
    "covariance_from_rs",
    "evaluate_gaussian",
    "init_from_pointcloud",
    "interpolate_trajectory",
    "pose_compose",
    "pose_inverse",
    "project_point",
    "render",
    "render_pointmap",
    "render_reference",
]
