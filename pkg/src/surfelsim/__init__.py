"""Differentiable camera rasterisation and LiDAR ray tracing of 2D Gaussian surfels."""

__version__ = "0.1.0"

from .camera import CameraModel
from .errors import (ConfigError, ContractViolation, FormatError, NonFiniteError,
                     OutOfRangeError, SurfelSimError, UnsupportedDegreeError)
from .gaussians import Gaussian2D, GaussianSet
from .lidar import LidarModel, extract_point_cloud, render_lidar, trace, trace_backward
from .losses import LossWeights, compute_loss
from .metrics import MetricReport, chamfer_distance, f_score, medae, psnr, rmse, ssim
from .optimizer import FitConfig, fit, init_from_points
from .rasterizer import rasterize, rasterize_backward
from .scene_graph import SceneGraph, SceneNode, flatten
from .transforms import RigidPose

__all__ = [
    "CameraModel", "ConfigError", "ContractViolation", "FormatError", "NonFiniteError",
    "OutOfRangeError", "SurfelSimError", "UnsupportedDegreeError", "Gaussian2D", "GaussianSet",
    "LidarModel", "extract_point_cloud", "render_lidar", "trace", "trace_backward",
    "LossWeights", "compute_loss", "MetricReport", "chamfer_distance", "f_score", "medae",
    "psnr", "rmse", "ssim", "FitConfig", "fit", "init_from_points", "rasterize",
    "rasterize_backward", "SceneGraph", "SceneNode", "flatten", "RigidPose",
]
