"""Observation containers used for training and evaluation."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass
class CameraObservation:
    camera: object          # CameraModel
    image: np.ndarray       # (H, W, 3) in [0, 1]
    name: str = "cam"


@dataclass
class LidarObservation:
    """Ground-truth range image; ``valid`` False marks dropped returns."""

    lidar: object           # LidarModel
    depth: np.ndarray       # (rows, cols) metres
    intensity: np.ndarray
    valid: np.ndarray       # bool

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.depth.shape == self.intensity.shape == self.valid.shape
                == tuple(self.lidar.shape)):
            raise ContractViolation("LiDAR ground truth does not match the scan pattern")
        d = self.depth[self.valid]
        if np.any(d < 0) or np.any(d > self.lidar.max_range):
            raise ContractViolation("ground-truth range outside [0, max range]")

    @property
    def raydrop(self):
        return (~self.valid).astype(np.float64)


@dataclass
class TrainBatch:
    timestamp: float
    cameras: list = field(default_factory=list)
    lidar: LidarObservation = None
    split: str = "train"

    def __post_init__(self):
        if not self.cameras and self.lidar is None:
            raise ContractViolation("a batch needs at least one camera frame or LiDAR sweep")


@dataclass
class Rendered:
    """Renderer outputs matching a :class:`TrainBatch` (one FrameBuffer per camera)."""

    cameras: list = field(default_factory=list)
    lidar: object = None    # RangeImage
