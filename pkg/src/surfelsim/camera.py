"""Pinhole camera model (OpenCV axes: x right, y down, z forward)."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a world-to-camera rigid transform.

    ``x_cam = rotation @ x_world + translation``. Pixel ``(x, y)`` is centred on
    integer coordinates, so the principal point pixel looks straight down +z.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = None
    translation: np.ndarray = None

    def __post_init__(self):
        R = np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=np.float64)
        t = np.zeros(3) if self.translation is None else np.asarray(self.translation, dtype=np.float64)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not (self.fx > 0 and self.fy > 0):
            raise ContractViolation("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractViolation("principal point outside the image")
        if R.shape != (3, 3) or np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
            raise ContractViolation("camera rotation is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, up=(0, 0, 1), width=64, height=48, fov_x_deg=60.0):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        fx = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(fx, fx, (width - 1) / 2, (height - 1) / 2, width, height, R, -R @ eye)

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    @property
    def shape(self):
        return self.height, self.width

    def transformed(self, rot, trans):
        """Camera seeing the same image after the world moved by ``x -> rot x + trans``."""
        R = self.rotation @ rot.T
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                           R, self.translation - R @ trans)

    def pixel_directions(self, xs, ys):
        """World-space directions whose camera z-component is 1."""
        dc = np.stack([(np.asarray(xs, float) - self.cx) / self.fx,
                       (np.asarray(ys, float) - self.cy) / self.fy,
                       np.ones(np.shape(xs))], axis=-1)
        return dc @ self.rotation

    def to_camera(self, pts):
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, pts):
        """Pixel coordinates and camera depth of world points."""
        pc = self.to_camera(pts)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = self.fx * pc[..., 0] / z + self.cx
            y = self.fy * pc[..., 1] / z + self.cy
        return x, y, z

    def full_projection(self):
        """4x4 world-to-screen matrix giving ``(x z, y z, z, z)`` for homogeneous points."""
        K = np.array([[self.fx, 0, self.cx, 0],
                      [0, self.fy, self.cy, 0],
                      [0, 0, 1, 0],
                      [0, 0, 1, 0]])
        E = np.eye(4)
        E[:3, :3] = self.rotation
        E[:3, 3] = self.translation
        return K @ E
