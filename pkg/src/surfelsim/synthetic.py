"""Built-in synthetic scenes with rendered ground truth.

Every recipe returns a ground-truth scene graph, a centre-jittered copy used as
the optimisation start, and one frame (camera image + LiDAR sweep) per
timestamp. Ground truth is produced by rendering the true scene with the same
renderers, so a perfect fit reproduces it exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel
from .data import CameraObservation, LidarObservation, TrainBatch
from .errors import ConfigError
from .gaussians import GaussianSet
from .lidar import ALPHA_MASK, DROP_THRESHOLD, LidarModel, render_lidar
from .rasterizer import rasterize
from .scene_graph import NodeKind, SceneGraph, SceneNode, flatten, rigid_node
from .transforms import RigidPose

RECIPES = ("textured-plane", "box-room", "moving-box", "walker")

GT_OPACITY = 0.99
GT_RAYDROP = 0.05
INIT_JITTER = 0.05


@dataclass
class SensorRig:
    camera_height: int = 320
    camera_width: int = 480
    camera_fov: float = 50.0
    lidar_channels: int = 32
    lidar_steps: int = 512
    lidar_fov_up: float = 15.0
    lidar_fov_down: float = -15.0
    azimuth_range: tuple = (-np.pi, np.pi)
    max_range: float = 80.0


@dataclass
class SyntheticDataset:
    recipe: str
    seed: int
    truth: SceneGraph
    init: SceneGraph
    frames: list = field(default_factory=list)     # TrainBatch per timestamp
    rig: SensorRig = None

    def split(self, name):
        return [f for f in self.frames if f.split == name]


def _texture(pos, phase):
    y, z = pos[:, 1], pos[:, 2]
    base = np.stack([0.5 + 0.3 * np.sin(2 * np.pi * (y / 1.3 + p)) * np.cos(2 * np.pi * z / 1.1)
                     for p in phase], axis=1)
    return np.clip(base + 0.1 * np.sin(2 * np.pi * (pos[:, :1] + pos[:, 1:2]) / 0.9), 0.05, 0.95)


def grid_surface(origin, e1, e2, n1, n2, spacing, phase=(0.0, 0.3, 0.6), scale_ratio=0.6,
                 degrees=None):
    """Opaque rectangular sheet of primitives on a regular grid.

    ``e1`` and ``e2`` are orthonormal in-plane axes; the surface normal
    ``e1 x e2`` should point at the sensors.
    """
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    i, j = np.meshgrid(np.arange(n1) + 0.5, np.arange(n2) + 0.5, indexing="ij")
    pts = (np.asarray(origin, dtype=np.float64) + spacing * i.reshape(-1, 1) * e1
           + spacing * j.reshape(-1, 1) * e2)
    colors = _texture(pts, phase)
    inten = 0.3 + 0.4 * (0.5 + 0.5 * np.sin(2 * np.pi * pts.sum(axis=1) / 1.7))
    return GaussianSet.from_activated(pts, e1, e2, scale_ratio * spacing, GT_OPACITY,
                                      colors=colors, intensities=inten, raydrops=GT_RAYDROP,
                                      degrees=degrees)


def box_surfaces(size, spacing, degrees=None):
    """Five outward-facing faces (no bottom) of an axis-aligned cube centred at the origin."""
    h = size / 2
    n = max(1, int(round(size / spacing)))
    s = size / n
    X, Y, Z = np.eye(3)
    faces = [((h, -h, -h), Y, Z), ((-h, h, -h), -Y, Z), ((-h, -h, -h), Z, Y),
             ((h, h, -h), -X, Z), ((-h, -h, h), X, Y)]
    return GaussianSet.concat([grid_surface(o, a, b, n, n, s, phase=(0.1, 0.5, 0.8),
                                            degrees=degrees) for o, a, b in faces])


def _camera_at(eye, target, rig):
    return CameraModel.look_at(eye, target, (0, 0, 1), rig.camera_width, rig.camera_height,
                               rig.camera_fov)


def _lidar_at(eye, yaw, rig):
    q = (0.0, 0.0, np.sin(yaw / 2), np.cos(yaw / 2))
    lid = LidarModel.uniform(rig.lidar_channels, rig.lidar_steps, rig.lidar_fov_up,
                             rig.lidar_fov_down, poses=(RigidPose(q, eye),),
                             max_range=rig.max_range, azimuth_min=rig.azimuth_range[0],
                             azimuth_max=rig.azimuth_range[1])
    return lid


def render_frame(graph, t, cameras, lidar, split="train", k=16):
    """Ground-truth observations for one timestamp."""
    world = flatten(graph, t).gaussians
    cams = [CameraObservation(cam, rasterize(world, cam).color, f"cam{i}")
            for i, cam in enumerate(cameras)]
    lid = None
    if lidar is not None:
        ri = render_lidar(world, lidar, t, k)
        valid = (ri.alpha > ALPHA_MASK) & (ri.raydrop < DROP_THRESHOLD)
        lid = LidarObservation(lidar, np.where(valid, ri.depth, 0.0),
                               np.where(valid, ri.intensity, 0.0), valid)
    return TrainBatch(float(t), cams, lid, split)


def _split(f):
    return "test" if f % 4 == 2 else "train"


def textured_plane(rig, n_frames, spacing, degrees):
    """Fronto-parallel textured wall 4 m ahead; sensors slide sideways."""
    sheet = grid_surface((4.0, 2.0, -1.5), (0, -1, 0), (0, 0, 1), int(round(4 / spacing)),
                         int(round(3 / spacing)), spacing, degrees=degrees)
    graph = SceneGraph(sheet)
    times = np.arange(n_frames) * 0.1
    views = []
    for f, t in enumerate(times):
        y = np.interp(f, [0, max(n_frames - 1, 1)], [-0.5, 0.5])
        eye = np.array([0.0, y, 0.1 * np.sin(f)])
        views.append((t, [_camera_at(eye, eye + (4.0, 0.1 * y, 0.0), rig)], _lidar_at(eye, 0.0, rig)))
    return graph, views


def box_room(rig, n_frames, spacing, degrees):
    """Closed 6 x 5 x 3 m room viewed from near its centre."""
    lo = np.array([-3.0, -2.5, -1.0])
    hi = np.array([3.0, 2.5, 2.0])
    ext = hi - lo
    X, Y, Z = np.eye(3)
    n = lambda a: int(round(a / spacing))  # noqa: E731
    walls = [((hi[0], hi[1], lo[2]), -Y, Z, n(ext[1]), n(ext[2])),
             ((lo[0], lo[1], lo[2]), Y, Z, n(ext[1]), n(ext[2])),
             ((lo[0], hi[1], lo[2]), X, Z, n(ext[0]), n(ext[2])),
             ((hi[0], lo[1], lo[2]), -X, Z, n(ext[0]), n(ext[2])),
             ((lo[0], lo[1], lo[2]), X, Y, n(ext[0]), n(ext[1])),
             ((lo[0], hi[1], hi[2]), X, -Y, n(ext[0]), n(ext[1]))]
    sheets = [grid_surface(o, a, b, n1, n2, spacing, degrees=degrees)
              for o, a, b, n1, n2 in walls]
    graph = SceneGraph(GaussianSet.concat(sheets))
    times = np.arange(n_frames) * 0.1
    views = []
    for f, t in enumerate(times):
        yaw = 2 * np.pi * f / max(n_frames, 1)
        eye = np.array([0.3 * np.cos(yaw), 0.3 * np.sin(yaw), 0.5])
        target = eye + (np.cos(yaw), np.sin(yaw), -0.1)
        views.append((t, [_camera_at(eye, target, rig)], _lidar_at(eye, yaw, rig)))
    return graph, views


def _ground_and_wall(spacing, degrees):
    ground = grid_surface((1.0, -3.0, -1.0), (1, 0, 0), (0, 1, 0), int(round(6 / spacing)),
                          int(round(6 / spacing)), spacing, phase=(0.2, 0.2, 0.2), degrees=degrees)
    wall = grid_surface((7.0, 3.0, -1.0), (0, -1, 0), (0, 0, 1), int(round(6 / spacing)),
                        int(round(3 / spacing)), spacing, degrees=degrees)
    return GaussianSet.concat([ground, wall])


def moving_box(rig, n_frames, spacing, degrees):
    """Static ground and wall plus a 1 m box translating along +y at constant speed."""
    times = np.arange(n_frames) * 0.1
    box = box_surfaces(1.0, spacing / 2, degrees)
    start, end = np.array([4.0, -1.2, -0.5]), np.array([4.0, 1.2, -0.5])
    w = (times - times[0]) / max(times[-1] - times[0], 1e-12)
    trans = start + w[:, None] * (end - start)
    graph = SceneGraph(_ground_and_wall(spacing, degrees), [rigid_node(box, times, trans, name="box")],
                       times)
    eye = np.array([0.0, 0.0, 0.2])
    views = [(t, [_camera_at(eye + (0, 0.05 * np.sin(f), 0), (4.0, 0.0, -0.5), rig)],
              _lidar_at(eye, 0.0, rig)) for f, t in enumerate(times)]
    return graph, views


def walker(rig, n_frames, spacing, degrees):
    """A swaying upright sheet (deformable node) walking across the scene."""
    times = np.arange(n_frames) * 0.1
    body = grid_surface((0.0, 0.3, -1.0), (0, -1, 0), (0, 0, 1), int(round(0.6 / (spacing / 2))),
                        int(round(1.6 / (spacing / 2))), spacing / 2, phase=(0.7, 0.1, 0.4),
                        degrees=degrees)
    z = body.center[:, 2]
    offsets = np.zeros((n_frames, len(body), 3))
    for k, t in enumerate(times):
        offsets[k, :, 0] = 0.08 * np.sin(2 * np.pi * t / (times[-1] + 0.1) * 2) * (z + 1.0)
    trans = np.stack([np.full(n_frames, 4.0), np.linspace(-1.0, 1.0, n_frames),
                      np.zeros(n_frames)], axis=1)
    poses = [RigidPose(translation=tr, timestamp=float(t)) for tr, t in zip(trans, times)]
    node = SceneNode(NodeKind.DEFORMABLE, body, poses, offsets, name="walker")
    graph = SceneGraph(_ground_and_wall(spacing, degrees), [node], times)
    eye = np.array([0.0, 0.0, 0.2])
    views = [(t, [_camera_at(eye, (4.0, 0.0, -0.3), rig)], _lidar_at(eye, 0.0, rig))
             for t in times]
    return graph, views


_BUILDERS = {"textured-plane": textured_plane, "box-room": box_room,
             "moving-box": moving_box, "walker": walker}

_DEFAULT_AZIMUTH = {"textured-plane": (-0.5, 0.5), "box-room": (-np.pi, np.pi),
                    "moving-box": (-0.9, 0.9), "walker": (-0.9, 0.9)}
_DEFAULT_FOV = {"textured-plane": (15.0, -15.0), "box-room": (30.0, -30.0),
                "moving-box": (10.0, -25.0), "walker": (10.0, -25.0)}


def default_rig(recipe, **overrides):
    if recipe not in _BUILDERS:
        raise ConfigError(f"unknown recipe {recipe!r}; choose one of {', '.join(RECIPES)}")
    up, down = _DEFAULT_FOV[recipe]
    kw = dict(azimuth_range=_DEFAULT_AZIMUTH[recipe], lidar_fov_up=up, lidar_fov_down=down)
    kw.update(overrides)
    return SensorRig(**kw)


def jitter_graph(graph, sigma, rng):
    g = graph.copy()
    for gs in [g.background] + [n.gaussians for n in g.nodes]:
        gs.center[...] += rng.normal(0.0, sigma, gs.center.shape)
    return g


def generate_synthetic(recipe, seed=0, rig=None, n_frames=12, spacing=0.2, degrees=None,
                       jitter=INIT_JITTER, k=16):
    """Ground truth, jittered init and rendered frames for a built-in recipe.

    Frames with index 2 mod 4 are held out (split ``"test"``).
    """
    if recipe not in _BUILDERS:
        raise ConfigError(f"unknown recipe {recipe!r}; choose one of {', '.join(RECIPES)}")
    rig = default_rig(recipe) if rig is None else rig
    rng = np.random.default_rng(seed)
    graph, views = _BUILDERS[recipe](rig, n_frames, spacing, degrees)
    frames = [render_frame(graph, t, cams, lid, _split(f), k)
              for f, (t, cams, lid) in enumerate(views)]
    return SyntheticDataset(recipe, seed, graph, jitter_graph(graph, jitter, rng), frames, rig)
