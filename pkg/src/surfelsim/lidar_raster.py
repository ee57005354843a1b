"""LiDAR range images approximated by rasterising virtual pinhole cameras.

This is the baseline the ray tracer is compared against: the scan's azimuth
range is covered by pinhole "sector" cameras at the sensor origin, each is
rasterised, and every LiDAR ray reads the depth of the nearest pixel in its
sector. Depth is converted from camera z to range along the LiDAR ray.
"""

import numpy as np

from .camera import CameraModel
from .lidar import RangeImage, generate_rays
from .rasterizer import rasterize

MAX_SECTOR = np.radians(90.0)


def sector_cameras(lidar, t=None, max_sector=MAX_SECTOR, oversample=1.0):
    """Pinhole cameras covering the scan; returns ``(cameras, sector edges)``."""
    span = lidar.azimuth_max - lidar.azimuth_min
    n = int(np.ceil(span / max_sector - 1e-9))
    edges = lidar.azimuth_min + span * np.arange(n + 1) / n
    pose = lidar.pose_at(0.0 if t is None and lidar.poses[0].timestamp is None else t)
    R = pose.matrix
    el = lidar.elevations
    el_c = 0.5 * (el.max() + el.min())
    step = span / lidar.azimuth_steps
    cams = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        az_c = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        fwd = np.array([np.cos(el_c) * np.cos(az_c), np.cos(el_c) * np.sin(az_c), np.sin(el_c)])
        fwd_w = R @ fwd
        up_w = R @ np.array([0.0, 0.0, 1.0])
        # same angular pitch as the scan at the sector centre
        width = max(2, int(np.ceil(oversample * (hi - lo) / step)) + 2)
        fov_x = 2 * np.degrees(half) + 2 * np.degrees(step)
        fx = 0.5 * width / np.tan(np.radians(fov_x) / 2)
        v_half = np.abs(el - el_c).max() + step
        height = max(2, int(np.ceil(2 * fx * np.tan(v_half) / np.cos(half))) + 2)
        cams.append(CameraModel.look_at(pose.translation, pose.translation + fwd_w, up_w,
                                        width, height, fov_x))
    return cams, edges


def render_lidar_rasterized(prims, lidar, t=None, background_range=0.0, **kw):
    """Depth/alpha range image from nearest-pixel lookups in sector renders."""
    rays = generate_rays(lidar, t)
    cams, edges = sector_cameras(lidar, t, **kw)
    fbs = [rasterize(prims, cam) for cam in cams]
    rows, cols = lidar.shape
    az = np.broadcast_to(lidar.azimuths, (rows, cols)).ravel()
    sector = np.clip(np.searchsorted(edges, az, side="right") - 1, 0, len(cams) - 1)
    depth = np.full(rows * cols, float(background_range))
    alpha = np.zeros(rows * cols)
    for s, (cam, fb) in enumerate(zip(cams, fbs)):
        sel = np.flatnonzero(sector == s)
        d = rays.directions[sel]
        dc = d @ cam.rotation.T
        front = dc[:, 2] > 1e-9
        x = cam.fx * dc[:, 0] / np.where(front, dc[:, 2], 1.0) + cam.cx
        y = cam.fy * dc[:, 1] / np.where(front, dc[:, 2], 1.0) + cam.cy
        xi = np.rint(x).astype(np.int64)
        yi = np.rint(y).astype(np.int64)
        inside = front & (xi >= 0) & (xi < cam.width) & (yi >= 0) & (yi < cam.height)
        sel, xi, yi = sel[inside], xi[inside], yi[inside]
        # range along the pixel's own ray (the nearest-pixel approximation)
        pix_dir = cam.pixel_directions(xi, yi)
        depth[sel] = fb.depth[yi, xi] * np.linalg.norm(pix_dir, axis=1)
        alpha[sel] = fb.alpha[yi, xi]
    shape = lidar.shape
    return RangeImage(depth.reshape(shape), np.zeros(shape), np.zeros(shape), alpha.reshape(shape),
                      None, t)
