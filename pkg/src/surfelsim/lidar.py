"""Spinning-LiDAR model and BVH-accelerated Gaussian ray tracing.

Per beam, hits are gathered ``k`` at a time in (depth, primitive id) order:
each round re-queries the BVH for hits strictly behind the last gathered one
and keeps the ``k`` nearest, blends them, and stops once transmittance falls
below the termination threshold or the beam runs out of hits. Depth,
intensity and ray-drop probability are blended with the same weights.
"""

from dataclasses import dataclass, field

import numpy as np

from . import bvh as bvh_mod
from . import kernels
from .errors import ContractViolation
from .gaussians import SplatLocalPoint, activate
from .sh import sh_basis, sigmoid
from .transforms import RigidPose, interpolate_pose

K_BUFFER = 16
DROP_THRESHOLD = 0.5
ALPHA_MASK = 0.5


@dataclass(frozen=True)
class LidarModel:
    """Scan pattern plus sensor-to-world poses.

    Row ``r`` has elevation ``elevations[r]``; column ``c`` has azimuth
    ``azimuth_min + c * (azimuth_max - azimuth_min) / azimuth_steps``.
    Sensor frame is x forward, y left, z up.
    """

    elevations: np.ndarray
    azimuth_steps: int
    poses: tuple = (RigidPose(),)
    max_range: float = 80.0
    azimuth_min: float = -np.pi
    azimuth_max: float = np.pi

    def __post_init__(self):
        el = np.asarray(self.elevations, dtype=np.float64).ravel()
        object.__setattr__(self, "elevations", el)
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(el) < 1 or self.azimuth_steps < 1:
            raise ContractViolation("scan pattern needs at least one row and column")
        d = np.diff(el)
        if len(d) and not (np.all(d > 0) or np.all(d < 0)):
            raise ContractViolation("elevation angles must be strictly monotonic")
        if not self.poses:
            raise ContractViolation("LiDAR needs at least one pose")

    @classmethod
    def uniform(cls, channels, azimuth_steps, fov_up_deg=15.0, fov_down_deg=-15.0, **kw):
        """Evenly spaced rows from ``fov_up`` (row 0) down to ``fov_down``."""
        el = np.radians(np.linspace(fov_up_deg, fov_down_deg, channels))
        return cls(el, azimuth_steps, **kw)

    @property
    def channels(self):
        return len(self.elevations)

    @property
    def shape(self):
        return self.channels, self.azimuth_steps

    @property
    def azimuths(self):
        return (self.azimuth_min + (self.azimuth_max - self.azimuth_min)
                * np.arange(self.azimuth_steps) / self.azimuth_steps)

    def local_directions(self):
        el = self.elevations[:, None]
        az = self.azimuths[None, :]
        d = np.stack(np.broadcast_arrays(np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                                         np.sin(el)), axis=-1)
        return d.reshape(-1, 3)

    def pose_at(self, t):
        return interpolate_pose(list(self.poses), t)

    def with_poses(self, poses):
        return LidarModel(self.elevations, self.azimuth_steps, tuple(poses), self.max_range,
                          self.azimuth_min, self.azimuth_max)


@dataclass
class Rays:
    origins: np.ndarray     # (R, 3)
    directions: np.ndarray  # (R, 3) unit
    cells: np.ndarray       # (R,) flat row-major cell index
    shape: tuple
    max_range: float = np.inf
    timestamp: float = None

    def __len__(self):
        return len(self.origins)


def generate_rays(lidar, t=None):
    """One ray per (row, col) from the sensor centre at the pose for time ``t``."""
    pose = lidar.pose_at(0.0 if t is None and lidar.poses[0].timestamp is None else t)
    d = lidar.local_directions() @ pose.matrix.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape).copy()
    return Rays(o, d, np.arange(len(d)), lidar.shape, lidar.max_range, t)


def rays_from_camera(cam, max_range=np.inf):
    """Unit-direction rays through every pixel of a pinhole camera."""
    ys, xs = np.mgrid[0:cam.height, 0:cam.width]
    d = cam.pixel_directions(xs.ravel(), ys.ravel())
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(cam.center, d.shape).copy()
    return Rays(o, d, np.arange(len(d)), cam.shape, max_range)


@dataclass
class RangeImage:
    depth: np.ndarray      # (rows, cols) blended distance, 0 where empty
    intensity: np.ndarray
    raydrop: np.ndarray
    alpha: np.ndarray
    primary: np.ndarray = None   # id of the highest-weight primitive, -1 if none
    timestamp: float = None
    tape: dict = field(default=None, repr=False)

    @property
    def shape(self):
        return self.depth.shape


def intersect_ray_splat(origin, direction, g, max_range=np.inf, near=kernels.NEAR):
    """Hit of one ray with primitive ``g`` as ``(depth, SplatLocalPoint)`` or None.

    None when the plane is parallel, the hit is behind the origin (closer than
    ``near``) or beyond ``max_range``, or it falls outside the 3-sigma disk.
    """
    a = g.scale_u * g.tangent_u
    b = g.scale_v * g.tangent_v
    u, v, z, ok = kernels.ray_splat_solve(np.asarray(origin, float), np.asarray(direction, float),
                                          g.center, a, b)
    if not ok or z <= near or z > max_range or u * u + v * v > kernels.SUPPORT_R2:
        return None
    return float(z), SplatLocalPoint(float(u), float(v))


def _pair_terms(prims, rays, r, p, near):
    """Intersection and per-hit values for (ray, primitive) pairs."""
    a, b = prims.axes()
    o, d = rays.origins[r], rays.directions[r]
    u, v, z, ok = kernels.ray_splat_solve(o, d, prims.center[p], a[p], b[p])
    alpha, G, live = kernels.splat_alpha(activate(prims)[2][p], u, v, z, ok, near=near,
                                         far=rays.max_range)
    return dict(o=o, d=d, a=a[p], b=b[p], pc=prims.center[p], u=u, v=v, z=z, ok=ok,
                alpha=alpha, G=G, live=live)


def _hit_values(prims, dirs, p, z):
    bi = sh_basis(dirs, prims.degrees["intensity"])
    br = sh_basis(dirs, prims.degrees["raydrop"])
    inten = sigmoid(np.sum(bi * prims.sh_intensity[p], axis=1))
    drop = sigmoid(np.sum(br * prims.sh_raydrop[p], axis=1))
    return np.stack([z, inten, drop], axis=1), bi, br


def _candidates(bvh, proxies, prims, rays, active, last_z, last_id, near):
    """Live hits strictly behind each active ray's last key, sorted per ray."""
    o = rays.origins[active]
    d = rays.directions[active]
    t_lo = np.maximum(last_z[active], near) * (1 - 1e-9) - 1e-12
    r_loc, tri, _ = bvh_mod.query(bvh, proxies, o, d, t_lo, rays.max_range * (1 + 1e-9) + 1e-9)
    r = active[r_loc]
    p = proxies.prim_id[tri]
    if len(r):
        key = np.unique(r * len(prims) + p)
        r, p = key // len(prims), key % len(prims)
    pr = _pair_terms(prims, rays, r, p, near)
    z = pr["z"]
    behind = (z > last_z[r]) | ((z == last_z[r]) & (p > last_id[r]))
    keep = pr["live"] & behind
    r, p, z = r[keep], p[keep], z[keep]
    srt = np.lexsort((p, z, r))
    return r[srt], p[srt], z[srt], {k: v[keep][srt] for k, v in pr.items()}


def trace(rays, bvh, proxies, prims, k=K_BUFFER, near=kernels.NEAR, t_min=kernels.T_MIN):
    """Blend depth, intensity and ray-drop along every ray (0 on empty rays)."""
    if k < 1:
        raise ContractViolation("k-buffer size must be >= 1")
    R = len(rays)
    T = np.ones(R)
    out = np.zeros((R, 3))
    acc = np.zeros(R)
    best_w = np.zeros(R)
    primary = np.full(R, -1)
    last_z = np.full(R, -np.inf)
    last_id = np.full(R, -1)
    active = np.arange(R) if len(prims) else np.zeros(0, dtype=int)
    hit_r, hit_p = [], []
    while len(active):
        r, p, z, pr = _candidates(bvh, proxies, prims, rays, active, last_z, last_id, near)
        # rank within ray -> keep the k nearest (the k-buffer)
        first = np.ones(len(r), dtype=bool)
        first[1:] = r[1:] != r[:-1]
        starts = np.flatnonzero(first)
        rank = np.arange(len(r)) - np.repeat(starts, np.diff(np.append(starts, len(r))))
        sel = rank < k
        r, p, z, rank = r[sel], p[sel], z[sel], rank[sel]
        vals, _, _ = _hit_values(prims, pr["d"][sel], p, z)
        alpha = pr["alpha"][sel]
        # blend the chunk front to back, one buffer slot at a time
        for j in range(min(k, int(rank.max()) + 1 if len(rank) else 0)):
            m = rank == j
            rr = r[m]
            go = T[rr] >= t_min
            rr, a, v, pp = rr[go], alpha[m][go], vals[m][go], p[m][go]
            w = a * T[rr]
            out[rr] += w[:, None] * v
            acc[rr] += w
            better = w > best_w[rr]
            best_w[rr[better]] = w[better]
            primary[rr[better]] = pp[better]
            T[rr] = T[rr] * (1.0 - a)
        hit_r.append(r)
        hit_p.append(p)
        n_found = np.bincount(r, minlength=R)[active]
        last = np.flatnonzero(np.append(r[1:] != r[:-1], True)) if len(r) else np.zeros(0, int)
        last_z[r[last]] = z[last]
        last_id[r[last]] = p[last]
        active = active[(n_found >= k) & (T[active] >= t_min)]
    rows, cols = rays.shape
    hr = np.concatenate(hit_r) if hit_r else np.zeros(0, int)
    hp = np.concatenate(hit_p) if hit_p else np.zeros(0, int)
    tape = dict(hit_ray=hr, hit_prim=hp, rays=rays, near=near, t_min=t_min, n=len(prims))

    def grid(x, fill=0.0):
        g = np.full(rows * cols, fill, dtype=x.dtype)
        g[rays.cells] = x
        return g.reshape(rows, cols)

    return RangeImage(grid(out[:, 0]), grid(out[:, 1]), grid(out[:, 2]), grid(acc),
                      grid(primary, -1), rays.timestamp, tape)


def render_lidar(prims, lidar, t=None, k=K_BUFFER):
    rays = generate_rays(lidar, t)
    proxies, tree = bvh_mod.build_bvh(prims)
    return trace(rays, tree, proxies, prims, k=k)


def _padded_hits(tape, prims):
    """Hits grouped per ray in blend order, padded to (n_rays_hit, K)."""
    hr, hp = tape["hit_ray"], tape["hit_prim"]
    rays = tape["rays"]
    pr = _pair_terms(prims, rays, hr, hp, tape["near"])
    srt = np.lexsort((hp, pr["z"], hr))
    hr, hp = hr[srt], hp[srt]
    pr = {k: v[srt] for k, v in pr.items()}
    uniq, inv, counts = np.unique(hr, return_inverse=True, return_counts=True)
    K = int(counts.max()) if len(counts) else 0
    starts = np.cumsum(counts) - counts
    slot = np.arange(len(hr)) - starts[inv]
    return hr, hp, pr, uniq, inv, slot, K


def trace_backward(prims, ri, g_depth=None, g_intensity=None, g_raydrop=None, g_alpha=None):
    """Gradients of a scalar loss on a traced :class:`RangeImage` w.r.t. raw parameters."""
    tape = ri.tape
    if tape is None:
        raise ContractViolation("range image carries no forward tape")
    if tape["n"] != len(prims):
        raise ContractViolation("primitive count differs from the forward pass")
    grads = prims.zeros_like()
    rays = tape["rays"]
    hr, hp, pr, uniq, inv, slot, K = _padded_hits(tape, prims)
    if K == 0:
        return grads

    def flat(g):
        if g is None:
            return np.zeros(len(rays))
        return np.asarray(g, dtype=np.float64).reshape(-1)[rays.cells]

    g_out_ray = np.stack([flat(g_depth), flat(g_intensity), flat(g_raydrop)], axis=1)
    g_acc_ray = flat(g_alpha)
    nr = len(uniq)
    vals_h, bi, br = _hit_values(prims, pr["d"], hp, pr["z"])
    alpha = np.zeros((nr, K))
    vals = np.zeros((nr, K, 3))
    alpha[inv, slot] = pr["alpha"]
    vals[inv, slot] = vals_h
    _, _, st = kernels.composite(alpha, vals, tape["t_min"])
    g_al, g_vals = kernels.composite_backward(alpha, vals, st, g_out_ray[uniq], g_acc_ray[uniq],
                                              tape["t_min"])
    g_a = np.where(pr["live"], g_al[inv, slot], 0.0)
    g_v = g_vals[inv, slot]
    opacity = activate(prims)[2]
    G = pr["G"]
    np.add.at(grads.opacity_logit, hp, g_a * G * opacity[hp] * (1 - opacity[hp]))
    gG = g_a * opacity[hp]
    gu = -gG * G * pr["u"]
    gv = -gG * G * pr["v"]
    gz = g_v[:, 0]
    gp, gA, gB = kernels.ray_splat_solve_backward(pr["o"], pr["d"], pr["pc"], pr["a"], pr["b"],
                                                  pr["u"], pr["v"], pr["z"], pr["ok"], gu, gv, gz)
    g_center = np.zeros((len(prims), 3))
    g_ax = np.zeros((len(prims), 3))
    g_bx = np.zeros((len(prims), 3))
    np.add.at(g_center, hp, gp)
    np.add.at(g_ax, hp, gA)
    np.add.at(g_bx, hp, gB)
    gi_raw = g_v[:, 1] * vals_h[:, 1] * (1 - vals_h[:, 1])
    gr_raw = g_v[:, 2] * vals_h[:, 2] * (1 - vals_h[:, 2])
    np.add.at(grads.sh_intensity, hp, bi * gi_raw[:, None])
    np.add.at(grads.sh_raydrop, hp, br * gr_raw[:, None])
    grads.center += g_center
    s = prims.scales
    grads.tangent_u += s[:, :1] * g_ax
    grads.tangent_v += s[:, 1:] * g_bx
    grads.log_scale[:, 0] += s[:, 0] * np.sum(prims.tangent_u * g_ax, axis=1)
    grads.log_scale[:, 1] += s[:, 1] * np.sum(prims.tangent_v * g_bx, axis=1)
    return grads


def extract_point_cloud(ri, lidar, drop_threshold=DROP_THRESHOLD, alpha_threshold=ALPHA_MASK,
                        t=None, return_cells=False):
    """World points ``origin + D * direction`` for kept cells, with intensities.

    A cell is kept when its alpha exceeds ``alpha_threshold`` and its ray-drop
    probability is below ``drop_threshold``.
    """
    if ri.shape != lidar.shape:
        raise ContractViolation(f"range image {ri.shape} does not match scan pattern {lidar.shape}")
    t = ri.timestamp if t is None else t
    rays = generate_rays(lidar, t)
    keep = ((ri.alpha > alpha_threshold) & (ri.raydrop < drop_threshold)).ravel()
    pts = rays.origins[keep] + ri.depth.ravel()[keep, None] * rays.directions[keep]
    if return_cells:
        return pts, ri.intensity.ravel()[keep], np.flatnonzero(keep)
    return pts, ri.intensity.ravel()[keep]
