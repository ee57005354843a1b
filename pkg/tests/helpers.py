"""Random scenes, sensors and a finite-difference checker shared by the tests."""

import numpy as np
from scipy.spatial.transform import Rotation

from surfelsim.camera import CameraModel
from surfelsim.data import CameraObservation, LidarObservation, TrainBatch
from surfelsim.gaussians import GaussianSet, orthonormalize
from surfelsim.lidar import LidarModel
from surfelsim.losses import LossWeights, compute_loss
from surfelsim.optimizer import backward_batch, render_batch
from surfelsim.transforms import RigidPose

FD_STEP = 1e-4
FD_REL = 1e-3
FD_ABS = 1e-6


def random_splats(rng, n, lo=(-1.0, -1.0, 3.0), hi=(1.0, 1.0, 5.0), scale=(0.1, 0.4),
                  opacity=(0.3, 0.95), sh_noise=0.3, degrees=None, tilt=0.3):
    """``n`` random surfels in a box, roughly facing the -z direction when ``tilt`` is small."""
    c = rng.uniform(lo, hi, (n, 3))
    w = np.array([1.0, 1.0, tilt])
    tu, tv = orthonormalize(rng.normal(size=(n, 3)) * w, rng.normal(size=(n, 3)) * w)
    gs = GaussianSet.from_activated(c, tu, tv, rng.uniform(*scale, (n, 2)),
                                    rng.uniform(*opacity, n), degrees=degrees)
    for name in ("sh_color", "sh_intensity", "sh_raydrop"):
        arr = getattr(gs, name)
        arr[:] = rng.normal(size=arr.shape) * sh_noise
    return gs


def forward_camera(width=64, height=64, fov=60.0, eye=(0.0, 0.0, 0.0)):
    """Pinhole camera at ``eye`` looking down +z with image y along world -y."""
    eye = np.asarray(eye, float)
    return CameraModel.look_at(eye, eye + [0, 0, 1], (0, -1, 0), width, height, fov)


def forward_lidar(channels=32, steps=128, az=0.6, fov_up=15.0, fov_down=-15.0,
                  position=(0.0, 0.0, 0.0), max_range=80.0):
    """Scanner whose azimuth 0 points along world +z (sensor x-forward rotated)."""
    lid = LidarModel.uniform(channels, steps, fov_up_deg=fov_up, fov_down_deg=fov_down,
                             azimuth_min=-az, azimuth_max=az, max_range=max_range)
    pose = RigidPose(Rotation.from_euler("y", -90, degrees=True).as_quat(), position)
    return lid.with_poses((pose,))


def fd_check(loss_fn, gs, grads, groups=None, step=FD_STEP, rel=FD_REL, abs_tol=FD_ABS,
             max_per_group=None, rng=None):
    """Central differences of ``loss_fn(gs)`` against ``grads`` coordinate by coordinate.

    Returns ``(n_bad, n_total, failures)``; ``failures`` lists
    ``(group, index, fd, analytic)``.
    """
    bad, total, failures = 0, 0, []
    for name in groups or ("center", "tangent_u", "tangent_v", "log_scale", "opacity_logit",
                           "sh_color", "sh_intensity", "sh_raydrop"):
        flat = getattr(gs, name).reshape(-1)
        an_flat = getattr(grads, name).reshape(-1)
        idx = np.arange(flat.size)
        if max_per_group is not None and flat.size > max_per_group:
            idx = np.sort(rng.choice(flat.size, max_per_group, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_fn(gs)
            flat[i] = orig - step
            lm = loss_fn(gs)
            flat[i] = orig
            fd = (lp - lm) / (2 * step)
            an = an_flat[i]
            err = abs(fd - an)
            total += 1
            if not (err <= abs_tol or err <= rel * max(abs(fd), abs(an))):
                bad += 1
                failures.append((name, int(i), fd, an))
    return bad, total, failures


def gradient_scene(seed, n=12, width=24, height=20, channels=8, steps=24):
    """Small splat set plus a random camera/LiDAR batch for loss-gradient checks."""
    rng = np.random.default_rng(seed)
    gs = random_splats(rng, n, lo=(-0.8, -0.6, 3), hi=(0.8, 0.6, 4), scale=(0.2, 0.4),
                       opacity=(0.4, 0.9))
    cam = forward_camera(width, height)
    lid = forward_lidar(channels, steps, az=0.6)
    img = rng.uniform(size=(height, width, 3))
    depth = rng.uniform(2.5, 4.5, lid.shape)
    valid = rng.uniform(size=lid.shape) > 0.2
    obs = LidarObservation(lid, depth, rng.uniform(size=lid.shape), valid)
    return gs, TrainBatch(0.0, [CameraObservation(cam, img)], obs)


def loss_gradient_check(gs, batch, term, k_buffer=4, **kw):
    """Finite-difference check of one isolated loss term over every parameter group."""
    w = LossWeights.only(term)

    def total(s):
        return compute_loss(render_batch(s, batch, k_buffer), batch, w).total

    rendered = render_batch(gs, batch, k_buffer)
    loss = compute_loss(rendered, batch, w, with_grad=True)
    grads, _ = backward_batch(gs, batch, rendered, loss)
    return fd_check(total, gs, grads, **kw)
