"""Training objective over camera and LiDAR renders, with image-space gradients."""

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractViolation
from .metrics import ssim
from .rasterizer import depth_to_normal, depth_to_normal_backward

TERMS = ("l1", "ssim", "depth", "intensity", "raydrop", "normal")


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 0.2
    lambda_depth: float = 1.0
    lambda_intensity: float = 1.0
    lambda_raydrop: float = 0.5
    lambda_normal: float = 1e-4

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ContractViolation(f"loss weight {k} must be non-negative, got {v}")
        if self.lambda_r > 1:
            raise ContractViolation("lambda_r must lie in [0, 1]")

    def factors(self):
        return {"l1": 1 - self.lambda_r, "ssim": self.lambda_r, "depth": self.lambda_depth,
                "intensity": self.lambda_intensity, "raydrop": self.lambda_raydrop,
                "normal": self.lambda_normal}

    @classmethod
    def only(cls, term):
        """Weights that isolate one term (used for per-term gradient checks)."""
        w = dict(lambda_r=0.0, lambda_depth=0.0, lambda_intensity=0.0, lambda_raydrop=0.0,
                 lambda_normal=0.0)
        if term == "l1":
            pass
        elif term == "ssim":
            w["lambda_r"] = 1.0
        else:
            w["lambda_" + term] = 1.0
        return cls(**w)


@dataclass
class LossResult:
    total: float
    terms: dict
    camera_grads: list = field(default_factory=list)   # dicts of g_color/g_depth/g_normal
    lidar_grads: dict = None                            # g_depth/g_intensity/g_raydrop


def _check(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ContractViolation(f"{what}: rendered shape {np.shape(a)} != ground truth {np.shape(b)}")


def compute_loss(rendered, batch, weights=LossWeights(), with_grad=False):
    """Weighted sum of the six terms plus per-term values (and upstream gradients).

    Camera terms are averaged over the batch's cameras. Dropped LiDAR returns
    are excluded from the depth and intensity terms and supervise only the
    ray-drop term (target 1 there, 0 on valid returns).
    """
    f = weights.factors()
    terms = dict.fromkeys(TERMS, 0.0)
    cam_grads = []
    n_cam = len(batch.cameras)
    if len(rendered.cameras) != n_cam:
        raise ContractViolation("rendered camera count differs from the batch")
    for fb, obs in zip(rendered.cameras, batch.cameras):
        _check(fb.color, obs.image, "camera image")
        diff = fb.color - obs.image
        terms["l1"] += np.mean(np.abs(diff)) / n_cam
        gc = {}
        if with_grad or f["ssim"] > 0:
            s, g_s = ssim(fb.color, obs.image, return_grad=True)
        else:
            s, g_s = ssim(fb.color, obs.image), None
        terms["ssim"] += (1.0 - s) / n_cam
        n_d = depth_to_normal(fb.depth, obs.camera, fb.alpha)
        valid = np.any(n_d != 0, axis=-1)
        nv = int(valid.sum())
        if nv:
            dots = np.sum(fb.normal * n_d, axis=-1)
            terms["normal"] += np.sum(np.where(valid, 1.0 - dots, 0.0)) / nv / n_cam
        if with_grad:
            gc["g_color"] = (f["l1"] * np.sign(diff) / diff.size - f["ssim"] * g_s) / n_cam
            if nv and f["normal"] > 0:
                scale = f["normal"] / nv / n_cam
                gc["g_normal"] = -scale * n_d * valid[..., None]
                g_nd = -scale * fb.normal * valid[..., None]
                gc["g_depth"] = depth_to_normal_backward(fb.depth, obs.camera, g_nd, fb.alpha)
            cam_grads.append(gc)
    lid_grads = None
    if batch.lidar is not None:
        ri, obs = rendered.lidar, batch.lidar
        if ri is None:
            raise ContractViolation("batch has a LiDAR sweep but nothing was traced")
        _check(ri.depth, obs.depth, "range image")
        v = obs.valid
        nv = max(int(v.sum()), 1)
        dd = np.where(v, ri.depth - obs.depth, 0.0)
        di = np.where(v, ri.intensity - obs.intensity, 0.0)
        dr = ri.raydrop - obs.raydrop
        terms["depth"] = float(np.sum(np.abs(dd)) / nv)
        terms["intensity"] = float(np.sum(di * di) / nv)
        terms["raydrop"] = float(np.mean(dr * dr))
        if with_grad:
            lid_grads = dict(g_depth=f["depth"] * np.sign(dd) / nv,
                             g_intensity=f["intensity"] * 2 * di / nv,
                             g_raydrop=f["raydrop"] * 2 * dr / dr.size)
    terms = {k: float(v) for k, v in terms.items()}
    total = float(sum(f[k] * terms[k] for k in TERMS))
    return LossResult(total, terms, cam_grads, lid_grads)
