"""2D Gaussian surfel primitives.

A single primitive is a :class:`Gaussian2D`; renderers and the optimiser work
on :class:`GaussianSet`, a structure of arrays with one row per primitive. The
same container doubles as the gradient buffer for its own parameters.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ContractViolation
from .sh import ShBlock, num_coeffs, sigmoid

DEFAULT_DEGREES = {"color": 3, "intensity": 2, "raydrop": 1}
SUPPORT_RADIUS = 3.0  # kernel truncated at 3 standard deviations
ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class SplatLocalPoint:
    u: float
    v: float


def gaussian_value(pt):
    """Standard 2D Gaussian kernel exp(-(u^2 + v^2) / 2), peak 1 at the origin."""
    if isinstance(pt, SplatLocalPoint):
        u, v = pt.u, pt.v
    else:
        u, v = pt
    return np.exp(-0.5 * (np.square(u) + np.square(v)))


@dataclass(frozen=True)
class Gaussian2D:
    center: np.ndarray
    tangent_u: np.ndarray
    tangent_v: np.ndarray
    log_scale_u: float
    log_scale_v: float
    opacity_logit: float
    sh_color: ShBlock
    sh_intensity: ShBlock
    sh_raydrop: ShBlock

    def __post_init__(self):
        for name in ("center", "tangent_u", "tangent_v"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (3,):
                raise ContractViolation(f"{name} must be a 3-vector")
            object.__setattr__(self, name, a)

    @property
    def scale_u(self):
        return float(np.exp(self.log_scale_u))

    @property
    def scale_v(self):
        return float(np.exp(self.log_scale_v))

    @property
    def opacity(self):
        return float(sigmoid(self.opacity_logit))

    def check_frame(self, tol=ORTHO_TOL):
        tu, tv = self.tangent_u, self.tangent_v
        if (abs(np.linalg.norm(tu) - 1) > tol or abs(np.linalg.norm(tv) - 1) > tol
                or abs(tu @ tv) > tol):
            raise ContractViolation("tangent frame is not orthonormal")

    @classmethod
    def create(cls, center, tangent_u=(1, 0, 0), tangent_v=(0, 1, 0), scale=(1.0, 1.0),
               opacity=0.5, color=None, intensity=None, raydrop=None, degrees=None):
        """Build a primitive from activated values (scales, opacity in (0,1)).

        ``color``/``intensity``/``raydrop`` set the degree-0 coefficient so the
        decoded output equals the given value; higher orders are zero.
        """
        gs = GaussianSet.empty(degrees)
        gs = GaussianSet.from_activated(
            [center], [tangent_u], [tangent_v], [scale], [opacity],
            colors=None if color is None else [color],
            intensities=None if intensity is None else [intensity],
            raydrops=None if raydrop is None else [raydrop],
            degrees=gs.degrees)
        return gs[0]


def activate(g):
    """Activated ``(s_u, s_v, alpha)`` of a raw primitive (or set)."""
    if isinstance(g, GaussianSet):
        s = np.exp(g.log_scale)
        return s[:, 0], s[:, 1], sigmoid(g.opacity_logit)
    return (float(np.exp(g.log_scale_u)), float(np.exp(g.log_scale_v)),
            float(sigmoid(g.opacity_logit)))


def activate_grad(g):
    """Derivatives of :func:`activate` w.r.t. the raw log-scales and logit."""
    su, sv, a = activate(g)
    return su, sv, a * (1 - a)


def splat_normal(g, view_dir=None):
    """Unit normal t_u x t_v; flipped to face the sensor when ``view_dir`` is given.

    ``view_dir`` points from the sensor towards the splat.
    """
    n = np.cross(g.tangent_u, g.tangent_v)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise ContractViolation("degenerate tangent frame (parallel tangents)")
    n = n / norm
    if view_dir is not None and np.dot(n, view_dir) > 0:
        n = -n
    return n


def orthonormalize(tu, tv):
    """Gram-Schmidt ``tv`` against ``tu``; rows are primitives."""
    tu = np.asarray(tu, dtype=np.float64)
    tv = np.asarray(tv, dtype=np.float64)
    nu = np.linalg.norm(tu, axis=-1, keepdims=True)
    if np.any(nu < 1e-12):
        raise ContractViolation("zero-length tangent")
    tu = tu / nu
    tv = tv - np.sum(tv * tu, axis=-1, keepdims=True) * tu
    nv = np.linalg.norm(tv, axis=-1, keepdims=True)
    if np.any(nv < 1e-12):
        raise ContractViolation("degenerate tangent frame (parallel tangents)")
    return tu, tv / nv


def splat_homography(g):
    """4x4 matrix taking splat-local (u, v, 1, 1) to world homogeneous coordinates."""
    H = np.zeros((4, 4))
    H[:3, 0] = g.scale_u * g.tangent_u
    H[:3, 1] = g.scale_v * g.tangent_v
    H[:3, 3] = g.center
    H[3, 3] = 1.0
    return H


def tangent_frame_from_normal(normal):
    """Any orthonormal (t_u, t_v) with t_u x t_v along ``normal`` (rows)."""
    n = np.atleast_2d(np.asarray(normal, dtype=np.float64))
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    helper = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    tu = np.cross(helper, n)
    tu /= np.linalg.norm(tu, axis=1, keepdims=True)
    tv = np.cross(n, tu)
    return tu, tv


PARAM_GROUPS = ("center", "tangent_u", "tangent_v", "log_scale", "opacity_logit",
                "sh_color", "sh_intensity", "sh_raydrop")


@dataclass
class GaussianSet:
    """Structure-of-arrays primitive set; row ``i`` is primitive ``i``."""

    center: np.ndarray         # (N, 3)
    tangent_u: np.ndarray      # (N, 3)
    tangent_v: np.ndarray      # (N, 3)
    log_scale: np.ndarray      # (N, 2)
    opacity_logit: np.ndarray  # (N,)
    sh_color: np.ndarray       # (N, Kc, 3)
    sh_intensity: np.ndarray   # (N, Ki)
    sh_raydrop: np.ndarray     # (N, Kr)

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        n = len(self.center)
        for f in fields(self):
            if len(getattr(self, f.name)) != n:
                raise ContractViolation(f"field {f.name} has inconsistent length")

    def __len__(self):
        return len(self.center)

    @property
    def degrees(self):
        def deg(k):
            return int(round(np.sqrt(k))) - 1
        return {"color": deg(self.sh_color.shape[1]),
                "intensity": deg(self.sh_intensity.shape[1]),
                "raydrop": deg(self.sh_raydrop.shape[1])}

    @classmethod
    def empty(cls, degrees=None):
        d = dict(DEFAULT_DEGREES, **(degrees or {}))
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 2)),
                   np.zeros(0), np.zeros((0, num_coeffs(d["color"]), 3)),
                   np.zeros((0, num_coeffs(d["intensity"]))),
                   np.zeros((0, num_coeffs(d["raydrop"]))))

    @classmethod
    def from_activated(cls, centers, tangent_u, tangent_v, scales, opacities, colors=None,
                       intensities=None, raydrops=None, degrees=None):
        from .sh import C0, logit
        d = dict(DEFAULT_DEGREES, **(degrees or {}))
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape[-1:] != (3,):
            raise ContractViolation(f"centers must be 3-vectors, got shape {centers.shape}")
        centers = centers.reshape(-1, 3)
        n = len(centers)
        # scalar: isotropic for all; pair: shared (s_u, s_v); else (N, 2)
        scales = np.asarray(scales, dtype=np.float64)
        if scales.ndim == 0:
            scales = np.full((n, 2), float(scales))
        scales = np.broadcast_to(scales, (n, 2))
        sh_c = np.zeros((n, num_coeffs(d["color"]), 3))
        sh_i = np.zeros((n, num_coeffs(d["intensity"])))
        sh_r = np.zeros((n, num_coeffs(d["raydrop"])))
        if colors is not None:
            sh_c[:, 0, :] = (np.broadcast_to(colors, (n, 3)) - 0.5) / C0
        if intensities is not None:
            sh_i[:, 0] = logit(np.broadcast_to(intensities, (n,))) / C0
        if raydrops is not None:
            sh_r[:, 0] = logit(np.broadcast_to(raydrops, (n,))) / C0
        return cls(centers,
                   np.broadcast_to(np.asarray(tangent_u, dtype=np.float64), (n, 3)).copy(),
                   np.broadcast_to(np.asarray(tangent_v, dtype=np.float64), (n, 3)).copy(),
                   np.log(scales), logit(np.broadcast_to(opacities, (n,))), sh_c, sh_i, sh_r)

    @classmethod
    def from_gaussians(cls, items, degrees=None):
        items = list(items)
        if not items:
            return cls.empty(degrees)
        return cls(np.stack([g.center for g in items]),
                   np.stack([g.tangent_u for g in items]),
                   np.stack([g.tangent_v for g in items]),
                   np.array([[g.log_scale_u, g.log_scale_v] for g in items]),
                   np.array([g.opacity_logit for g in items]),
                   np.stack([g.sh_color.coefficients for g in items]),
                   np.stack([g.sh_intensity.coefficients[:, 0] for g in items]),
                   np.stack([g.sh_raydrop.coefficients[:, 0] for g in items]))

    def __getitem__(self, i):
        i = int(i)
        return Gaussian2D(self.center[i], self.tangent_u[i], self.tangent_v[i],
                          float(self.log_scale[i, 0]), float(self.log_scale[i, 1]),
                          float(self.opacity_logit[i]),
                          ShBlock(self.sh_color[i], "color"),
                          ShBlock(self.sh_intensity[i], "intensity"),
                          ShBlock(self.sh_raydrop[i], "raydrop"))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, index):
        return GaussianSet(*(getattr(self, name)[index] for name in PARAM_GROUPS))

    def copy(self):
        return GaussianSet(*(getattr(self, name).copy() for name in PARAM_GROUPS))

    def zeros_like(self):
        return GaussianSet(*(np.zeros_like(getattr(self, name)) for name in PARAM_GROUPS))

    def items(self):
        return [(name, getattr(self, name)) for name in PARAM_GROUPS]

    def replace(self, **changes):
        return replace(self, **changes)

    @staticmethod
    def concat(sets, degrees=None):
        sets = [s for s in sets]
        if not sets:
            return GaussianSet.empty(degrees)
        return GaussianSet(*(np.concatenate([getattr(s, name) for s in sets])
                             for name in PARAM_GROUPS))

    # activated views
    @property
    def scales(self):
        return np.exp(self.log_scale)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    def axes(self):
        """Scaled tangent axes ``(s_u t_u, s_v t_v)``, each (N, 3)."""
        s = self.scales
        return s[:, :1] * self.tangent_u, s[:, 1:] * self.tangent_v

    def normals(self):
        n = np.cross(self.tangent_u, self.tangent_v)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def orthonormalized(self):
        tu, tv = orthonormalize(self.tangent_u, self.tangent_v)
        return self.replace(tangent_u=tu, tangent_v=tv)

    def check_frames(self, tol=ORTHO_TOL):
        if not len(self):
            return
        nu = np.linalg.norm(self.tangent_u, axis=1)
        nv = np.linalg.norm(self.tangent_v, axis=1)
        dot = np.abs(np.sum(self.tangent_u * self.tangent_v, axis=1))
        if max(np.abs(nu - 1).max(), np.abs(nv - 1).max(), dot.max()) > tol:
            raise ContractViolation("tangent frames are not orthonormal")
