"""Point-cloud and image metrics: Chamfer distance, F-score, RMSE, MedAE, PSNR, SSIM."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d
from scipy.spatial import cKDTree

from .errors import ContractViolation

F_SCORE_TAU = 0.05
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _points(x, name):
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if not len(x):
        raise ContractViolation(f"point set {name} is empty")
    return x


def nearest_distances(src, dst):
    """Distance from each ``src`` point to its nearest ``dst`` point.

    The k-d tree only picks the neighbour; the distance is recomputed with the
    same arithmetic as a brute-force scan so both agree to the last bit.
    """
    src = _points(src, "src")
    dst = _points(dst, "dst")
    _, idx = cKDTree(dst).query(src, k=1)
    diff = src - dst[idx]
    return np.sqrt(np.sum(diff * diff, axis=1))


def chamfer_distance(a, b):
    """Mean nearest distance a->b plus mean nearest distance b->a (metres)."""
    return float(nearest_distances(a, b).mean() + nearest_distances(b, a).mean())


def f_score(a, b, tau=F_SCORE_TAU):
    """Harmonic mean of precision (a near b) and recall (b near a) at ``tau``."""
    precision = float(np.mean(nearest_distances(a, b) <= tau))
    recall = float(np.mean(nearest_distances(b, a) <= tau))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _masked_errors(x, y, mask):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractViolation(f"shape mismatch {x.shape} vs {y.shape}")
    err = np.abs(x - y)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape[:mask.ndim]:
            raise ContractViolation("mask shape does not match the images")
        err = err[mask]
    err = err.ravel()
    if not len(err):
        raise ContractViolation("mask selects no pixels")
    return err


def rmse(x, y, mask=None):
    err = _masked_errors(x, y, mask)
    return float(np.sqrt(np.mean(err * err)))


def medae(x, y, mask=None):
    """Median absolute error; even counts take the lower middle element."""
    err = np.sort(_masked_errors(x, y, mask))
    return float(err[(len(err) - 1) // 2])


def psnr(x, y, peak=1.0, mask=None):
    """PSNR in dB; ``inf`` for identical inputs."""
    err = _masked_errors(x, y, mask)
    mse = float(np.mean(err * err))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    return g / g.sum()


def _window_for(shape):
    # shrink the window for images smaller than 11 px so one valid window remains
    return gaussian_window(min(SSIM_WINDOW, shape[0], shape[1]))


def _filt(img, g):
    return convolve2d(convolve2d(img, g[:, None], mode="valid"), g[None, :], mode="valid")


def _filt_adjoint(img, g):
    return convolve2d(convolve2d(img, g[:, None], mode="full"), g[None, :], mode="full")


def _as_channels(x):
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def ssim(x, y, peak=1.0, return_grad=False):
    """Mean SSIM over all valid Gaussian windows, averaged over channels.

    With ``return_grad`` also returns d SSIM / d x.
    """
    two_d = np.ndim(x) == 2
    x = _as_channels(x)
    y = _as_channels(y)
    if x.shape != y.shape:
        raise ContractViolation(f"shape mismatch {x.shape} vs {y.shape}")
    g = _window_for(x.shape)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    total = 0.0
    grad = np.zeros_like(x) if return_grad else None
    C = x.shape[2]
    for c in range(C):
        xc, yc = x[..., c], y[..., c]
        mx, my = _filt(xc, g), _filt(yc, g)
        exx, eyy, exy = _filt(xc * xc, g), _filt(yc * yc, g), _filt(xc * yc, g)
        a1 = 2 * mx * my + c1
        a2 = 2 * (exy - mx * my) + c2
        b1 = mx * mx + my * my + c1
        b2 = (exx - mx * mx) + (eyy - my * my) + c2
        s = a1 * a2 / (b1 * b2)
        total += s.mean()
        if return_grad:
            gs = np.full_like(s, 1.0 / (s.size * C))
            g_mx = gs * s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2)
            g_exy = gs * s * 2 / a2
            g_exx = -gs * s / b2
            grad[..., c] = (_filt_adjoint(g_mx, g) + 2 * xc * _filt_adjoint(g_exx, g)
                            + yc * _filt_adjoint(g_exy, g))
    value = float(total / C)
    if return_grad:
        return value, grad[..., 0] if two_d else grad
    return value


@dataclass
class MetricReport:
    cd: float = None
    f_score: float = None
    rmse: float = None
    medae: float = None
    ssim: float = None
    psnr: float = None

    @property
    def valid(self):
        return {k: v is not None and np.isfinite(v) for k, v in asdict(self).items()}

    def psnr_infinite(self):
        return self.psnr is not None and np.isinf(self.psnr)

    def as_dict(self):
        return asdict(self)
