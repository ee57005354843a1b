"""Real spherical harmonics up to degree 3 and the output decodings.

Coefficient layout follows the usual splatting order: index ``l*l + l + m``
for ``m = -l..l``. Directions are unit 3-vectors in world space.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, UnsupportedDegreeError

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)

MAX_DEGREE = 3
DECODINGS = ("color", "intensity", "raydrop", "raw")


def num_coeffs(degree):
    if not 0 <= degree <= MAX_DEGREE:
        raise UnsupportedDegreeError(f"SH degree {degree} not in 0..{MAX_DEGREE}")
    return (degree + 1) ** 2


def degree_of(n_coeffs):
    d = int(round(np.sqrt(n_coeffs))) - 1
    if (d + 1) ** 2 != n_coeffs:
        raise ContractViolation(f"{n_coeffs} is not a square SH coefficient count")
    num_coeffs(d)
    return d


def sh_basis(dirs, degree):
    """Basis values, shape ``dirs.shape[:-1] + ((degree+1)**2,)``."""
    n = num_coeffs(degree)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (n,))
    out[..., 0] = C0
    if degree >= 1:
        out[..., 1] = -C1 * y
        out[..., 2] = C1 * z
        out[..., 3] = -C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = C2[0] * x * y
        out[..., 5] = C2[1] * y * z
        out[..., 6] = C2[2] * (2 * zz - xx - yy)
        out[..., 7] = C2[3] * x * z
        out[..., 8] = C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = C3[0] * y * (3 * xx - yy)
        out[..., 10] = C3[1] * x * y * z
        out[..., 11] = C3[2] * y * (4 * zz - xx - yy)
        out[..., 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[..., 13] = C3[4] * x * (4 * zz - xx - yy)
        out[..., 14] = C3[5] * z * (xx - yy)
        out[..., 15] = C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_jacobian(dirs, degree):
    """d(basis)/d(direction), shape ``dirs.shape[:-1] + (n_coeffs, 3)``.

    The basis polynomials are differentiated as functions on R^3; callers
    chain through their own normalisation.
    """
    n = num_coeffs(degree)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    J = np.zeros(dirs.shape[:-1] + (n, 3))
    if degree >= 1:
        J[..., 1, 1] = -C1
        J[..., 2, 2] = C1
        J[..., 3, 0] = -C1
    if degree >= 2:
        J[..., 4, 0] = C2[0] * y
        J[..., 4, 1] = C2[0] * x
        J[..., 5, 1] = C2[1] * z
        J[..., 5, 2] = C2[1] * y
        J[..., 6, 0] = -2 * C2[2] * x
        J[..., 6, 1] = -2 * C2[2] * y
        J[..., 6, 2] = 4 * C2[2] * z
        J[..., 7, 0] = C2[3] * z
        J[..., 7, 2] = C2[3] * x
        J[..., 8, 0] = 2 * C2[4] * x
        J[..., 8, 1] = -2 * C2[4] * y
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        J[..., 9, 0] = 6 * C3[0] * x * y
        J[..., 9, 1] = C3[0] * (3 * xx - 3 * yy)
        J[..., 10, 0] = C3[1] * y * z
        J[..., 10, 1] = C3[1] * x * z
        J[..., 10, 2] = C3[1] * x * y
        J[..., 11, 0] = -2 * C3[2] * x * y
        J[..., 11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
        J[..., 11, 2] = 8 * C3[2] * y * z
        J[..., 12, 0] = -6 * C3[3] * x * z
        J[..., 12, 1] = -6 * C3[3] * y * z
        J[..., 12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
        J[..., 13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
        J[..., 13, 1] = -2 * C3[4] * x * y
        J[..., 13, 2] = 8 * C3[4] * x * z
        J[..., 14, 0] = 2 * C3[5] * x * z
        J[..., 14, 1] = -2 * C3[5] * y * z
        J[..., 14, 2] = C3[5] * (xx - yy)
        J[..., 15, 0] = C3[6] * (3 * xx - 3 * yy)
        J[..., 15, 1] = -6 * C3[6] * x * y
    return J


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def decode(raw, kind):
    """Map raw SH sums to output values, returning ``(value, d value / d raw)``."""
    if kind == "color":
        shifted = raw + 0.5
        value = np.clip(shifted, 0.0, 1.0)
        slope = ((shifted > 0.0) & (shifted < 1.0)).astype(np.float64)
        return value, slope
    if kind in ("intensity", "raydrop"):
        value = sigmoid(raw)
        return value, value * (1.0 - value)
    if kind == "raw":
        raw = np.asarray(raw, dtype=np.float64)
        return raw, np.ones_like(raw)
    raise ContractViolation(f"unknown SH decoding {kind!r}")


@dataclass(frozen=True)
class ShBlock:
    """One primitive's SH coefficients: ``coefficients`` has shape (K, channels)."""

    coefficients: np.ndarray
    kind: str = "raw"

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=np.float64))
        if c.ndim == 1:
            c = c[:, None]
        object.__setattr__(self, "coefficients", c)
        degree_of(c.shape[0])
        if self.kind not in DECODINGS:
            raise ContractViolation(f"unknown SH decoding {self.kind!r}")

    @property
    def degree(self):
        return degree_of(self.coefficients.shape[0])

    @property
    def channels(self):
        return self.coefficients.shape[1]


def eval_sh_raw(block, direction):
    """Linear part of :func:`eval_sh`: sum of coefficient * basis per channel."""
    d = _checked_direction(direction)
    basis = sh_basis(d, block.degree)
    return basis @ block.coefficients


def eval_sh(block, direction):
    """Evaluate and decode an SH block along a unit direction.

    Color blocks get ``clip(x + 0.5, 0, 1)``, intensity and ray-drop blocks a
    sigmoid; ``raw`` blocks are returned as the plain linear sum.
    """
    value, _ = decode(eval_sh_raw(block, direction), block.kind)
    return value


def _checked_direction(direction):
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,):
        raise ContractViolation(f"direction must be a 3-vector, got shape {d.shape}")
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ContractViolation(f"direction {d} is not unit length")
    return d
