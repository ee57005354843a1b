"""Ray/splat intersection and front-to-back compositing shared by both renderers.

Every pixel or LiDAR beam is a ray ``o + z d``. A splat is the plane
``p + u a + v b`` with ``a = s_u t_u`` and ``b = s_v t_v``; the hit is the
solution of the 3x3 system ``u a + v b - z d = o - p`` (the intersection of
the splat plane with the two planes that contain the ray), solved with
Cramer's rule so it stays exact for any non-parallel frame.
"""

import numpy as np

ALPHA_CUTOFF = 1.0 / 255.0
T_MIN = 1e-4
NEAR = 0.01
PARALLEL_EPS = 1e-12
SUPPORT_R2 = 9.0  # (3 sigma)^2


def dot(x, y):
    return x[..., 0] * y[..., 0] + x[..., 1] * y[..., 1] + x[..., 2] * y[..., 2]


def cross(x, y):
    """Broadcasting cross product; faster than ``np.cross`` on small trailing axes."""
    x0, x1, x2 = x[..., 0], x[..., 1], x[..., 2]
    y0, y1, y2 = y[..., 0], y[..., 1], y[..., 2]
    return np.stack([x1 * y2 - x2 * y1, x2 * y0 - x0 * y2, x0 * y1 - x1 * y0], axis=-1)


def norm(x):
    return np.sqrt(dot(x, x))


def ray_splat_solve(o, d, p, a, b):
    """Solve for ``(u, v, z)`` with broadcasting over leading axes.

    Returns ``u, v, z, ok`` where ``ok`` is False for rays (numerically)
    parallel to the splat plane; ``u, v, z`` are 0 there.
    """
    r = o - p
    c = -d
    ab = cross(a, b)
    det = dot(c, ab)  # == a . (b x c)
    scale = norm(ab) * norm(d)
    ok = np.abs(det) > PARALLEL_EPS * scale
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    bc = cross(b, c)
    ca = cross(c, a)
    u = dot(bc, r) * inv
    v = dot(ca, r) * inv
    z = dot(ab, r) * inv
    return u, v, z, ok


def ray_splat_solve_backward(o, d, p, a, b, u, v, z, ok, gu, gv, gz):
    """Gradients of ``(u, v, z)`` w.r.t. ``p``, ``a`` and ``b``.

    Uses ``y = M^-1 r``: ``g_r = M^-T g_y`` and ``g_M = -g_r y^T`` where the
    rows of ``M^-1`` are ``(b x c, c x a, a x b) / det``.
    """
    c = -d
    ab = cross(a, b)
    det = dot(c, ab)
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    gr = (cross(b, c) * gu[..., None] + cross(c, a) * gv[..., None]
          + ab * gz[..., None]) * inv[..., None]
    ga = -gr * u[..., None]
    gb = -gr * v[..., None]
    gp = -gr
    return gp, ga, gb


def splat_alpha(opacity, u, v, z, ok, near=NEAR, far=np.inf):
    """Per-hit ``alpha * G`` with the shared cutoffs applied.

    A hit counts when the ray is not parallel, ``near < z <= far``, the point
    lies inside the 3-sigma disk and ``alpha * G >= 1/255``.
    Returns ``(a, G, live)``.
    """
    r2 = u * u + v * v
    G = np.exp(-0.5 * r2)
    a = opacity * G
    live = ok & (z > near) & (z <= far) & (r2 <= SUPPORT_R2) & (a >= ALPHA_CUTOFF)
    return np.where(live, a, 0.0), G, live


def blend_weights(alpha, t_min=T_MIN):
    """Front-to-back blending weights ``w_j = alpha_j T_j`` for (R, K) sorted hits.

    A hit is blended while the transmittance in front of it is still >=
    ``t_min``; the hit that drops it below is the last one.
    Returns ``(w, T, mask, T_final)``.
    """
    R, K = alpha.shape
    if K == 0:
        return np.zeros((R, 0)), np.ones((R, 0)), np.zeros((R, 0), bool), np.ones(R)
    T_incl = np.cumprod(1.0 - alpha, axis=1)
    T = np.empty_like(T_incl)
    T[:, 0] = 1.0
    T[:, 1:] = T_incl[:, :-1]
    mask = T >= t_min
    w = np.where(mask, alpha * T, 0.0)
    n_used = mask.sum(axis=1)
    T_final = np.where(n_used > 0, T_incl[np.arange(R), np.maximum(n_used - 1, 0)], 1.0)
    return w, T, mask, T_final


def blend_backward(alpha, T, mask, w, e, t_min=T_MIN):
    """``d loss / d alpha`` given ``e_j = v_j . g``, the upstream gradient
    already contracted with each hit's value vector (accumulated alpha counts
    as a channel of value 1).

    With ``S_j`` the blended value of everything behind hit ``j`` (restarted at
    unit transmittance), ``d out / d alpha_j = T_j (v_j - S_j)``. ``S_j . g`` is
    a suffix sum divided by the transmittance behind ``j``, needed only while
    that transmittance is >= ``t_min``.
    """
    R, K = alpha.shape
    if K == 0:
        return np.zeros((R, 0))
    suffix = np.cumsum((w * e)[:, ::-1], axis=1)[:, ::-1]
    behind = np.zeros_like(suffix)
    behind[:, :-1] = suffix[:, 1:]
    T_after = T * (1.0 - alpha)
    keep = mask & (T_after >= t_min)
    S = np.where(keep, behind / np.where(keep, T_after, 1.0), 0.0)
    return np.where(mask, T * (e - S), 0.0)


def composite(alpha, values, t_min=T_MIN):
    """Front-to-back alpha blending of (R, K, C) ``values`` with (R, K) ``alpha``.

    ``alpha`` is sorted front to back with dead entries set to zero.
    Returns ``(out, acc, state)``; ``state`` feeds :func:`composite_backward`.
    """
    R, K = alpha.shape
    w, T, mask, T_final = blend_weights(alpha, t_min)
    if K == 0:
        return (np.zeros((R, values.shape[-1])), np.zeros(R),
                dict(T=T, mask=mask, T_final=T_final, w=w))
    out = np.einsum("rk,rkc->rc", w, values)
    acc = w.sum(axis=1)
    return out, acc, dict(T=T, mask=mask, T_final=T_final, w=w)


def composite_backward(alpha, values, state, g_out, g_acc=None, t_min=T_MIN):
    """Gradients of :func:`composite` outputs w.r.t. ``alpha`` and ``values``."""
    R, K = alpha.shape
    if K == 0:
        return np.zeros((R, 0)), np.zeros_like(values)
    if g_acc is None:
        g_acc = np.zeros(R)
    e = np.einsum("rkc,rc->rk", values, g_out) + g_acc[:, None]
    g_alpha = blend_backward(alpha, state["T"], state["mask"], state["w"], e, t_min)
    g_values = state["w"][..., None] * g_out[:, None, :]
    return g_alpha, g_values
