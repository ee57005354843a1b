"""Tile-based rasterisation of 2D Gaussian surfels with an analytic backward pass.

Primitives are sorted once by camera depth of their centres (ties by index),
binned into 16x16 pixel tiles by the screen bounding box of their 3-sigma
square, and blended front to back per pixel. Colour, camera depth and the
camera-frame normal are blended with the same weights.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractViolation
from .gaussians import SUPPORT_RADIUS, GaussianSet, SplatLocalPoint, activate
from .sh import decode, sh_basis, sh_basis_jacobian

TILE = 16
N_CHANNELS = 7  # r, g, b, depth, nx, ny, nz


@dataclass
class FrameBuffer:
    color: np.ndarray    # (H, W, 3)
    depth: np.ndarray    # (H, W); 0 where nothing was hit
    alpha: np.ndarray    # (H, W)
    normal: np.ndarray   # (H, W, 3) camera frame, unnormalised blend
    count: np.ndarray    # (H, W) number of contributing splats
    tape: dict = field(default=None, repr=False)

    @property
    def shape(self):
        return self.alpha.shape


def intersect_splat_pixel(g, cam, pixel, near=kernels.NEAR):
    """Hit of the ray through ``pixel`` with the plane of ``g``.

    Returns ``(SplatLocalPoint, z)`` with ``z`` the camera depth, or None if the
    ray is parallel to the splat or the hit is not in front of the near plane.
    The 3-sigma support is not applied here.
    """
    x, y = pixel
    if not (0 <= x < cam.width and 0 <= y < cam.height):
        raise ContractViolation(f"pixel {pixel} outside the {cam.width}x{cam.height} image")
    d = cam.pixel_directions(x, y)
    a = g.scale_u * g.tangent_u
    b = g.scale_v * g.tangent_v
    u, v, z, ok = kernels.ray_splat_solve(cam.center, d, g.center, a, b)
    if not ok or z <= near:
        return None
    return SplatLocalPoint(float(u), float(v)), float(z)


def _sort_order(prims, cam):
    zc = cam.to_camera(prims.center)[:, 2]
    return np.lexsort((np.arange(len(prims)), zc))


def _screen_bounds(prims, cam, near=kernels.NEAR, pad=1.0):
    """Per-splat pixel bounds ``(x0, x1, y0, y1)`` inclusive; x0 > x1 if off-screen.

    The projected 3-sigma square bounds the projected disk whenever all four
    corners are in front of the camera; otherwise the whole screen is used.
    """
    a, b = prims.axes()
    R = SUPPORT_RADIUS
    corners = np.stack([prims.center + sa * R * a + sb * R * b
                        for sa in (-1, 1) for sb in (-1, 1)], axis=1)  # (N, 4, 3)
    x, y, z = cam.project(corners)
    in_front = z > near
    all_front = in_front.all(axis=1)
    none_front = ~in_front.any(axis=1)
    with np.errstate(invalid="ignore"):
        x0 = np.floor(np.nanmin(np.where(in_front, x, np.inf), axis=1) - pad)
        x1 = np.ceil(np.nanmax(np.where(in_front, x, -np.inf), axis=1) + pad)
        y0 = np.floor(np.nanmin(np.where(in_front, y, np.inf), axis=1) - pad)
        y1 = np.ceil(np.nanmax(np.where(in_front, y, -np.inf), axis=1) + pad)
    partial = ~all_front & ~none_front
    x0 = np.where(partial, 0, x0)
    y0 = np.where(partial, 0, y0)
    x1 = np.where(partial, cam.width - 1, x1)
    y1 = np.where(partial, cam.height - 1, y1)
    x0 = np.where(none_front, 1, x0)
    x1 = np.where(none_front, 0, x1)
    x0 = np.clip(x0, 0, cam.width)
    x1 = np.clip(x1, -1, cam.width - 1)
    y0 = np.clip(y0, 0, cam.height)
    y1 = np.clip(y1, -1, cam.height - 1)
    return x0.astype(int), x1.astype(int), y0.astype(int), y1.astype(int)


def _tiles(cam, tile):
    out = []
    for ty in range(0, cam.height, tile):
        for tx in range(0, cam.width, tile):
            out.append((tx, min(tx + tile, cam.width), ty, min(ty + tile, cam.height)))
    return out


def _splat_appearance(prims, cam):
    """Per-splat colour (decoded SH along the centre view direction) and camera normal."""
    q = prims.center - cam.center
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    dirs = q / np.where(qn > 0, qn, 1.0)
    deg = prims.degrees["color"]
    basis = sh_basis(dirs, deg)
    raw = np.einsum("nk,nkc->nc", basis, prims.sh_color)
    color, slope = decode(raw, "color")
    m = np.cross(prims.tangent_u, prims.tangent_v)
    mn = np.linalg.norm(m, axis=1, keepdims=True)
    nhat = m / np.where(mn > 0, mn, 1.0)
    nc = nhat @ cam.rotation.T
    sign = np.where(np.sum(nhat * q, axis=1) > 0, -1.0, 1.0)
    nc = nc * sign[:, None]
    return dict(q=q, qn=qn, dirs=dirs, basis=basis, color=color, slope=slope,
                m=m, mn=mn, nhat=nhat, sign=sign, normal=nc)


def _pixel_matrix(cam):
    """``M`` with ``pixel_directions(x, y) = M @ (x, y, 1)``."""
    kinv = np.array([[1.0 / cam.fx, 0.0, -cam.cx / cam.fx],
                     [0.0, 1.0 / cam.fy, -cam.cy / cam.fy],
                     [0.0, 0.0, 1.0]])
    return cam.rotation.T @ kinv


def _homographies(prims, cam, axes):
    """Per-splat rows mapping homogeneous pixels to the intersection solve.

    With ``d = M q`` and ``r = o - p``: ``det = h_det . q``,
    ``u = (h_u . q) / det``, ``v = (h_v . q) / det`` and ``z = z_num / det``.
    """
    M = _pixel_matrix(cam)
    a, b = axes
    r = cam.center - prims.center
    ab = kernels.cross(a, b)
    return dict(M=M, r=r, ab=ab, abn=kernels.norm(ab),
                h_det=-(ab @ M), h_u=-(kernels.cross(r, b) @ M),
                h_v=-(kernels.cross(a, r) @ M), z_num=kernels.dot(ab, r))


def _tile_pairs(prims, cam, ids, hom, opacity, tx0, tx1, ty0, ty1, near):
    ys, xs = np.mgrid[ty0:ty1, tx0:tx1]
    q = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)], axis=1).astype(np.float64)
    d = q @ hom["M"].T
    lin = lambda h: np.einsum("pi,ki->pk", q, h[ids])  # noqa: E731
    det = lin(hom["h_det"])
    ok = np.abs(det) > kernels.PARALLEL_EPS * hom["abn"][ids][None] * kernels.norm(d)[:, None]
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    u = lin(hom["h_u"]) * inv
    v = lin(hom["h_v"]) * inv
    z = hom["z_num"][ids][None] * inv
    op = opacity[ids][None]
    alpha, G, live = kernels.splat_alpha(op, u, v, z, ok, near=near)
    return dict(d=d, u=u, v=v, z=np.where(live, z, 0.0), inv=inv, opacity=op, alpha=alpha,
                G=G, live=live)


def rasterize(prims, cam, background=0.0, tile=TILE, near=kernels.NEAR, t_min=kernels.T_MIN):
    """Render colour, depth, alpha and normal for a world-space primitive set."""
    H, W = cam.height, cam.width
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    out = np.zeros((H, W, N_CHANNELS))
    acc = np.zeros((H, W))
    count = np.zeros((H, W), dtype=np.int64)
    tape = dict(order=np.zeros(0, int), tiles=[], background=bg, near=near, t_min=t_min,
                cam=cam, n=len(prims))
    if len(prims):
        order = _sort_order(prims, cam)
        x0, x1, y0, y1 = _screen_bounds(prims, cam, near)
        hom = _homographies(prims, cam, prims.axes())
        opacity = activate(prims)[2]
        app = _splat_appearance(prims, cam)
        svals = np.concatenate([app["color"], app["normal"]], axis=1)
        tape["order"] = order
        ox0, ox1, oy0, oy1 = x0[order], x1[order], y0[order], y1[order]
        for tx0, tx1, ty0, ty1 in _tiles(cam, tile):
            hit = (ox0 < tx1) & (ox1 >= tx0) & (oy0 < ty1) & (oy1 >= ty0)
            ids = order[hit]
            if not len(ids):
                continue
            tape["tiles"].append((tx0, tx1, ty0, ty1, ids))
            pr = _tile_pairs(prims, cam, ids, hom, opacity, tx0, tx1, ty0, ty1, near)
            w = kernels.blend_weights(pr["alpha"], t_min)[0]
            shape = (ty1 - ty0, tx1 - tx0)
            cn = np.einsum("pk,kc->pc", w, svals[ids])
            blk = out[ty0:ty1, tx0:tx1]
            blk[..., :3] = cn[:, :3].reshape(shape + (3,))
            blk[..., 3] = np.einsum("pk,pk->p", w, pr["z"]).reshape(shape)
            blk[..., 4:] = cn[:, 3:].reshape(shape + (3,))
            acc[ty0:ty1, tx0:tx1] = w.sum(axis=1).reshape(shape)
            count[ty0:ty1, tx0:tx1] = (w > 0).sum(axis=1).reshape(shape)
    color = out[..., :3] + bg * (1.0 - acc[..., None])
    return FrameBuffer(color, out[..., 3], acc, out[..., 4:], count, tape)


def rasterize_backward(prims, fb, g_color=None, g_depth=None, g_alpha=None, g_normal=None):
    """Gradients of a scalar loss w.r.t. every raw parameter of ``prims``.

    ``fb`` must come from :func:`rasterize` on the same primitives; upstream
    gradients default to zero. Returns a :class:`GaussianSet` of gradients.
    """
    tape = fb.tape
    if tape is None:
        raise ContractViolation("frame buffer carries no forward tape")
    if tape["n"] != len(prims):
        raise ContractViolation("primitive count differs from the forward pass")
    cam, near, t_min, bg = tape["cam"], tape["near"], tape["t_min"], tape["background"]
    H, W = fb.shape
    z3 = np.zeros((H, W, 3))
    g_color = z3 if g_color is None else np.asarray(g_color, dtype=np.float64)
    g_depth = np.zeros((H, W)) if g_depth is None else np.asarray(g_depth, dtype=np.float64)
    g_alpha = np.zeros((H, W)) if g_alpha is None else np.asarray(g_alpha, dtype=np.float64)
    g_normal = z3 if g_normal is None else np.asarray(g_normal, dtype=np.float64)
    g_cn = np.concatenate([g_color, g_normal], axis=-1)
    g_acc = g_alpha - np.einsum("hwc,c->hw", g_color, bg)

    grads = prims.zeros_like()
    N = len(prims)
    if N == 0:
        return grads
    a, b = prims.axes()
    hom = _homographies(prims, cam, (a, b))
    opacity = activate(prims)[2]
    app = _splat_appearance(prims, cam)
    svals = np.concatenate([app["color"], app["normal"]], axis=1)
    g_sv = np.zeros((N, 6))
    g_opa = np.zeros(N)
    # per-splat sums of (weight * ray direction) and of scalar weights
    Du, Dv, uDu, uDv, vDu, vDv = (np.zeros((N, 3)) for _ in range(6))
    Sz, uSz, vSz = np.zeros(N), np.zeros(N), np.zeros(N)
    for tx0, tx1, ty0, ty1, ids in tape["tiles"]:
        gcn = g_cn[ty0:ty1, tx0:tx1].reshape(-1, 6)
        gd = g_depth[ty0:ty1, tx0:tx1].ravel()
        ga_pix = g_acc[ty0:ty1, tx0:tx1].ravel()
        if not (gcn.any() or gd.any() or ga_pix.any()):
            continue
        pr = _tile_pairs(prims, cam, ids, hom, opacity, tx0, tx1, ty0, ty1, near)
        alpha = pr["alpha"]
        w, T, mask, _ = kernels.blend_weights(alpha, t_min)
        e = gcn @ svals[ids].T + pr["z"] * gd[:, None] + ga_pix[:, None]
        g_al = np.where(pr["live"], kernels.blend_backward(alpha, T, mask, w, e, t_min), 0.0)
        g_sv[ids] += np.einsum("pk,pc->kc", w, gcn)
        g_opa[ids] += np.sum(g_al * pr["G"], axis=0)
        gG = g_al * pr["opacity"] * pr["G"]
        inv = pr["inv"]
        u, v, d = pr["u"], pr["v"], pr["d"]
        wu = -gG * u * inv
        wv = -gG * v * inv
        wz = np.where(pr["live"], w * gd[:, None], 0.0) * inv
        red = lambda x: np.einsum("pk,pi->ki", x, d)  # noqa: E731
        Du[ids] += red(wu)
        Dv[ids] += red(wv)
        uDu[ids] += red(wu * u)
        uDv[ids] += red(wv * u)
        vDu[ids] += red(wu * v)
        vDv[ids] += red(wv * v)
        Sz[ids] += wz.sum(axis=0)
        uSz[ids] += (wz * u).sum(axis=0)
        vSz[ids] += (wz * v).sum(axis=0)

    # g_r summed over pixels: (sum gu/det d) x b + a x (sum gv/det d) + ab sum gz/det
    ab = hom["ab"]
    cr = kernels.cross
    g_r = cr(Du, b) + cr(a, Dv) + ab * Sz[:, None]
    g_p = -g_r
    g_a = -(cr(uDu, b) + cr(a, uDv) + ab * uSz[:, None])
    g_b = -(cr(vDu, b) + cr(a, vDv) + ab * vSz[:, None])

    _appearance_backward(prims, cam, app, g_sv[:, :3], g_sv[:, 3:], g_p, grads)
    _axes_backward(prims, g_a, g_b, grads)
    grads.opacity_logit += g_opa * opacity * (1 - opacity)
    grads.center += g_p
    return grads


def _appearance_backward(prims, cam, app, g_col, g_nrm, g_p, grads):
    g_raw = g_col * app["slope"]
    grads.sh_color += app["basis"][:, :, None] * g_raw[:, None, :]
    g_basis = np.einsum("nkc,nc->nk", prims.sh_color, g_raw)
    J = sh_basis_jacobian(app["dirs"], prims.degrees["color"])
    g_dir = np.einsum("nk,nkj->nj", g_basis, J)
    dirs = app["dirs"]
    g_p += (g_dir - dirs * np.sum(dirs * g_dir, axis=1, keepdims=True)) / app["qn"]
    # normal: n_cam = sign * R nhat, nhat = m / |m|, m = t_u x t_v
    g_nhat = app["sign"][:, None] * (g_nrm @ cam.rotation)
    nhat = app["nhat"]
    g_m = (g_nhat - nhat * np.sum(nhat * g_nhat, axis=1, keepdims=True)) / app["mn"]
    grads.tangent_u += np.cross(prims.tangent_v, g_m)
    grads.tangent_v += np.cross(g_m, prims.tangent_u)


def _axes_backward(prims, g_a, g_b, grads):
    s = prims.scales
    grads.tangent_u += s[:, :1] * g_a
    grads.tangent_v += s[:, 1:] * g_b
    grads.log_scale[:, 0] += s[:, 0] * np.sum(prims.tangent_u * g_a, axis=1)
    grads.log_scale[:, 1] += s[:, 1] * np.sum(prims.tangent_v * g_b, axis=1)


def depth_to_normal(depth, cam, alpha=None, alpha_threshold=0.5):
    """Camera-frame normals from central differences of the back-projected depth.

    Border pixels, pixels whose alpha is below ``alpha_threshold`` and
    degenerate neighbourhoods get a zero normal. Accepts a :class:`FrameBuffer`.
    """
    normals, _ = _depth_to_normal(depth, cam, alpha, alpha_threshold)
    return normals


def _backproject_rays(cam):
    ys, xs = np.mgrid[0:cam.height, 0:cam.width]
    return np.stack([(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy,
                     np.ones_like(xs, dtype=np.float64)], axis=-1)


def _depth_to_normal(depth, cam, alpha, alpha_threshold):
    if isinstance(depth, FrameBuffer):
        alpha = depth.alpha if alpha is None else alpha
        depth = depth.depth
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    rays = _backproject_rays(cam)
    X = depth[..., None] * rays
    dx = np.zeros_like(X)
    dy = np.zeros_like(X)
    dx[1:-1, 1:-1] = X[1:-1, 2:] - X[1:-1, :-2]
    dy[1:-1, 1:-1] = X[2:, 1:-1] - X[:-2, 1:-1]
    m = np.cross(dy, dx)
    mn = np.linalg.norm(m, axis=-1)
    valid = np.zeros((H, W), dtype=bool)
    valid[1:-1, 1:-1] = True
    valid &= mn > 1e-12
    if alpha is not None:
        valid &= np.asarray(alpha) >= alpha_threshold
    n = np.where(valid[..., None], m / np.where(mn > 1e-12, mn, 1.0)[..., None], 0.0)
    return n, dict(rays=rays, dx=dx, dy=dy, m=m, mn=mn, valid=valid)


def depth_to_normal_backward(depth, cam, g_normal, alpha=None, alpha_threshold=0.5):
    """Gradient w.r.t. the depth map of a loss on :func:`depth_to_normal`."""
    n, st = _depth_to_normal(depth, cam, alpha, alpha_threshold)
    valid = st["valid"]
    g_n = np.where(valid[..., None], g_normal, 0.0)
    mn = np.where(valid, st["mn"], 1.0)[..., None]
    g_m = (g_n - n * np.sum(n * g_n, axis=-1, keepdims=True)) / mn
    g_dy = np.cross(st["dx"], g_m)
    g_dx = np.cross(g_m, st["dy"])
    g_X = np.zeros_like(g_m)
    g_X[1:-1, 2:] += g_dx[1:-1, 1:-1]
    g_X[1:-1, :-2] -= g_dx[1:-1, 1:-1]
    g_X[2:, 1:-1] += g_dy[1:-1, 1:-1]
    g_X[:-2, 1:-1] -= g_dy[1:-1, 1:-1]
    return np.sum(g_X * st["rays"], axis=-1)
