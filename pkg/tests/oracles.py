"""Slow, straightforward reference implementations used as test oracles.

Nothing here shares code with the package's renderers or metrics beyond the
primitive containers: intersections use ``np.linalg.solve``, compositing is a
scalar loop, SH bases are written out term by term, SSIM walks every window.
"""

import math

import numpy as np

ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
NEAR = 0.01


def sh_basis_ref(d, degree):
    """Real SH basis (graphics sign convention) for one unit direction."""
    x, y, z = d
    out = [0.28209479177387814]
    if degree >= 1:
        c = 0.4886025119029199
        out += [-c * y, c * z, -c * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [1.0925484305920792 * x * y,
                -1.0925484305920792 * y * z,
                0.31539156525252005 * (2 * zz - xx - yy),
                -1.0925484305920792 * x * z,
                0.5462742152960396 * (xx - yy)]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out += [-0.5900435899266435 * y * (3 * xx - yy),
                2.890611442640554 * x * y * z,
                -0.4570457994644658 * y * (4 * zz - xx - yy),
                0.3731763325901154 * z * (2 * zz - 3 * xx - 3 * yy),
                -0.4570457994644658 * x * (4 * zz - xx - yy),
                1.445305721320277 * z * (xx - yy),
                -0.5900435899266435 * x * (xx - 3 * yy)]
    return np.array(out)


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def _degree(n_coeffs):
    return int(round(math.sqrt(n_coeffs))) - 1


def _solve_all(origin, dirs, prims):
    """(R, N) arrays u, v, z from a dense 3x3 solve per (ray, splat).

    Pairs whose ray misses the splat's bounding sphere (radius 3 * max scale)
    cannot hit and are left with ``ok`` False without solving.
    """
    s = np.exp(prims.log_scale)
    a = prims.tangent_u * s[:, :1]
    b = prims.tangent_v * s[:, 1:]
    R, N = len(dirs), len(prims)
    u = np.zeros((R, N))
    v = np.zeros((R, N))
    z = np.zeros((R, N))
    ok = np.zeros((R, N), dtype=bool)
    rel = prims.center - origin
    dn = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    along = dn @ rel.T
    perp2 = np.sum(rel * rel, axis=1)[None] - along ** 2
    radius = 3.0 * s.max(axis=1) * (1 + 1e-6) + 1e-9
    ri, pi = np.nonzero(perp2 <= radius[None] ** 2)
    M = np.stack([a[pi], b[pi], -dirs[ri]], axis=-1)
    rhs = origin - prims.center[pi]
    det = np.linalg.det(M)
    good = np.abs(det) > 1e-12 * np.linalg.norm(np.cross(a[pi], b[pi]), axis=1) * \
        np.linalg.norm(dirs[ri], axis=1)
    Ms = np.where(good[:, None, None], M, np.eye(3))
    sol = np.linalg.solve(Ms, rhs[..., None])[..., 0]
    u[ri, pi], v[ri, pi], z[ri, pi], ok[ri, pi] = sol[:, 0], sol[:, 1], sol[:, 2], good
    return u, v, z, ok


def _accept(opacity, u, v, z, ok, far=np.inf):
    g = math.exp(-0.5 * (u * u + v * v))
    a = opacity * g
    return ok and NEAR < z <= far and u * u + v * v <= 9.0 and a >= ALPHA_MIN, a


def rasterize_ref(prims, cam, background=0.0):
    """Per-pixel compositing over every splat in global centre-depth order."""
    H, W = cam.height, cam.width
    bg = np.broadcast_to(np.asarray(background, float), (3,))
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    alpha = np.zeros((H, W))
    normal = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    N = len(prims)
    if N == 0:
        color[:] = bg
        return dict(color=color, depth=depth, alpha=alpha, normal=normal, transmittance=trans)
    Rm = np.asarray(cam.rotation)
    campos = -Rm.T @ np.asarray(cam.translation)
    zc = (prims.center @ Rm.T + cam.translation)[:, 2]
    order = np.array(sorted(range(N), key=lambda i: (zc[i], i)))
    opacity = 1.0 / (1.0 + np.exp(-prims.opacity_logit))
    cols, nrms = [], []
    for i in range(N):
        q = prims.center[i] - campos
        dvec = q / np.linalg.norm(q)
        basis = sh_basis_ref(dvec, _degree(prims.sh_color.shape[1]))
        cols.append(np.clip(basis @ prims.sh_color[i] + 0.5, 0, 1))
        m = np.cross(prims.tangent_u[i], prims.tangent_v[i])
        m = m / np.linalg.norm(m)
        if m @ q > 0:
            m = -m
        nrms.append(Rm @ m)
    ys, xs = np.mgrid[0:H, 0:W]
    pix = np.stack([(xs.ravel() - cam.cx) / cam.fx, (ys.ravel() - cam.cy) / cam.fy,
                    np.ones(H * W)], axis=1)
    dirs = pix @ Rm  # camera z component 1, so the solved z is camera depth
    u, v, z, ok = _solve_all(campos, dirs, prims)
    for pidx in range(H * W):
        T = 1.0
        c = np.zeros(3)
        dsum = 0.0
        acc = 0.0
        nsum = np.zeros(3)
        for i in order[ok[pidx, order]]:
            if T < T_MIN:
                break
            good, a = _accept(opacity[i], u[pidx, i], v[pidx, i], z[pidx, i], ok[pidx, i])
            if not good:
                continue
            w = a * T
            c += w * cols[i]
            dsum += w * z[pidx, i]
            nsum += w * nrms[i]
            acc += w
            T *= 1.0 - a
        y, x = divmod(pidx, W)
        color[y, x] = c + bg * (1.0 - acc)
        depth[y, x] = dsum
        alpha[y, x] = acc
        normal[y, x] = nsum
        trans[y, x] = T
    return dict(color=color, depth=depth, alpha=alpha, normal=normal, transmittance=trans)


def trace_ref(prims, origin, dirs, max_range=np.inf):
    """Collect every intersection per ray, sort by (depth, id), composite."""
    R = len(dirs)
    out = dict(depth=np.zeros(R), intensity=np.zeros(R), raydrop=np.zeros(R), alpha=np.zeros(R))
    if len(prims) == 0:
        return out
    opacity = 1.0 / (1.0 + np.exp(-prims.opacity_logit))
    di = _degree(prims.sh_intensity.shape[1])
    dr = _degree(prims.sh_raydrop.shape[1])
    u, v, z, ok = _solve_all(np.asarray(origin, float), dirs, prims)
    for r in range(R):
        hits = []
        for i in np.flatnonzero(ok[r]):
            good, a = _accept(opacity[i], u[r, i], v[r, i], z[r, i], ok[r, i], max_range)
            if good:
                hits.append((z[r, i], i, a))
        hits.sort()
        T = 1.0
        for zz, i, a in hits:
            if T < T_MIN:
                break
            w = a * T
            bi = sh_basis_ref(dirs[r], di)
            br = sh_basis_ref(dirs[r], dr)
            out["depth"][r] += w * zz
            out["intensity"][r] += w * _sigmoid(bi @ prims.sh_intensity[i])
            out["raydrop"][r] += w * _sigmoid(br @ prims.sh_raydrop[i])
            out["alpha"][r] += w
            T *= 1.0 - a
    return out


def nearest_brute(src, dst):
    """Distance from each ``src`` point to its nearest ``dst`` point (chunked O(n m))."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    out = np.empty(len(src))
    for lo in range(0, len(src), 256):
        diff = src[lo:lo + 256, None, :] - dst[None]
        out[lo:lo + 256] = np.sqrt(np.min(np.sum(diff * diff, axis=2), axis=1))
    return out


def chamfer_brute(a, b):
    return nearest_brute(a, b).mean() + nearest_brute(b, a).mean()


def f_score_brute(a, b, tau=0.05):
    p = float(np.mean(nearest_brute(a, b) <= tau))
    r = float(np.mean(nearest_brute(b, a) <= tau))
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def ssim_ref(x, y, peak=1.0, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over every fully contained window, one window at a time."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    H, W, C = x.shape
    size = min(size, H, W)
    ax = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-ax ** 2 / (2 * sigma ** 2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    vals = []
    for ch in range(C):
        for i in range(H - size + 1):
            for j in range(W - size + 1):
                px = x[i:i + size, j:j + size, ch]
                py = y[i:i + size, j:j + size, ch]
                mx, my = (g * px).sum(), (g * py).sum()
                vx = (g * (px - mx) ** 2).sum()
                vy = (g * (py - my) ** 2).sum()
                cxy = (g * (px - mx) * (py - my)).sum()
                vals.append((2 * mx * my + c1) * (2 * cxy + c2)
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def adam_ref(x0, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-15):
    """Scalar adaptive-moment descent written out from the update equations."""
    x, m, v = float(x0), 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x
