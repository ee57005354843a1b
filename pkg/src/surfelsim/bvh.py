"""Proxy triangles for surfels and a binary SAH bounding volume hierarchy.

Each surfel is covered by two triangles spanning the square
``|u|, |v| <= 3`` of its tangent plane, which contains the 3-sigma disk.
Queries run breadth-first over all rays at once ("wavefront"), returning
every (ray, triangle) pair whose triangle is actually hit.
"""

from dataclasses import dataclass

import numpy as np

from .gaussians import SUPPORT_RADIUS
from .kernels import dot, cross, norm

LEAF_SIZE = 4
MEDIAN_DEPTH = 48  # below this depth fall back to median splits
BARY_EPS = 1e-9


@dataclass
class ProxyGeometry:
    triangles: np.ndarray  # (T, 3, 3)
    prim_id: np.ndarray    # (T,)

    def __len__(self):
        return len(self.prim_id)


@dataclass
class Bvh:
    lo: np.ndarray         # (M, 3) node boxes
    hi: np.ndarray
    left: np.ndarray       # child indices, -1 for leaves
    right: np.ndarray
    start: np.ndarray      # leaf range into ``order``
    count: np.ndarray      # 0 for internal nodes
    order: np.ndarray      # triangle indices grouped by leaf
    depth: np.ndarray      # per node

    @property
    def n_nodes(self):
        return len(self.lo)

    @property
    def height(self):
        return int(self.depth.max()) + 1 if len(self.depth) else 0

    def leaves(self):
        return np.flatnonzero(self.count > 0)


def build_proxies(prims):
    """Two triangles per primitive covering its 3-sigma square."""
    a, b = prims.axes()
    R = SUPPORT_RADIUS
    p = prims.center
    c00 = p - R * a - R * b
    c10 = p + R * a - R * b
    c11 = p + R * a + R * b
    c01 = p - R * a + R * b
    t0 = np.stack([c00, c10, c11], axis=1)
    t1 = np.stack([c00, c11, c01], axis=1)
    tris = np.stack([t0, t1], axis=1).reshape(-1, 3, 3)
    return ProxyGeometry(tris, np.repeat(np.arange(len(prims)), 2))


def _area(lo, hi):
    e = np.maximum(hi - lo, 0.0)
    return 2.0 * (e[..., 0] * e[..., 1] + e[..., 1] * e[..., 2] + e[..., 2] * e[..., 0])


def _sah_split(cent, tlo, thi):
    """Best (axis, sorted order, left count) by a full sweep over centroid order."""
    n = len(cent)
    best = (np.inf, None, None)
    for axis in range(3):
        order = np.argsort(cent[:, axis], kind="stable")
        lo, hi = tlo[order], thi[order]
        pl = _area(np.minimum.accumulate(lo), np.maximum.accumulate(hi))
        sl = _area(np.minimum.accumulate(lo[::-1])[::-1], np.maximum.accumulate(hi[::-1])[::-1])
        k = np.arange(1, n)
        cost = pl[:-1] * k + sl[1:] * (n - k)
        i = int(np.argmin(cost))
        if cost[i] < best[0]:
            best = (cost[i], order, i + 1)
    return best[1], best[2]


def build_bvh(prims):
    """Proxy triangles and a BVH over them; deterministic for a given input."""
    proxies = build_proxies(prims)
    return proxies, build_bvh_from_triangles(proxies.triangles)


def build_bvh_from_triangles(tris):
    T = len(tris)
    tlo = tris.min(axis=1) if T else np.zeros((0, 3))
    thi = tris.max(axis=1) if T else np.zeros((0, 3))
    cent = 0.5 * (tlo + thi)
    lo, hi, left, right, start, count, depth = [], [], [], [], [], [], []
    order = []
    if T == 0:
        z = np.zeros(0, dtype=int)
        return Bvh(np.zeros((0, 3)), np.zeros((0, 3)), z, z, z, z, z, z)
    stack = [(np.arange(T), 0, -1, 0)]  # (triangles, depth, parent, side)
    while stack:
        idx, d, parent, side = stack.pop()
        node = len(lo)
        if parent >= 0:
            (left if side == 0 else right)[parent] = node
        lo.append(tlo[idx].min(axis=0))
        hi.append(thi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        depth.append(d)
        if len(idx) <= LEAF_SIZE:
            start.append(len(order))
            count.append(len(idx))
            order.extend(idx.tolist())
            continue
        start.append(0)
        count.append(0)
        c = cent[idx]
        if d < MEDIAN_DEPTH:
            srt, k = _sah_split(c, tlo[idx], thi[idx])
        else:
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            srt, k = np.argsort(c[:, axis], kind="stable"), len(idx) // 2
        # push right first so the left subtree is numbered next
        stack.append((idx[srt[k:]], d + 1, node, 1))
        stack.append((idx[srt[:k]], d + 1, node, 0))
    lo, hi = np.array(lo), np.array(hi)
    # conservative padding so thin (planar) boxes survive slab rounding
    pad = 1e-9 * (1.0 + np.abs(lo) + np.abs(hi) + (hi - lo).max(axis=1, keepdims=True))
    return Bvh(lo - pad, hi + pad, np.array(left), np.array(right),
               np.array(start), np.array(count), np.array(order, dtype=int), np.array(depth))


def _slab(lo, hi, o, inv_d, t0, t1):
    ta = (lo - o) * inv_d
    tb = (hi - o) * inv_d
    near = np.minimum(ta, tb)
    far = np.maximum(ta, tb)
    tn = np.maximum(np.maximum(near[:, 0], near[:, 1]), near[:, 2])
    tf = np.minimum(np.minimum(far[:, 0], far[:, 1]), far[:, 2])
    return (tn <= tf) & (tf >= t0) & (tn <= t1)


def traverse(bvh, origins, dirs, t_lo, t_hi):
    """(ray, triangle) candidates from all leaves whose boxes the rays pass."""
    R = len(origins)
    if bvh.n_nodes == 0 or R == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    # zero components -> huge finite reciprocal keeps the slab test NaN-free
    inv_d = 1.0 / np.where(dirs == 0.0, 1e-300, dirs)
    t_lo = np.broadcast_to(t_lo, (R,))
    t_hi = np.broadcast_to(t_hi, (R,))
    rays = np.arange(R)
    nodes = np.zeros(R, dtype=int)
    out_r, out_t = [], []
    with np.errstate(over="ignore", invalid="ignore"):
        while len(rays):
            hit = _slab(bvh.lo[nodes], bvh.hi[nodes], origins[rays], inv_d[rays],
                        t_lo[rays], t_hi[rays])
            rays, nodes = rays[hit], nodes[hit]
            cnt = bvh.count[nodes]
            leaf = cnt > 0
            if leaf.any():
                lr, ln, lc = rays[leaf], nodes[leaf], cnt[leaf]
                rep_r = np.repeat(lr, lc)
                first = np.repeat(np.cumsum(lc) - lc, lc)
                pos = np.repeat(bvh.start[ln], lc) + np.arange(len(rep_r)) - first
                out_r.append(rep_r)
                out_t.append(bvh.order[pos])
            inner = ~leaf
            rays = np.concatenate([rays[inner], rays[inner]])
            nodes = np.concatenate([bvh.left[nodes[inner]], bvh.right[nodes[inner]]])
    if not out_r:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(out_r), np.concatenate(out_t)


def intersect_triangles(origins, dirs, tris, t_lo=0.0, t_hi=np.inf):
    """Moller-Trumbore with a small barycentric margin; returns ``(t, hit)``."""
    v0, v1, v2 = tris[..., 0, :], tris[..., 1, :], tris[..., 2, :]
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = cross(dirs, e2)
    det = dot(e1, pvec)
    scale = norm(e1) * norm(e2) * norm(dirs)
    ok = np.abs(det) > 1e-14 * scale
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins - v0
    u = dot(tvec, pvec) * inv
    qvec = cross(tvec, e1)
    v = dot(dirs, qvec) * inv
    t = dot(e2, qvec) * inv
    hit = (ok & (u >= -BARY_EPS) & (v >= -BARY_EPS) & (u + v <= 1 + BARY_EPS)
           & (t >= t_lo) & (t <= t_hi))
    return t, hit


def query(bvh, proxies, origins, dirs, t_lo=0.0, t_hi=np.inf):
    """All (ray, triangle, t) triangle hits, ordered by ray then triangle."""
    r, tri = traverse(bvh, origins, dirs, t_lo, t_hi)
    if not len(r):
        return r, tri, np.zeros(0)
    tl = np.broadcast_to(t_lo, (len(origins),))[r]
    th = np.broadcast_to(t_hi, (len(origins),))[r]
    t, hit = intersect_triangles(origins[r], dirs[r], proxies.triangles[tri], tl, th)
    r, tri, t = r[hit], tri[hit], t[hit]
    srt = np.lexsort((tri, r))
    return r[srt], tri[srt], t[srt]
