"""Fitting a scene graph to camera and LiDAR observations.

Parameters live in the scene graph's canonical primitive sets (plus deformable
offsets and, optionally, node translations). Each iteration flattens the graph
at the batch time, renders both sensors, back-propagates the loss to world
primitives, pulls the gradients back to canonical space and takes an
adaptive-moment step.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .bvh import build_bvh
from .data import Rendered
from .errors import ContractViolation, NonFiniteError
from .gaussians import GaussianSet, PARAM_GROUPS, orthonormalize, tangent_frame_from_normal
from .lidar import generate_rays, trace, trace_backward
from .losses import LossWeights, TERMS, compute_loss
from .rasterizer import rasterize, rasterize_backward
from .scene_graph import NodeKind, flatten, pull_back
from .sh import C0, logit, sigmoid
from .transforms import RigidPose

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15

DEFAULT_LR = {"center": 1.6e-4, "sh": 2.5e-3, "opacity": 5e-2, "scale": 5e-3,
              "tangent": 1e-3}


def lr_group(name):
    if name in ("center", "offsets", "translation"):
        return "center"
    if name.startswith("tangent"):
        return "tangent"
    if name == "log_scale":
        return "scale"
    if name == "opacity_logit":
        return "opacity"
    if name.startswith("sh_"):
        return "sh"
    raise KeyError(name)


@dataclass
class OptState:
    """Adaptive-moment accumulators keyed like the parameter dict."""

    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    grad_accum: dict = field(default_factory=dict)   # node key -> (n,) densification stats
    grad_count: dict = field(default_factory=dict)
    sh_rest_ratio: float = 1.0      # lr multiplier for SH coefficients above degree 0

    def learning_rate(self, key):
        lr = self.lr[lr_group(key[-1])]
        if not key[-1].startswith("sh_") or self.sh_rest_ratio == 1.0:
            return lr
        v = self.m[key]
        scale = np.full((1, v.shape[1]) + (1,) * (v.ndim - 2), self.sh_rest_ratio)
        scale[:, 0] = 1.0
        return lr * scale


def adam_step(params, grads, state):
    """In-place adaptive-moment update of every array in ``params``.

    ``params`` and ``grads`` map the same keys to equally shaped arrays.
    """
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter group {key}", group=key)
        if g.shape != params[key].shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape "
                                    f"{params[key].shape} for {key}")
    state.step += 1
    t = state.step
    bc1 = 1 - BETA1 ** t
    bc2 = 1 - BETA2 ** t
    for key, g in grads.items():
        m = state.m.get(key)
        if m is None or m.shape != g.shape:
            m = state.m[key] = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
        v = state.v[key]
        m *= BETA1
        m += (1 - BETA1) * g
        v *= BETA2
        v += (1 - BETA2) * g * g
        params[key] -= state.learning_rate(key) * (m / bc1) / (np.sqrt(v / bc2) + EPS)
    return params, state


def _node_key(k):
    return "bg" if k is None else f"node{k}"


def parameters(graph, optimize_poses=False):
    """Live views of every optimisable array in the graph."""
    out = {}
    for name in PARAM_GROUPS:
        out[("bg", name)] = getattr(graph.background, name)
    for k, node in enumerate(graph.nodes):
        for name in PARAM_GROUPS:
            out[(_node_key(k), name)] = getattr(node.gaussians, name)
        if node.kind is NodeKind.DEFORMABLE:
            out[(_node_key(k), "offsets")] = node.offsets
    return out


def gradient_dict(graph, cgrads, optimize_poses=False):
    out = {}
    for name in PARAM_GROUPS:
        out[("bg", name)] = getattr(cgrads.background, name)
    for k, node in enumerate(graph.nodes):
        for name in PARAM_GROUPS:
            out[(_node_key(k), name)] = getattr(cgrads.nodes[k], name)
        if node.kind is NodeKind.DEFORMABLE:
            out[(_node_key(k), "offsets")] = cgrads.offsets[k]
        if optimize_poses:
            out[(_node_key(k), "translation")] = cgrads.translations[k]
    return out


def step(graph, cgrads, state, optimize_poses=False):
    """One update of all canonical parameters; re-orthonormalises tangent frames."""
    params = parameters(graph)
    grads = gradient_dict(graph, cgrads, optimize_poses)
    trans = {}
    if optimize_poses:
        for k, node in enumerate(graph.nodes):
            trans[k] = np.array([p.translation for p in node.poses])
            params[(_node_key(k), "translation")] = trans[k]
    adam_step(params, grads, state)
    for g in [graph.background] + [n.gaussians for n in graph.nodes]:
        if len(g):
            g.tangent_u[:], g.tangent_v[:] = orthonormalize(g.tangent_u, g.tangent_v)
    for k, tr in trans.items():
        node = graph.nodes[k]
        node.poses = [RigidPose(p.rotation, t, p.timestamp) for p, t in zip(node.poses, tr)]
    return graph, state


@dataclass(frozen=True)
class DensifyThresholds:
    grad: float = 2e-4
    min_opacity: float = 0.005
    split_factor: float = 1.6
    percent_dense: float = 0.01
    extent: float = 1.0


@dataclass
class DensifyReport:
    splits: int = 0
    clones: int = 0
    pruned: int = 0

    @property
    def removed(self):
        """Pruned primitives plus split parents (each replaced by two children)."""
        return self.pruned + self.splits


SPLIT_RADIUS = 1.125  # child 3-sigma footprint stays inside the parent's at factor 1.6


def _split_children(g, idx, factor, rng):
    n = len(idx)
    parent = g.subset(np.repeat(idx, 2))
    uv = rng.standard_normal((2 * n, 2))
    r = np.linalg.norm(uv, axis=1, keepdims=True)
    limit = 3.0 * (1.0 - 1.0 / factor)
    uv = np.where(r > limit, uv * limit / np.maximum(r, 1e-300), uv)
    s = parent.scales
    parent.center = (parent.center + uv[:, :1] * s[:, :1] * parent.tangent_u
                     + uv[:, 1:] * s[:, 1:] * parent.tangent_v)
    parent.log_scale = parent.log_scale - np.log(factor)
    return parent


def densify_and_prune(graph, state, thresholds=DensifyThresholds(), rng=None):
    """Split/clone primitives with large mean positional gradient, prune faint ones.

    Works per node; optimiser moments for surviving rows are carried over and
    new rows start at zero. Returns ``(graph, state, DensifyReport)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    report = DensifyReport()
    holders = [(None, graph.background)] + [(k, n.gaussians) for k, n in enumerate(graph.nodes)]
    for k, g in holders:
        key = _node_key(k)
        n = len(g)
        if n == 0:
            continue
        acc = state.grad_accum.get(key, np.zeros(n))
        cnt = state.grad_count.get(key, np.zeros(n))
        mean = np.where(cnt > 0, acc / np.maximum(cnt, 1), 0.0)
        prune = g.opacity < thresholds.min_opacity
        hot = (mean >= thresholds.grad) & ~prune
        large = g.scales.max(axis=1) > thresholds.percent_dense * thresholds.extent
        split = np.flatnonzero(hot & large)
        clone = np.flatnonzero(hot & ~large)
        keep = np.flatnonzero(~prune & ~np.isin(np.arange(n), split))
        if not (len(split) or len(clone) or prune.any()):
            continue
        report.splits += len(split)
        report.clones += len(clone)
        report.pruned += int(prune.sum())
        children = _split_children(g, split, thresholds.split_factor, rng)
        new = GaussianSet.concat([g.subset(keep), g.subset(clone), children])
        # row provenance for moment / offset remapping; -1 = fresh row
        source = np.concatenate([keep, clone, np.repeat(split, 2)])
        fresh = np.concatenate([np.zeros(len(keep), bool), np.ones(len(clone) + 2 * len(split), bool)])
        if k is None:
            graph.background = new
        else:
            node = graph.nodes[k]
            node.gaussians = new
            if node.kind is NodeKind.DEFORMABLE:
                node.offsets = node.offsets[:, source]
                node.local_rotations = node.local_rotations[:, source]
        for name in PARAM_GROUPS + ("offsets",):
            mk = (key, name)
            if mk not in state.m:
                continue
            axis = 1 if name == "offsets" else 0
            for store in (state.m, state.v):
                arr = np.take(store[mk], source, axis=axis)
                idx = [slice(None)] * arr.ndim
                idx[axis] = fresh
                arr[tuple(idx)] = 0.0
                store[mk] = arr
        state.grad_accum[key] = np.zeros(len(new))
        state.grad_count[key] = np.zeros(len(new))
    return graph, state, report


def init_from_points(points, colors=None, intensities=None, degrees=None, max_points=None,
                     rng=None, default_scale=0.05, raydrop=0.1):
    """One primitive per (optionally subsampled) point.

    Scales are the mean distance to the three nearest neighbours; the tangent
    plane is the local PCA plane when enough neighbours exist. Opacity starts
    at 0.5 (logit 0); degree-0 SH terms reproduce the point colour/intensity.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(pts):
        raise ContractViolation("cannot initialise from an empty point set")
    sel = np.arange(len(pts))
    if max_points is not None and len(pts) > max_points:
        rng = np.random.default_rng(0) if rng is None else rng
        sel = np.sort(rng.choice(len(pts), max_points, replace=False))
    pts = pts[sel]
    n = len(pts)
    if n > 1:
        tree = cKDTree(pts)
        kq = min(4, n)
        dist, _ = tree.query(pts, k=kq)
        scale = dist[:, 1:].mean(axis=1)
        scale = np.where(scale > 0, scale, default_scale)
    else:
        scale = np.full(1, default_scale)
    normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    if n >= 3:
        _, nb = cKDTree(pts).query(pts, k=min(8, n))
        local = pts[nb] - pts[nb].mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", local, local)
        _, vecs = np.linalg.eigh(cov)
        normals = vecs[:, :, 0]
    tu, tv = tangent_frame_from_normal(normals)
    col = None if colors is None else np.clip(np.asarray(colors, float).reshape(-1, 3)[sel], 0, 1)
    inten = None
    if intensities is not None:
        inten = np.clip(np.asarray(intensities, float).ravel()[sel], 1e-4, 1 - 1e-4)
    g = GaussianSet.from_activated(pts, tu, tv, np.stack([scale, scale], axis=1), 0.5,
                                   colors=col, intensities=inten, raydrops=raydrop,
                                   degrees=degrees)
    return g


@dataclass
class FitConfig:
    iterations: int = 30000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    scale_center_lr_by_extent: bool = True
    center_lr_final: float = 1.0    # centre lr decays exponentially to this fraction
    sh_rest_lr: float = 1.0         # relative lr of higher-order SH coefficients
    densify_every: int = 500
    densify_from: int = 500
    densify_until: int = 15000
    densify: DensifyThresholds = field(default_factory=DensifyThresholds)
    k_buffer: int = 16
    background: tuple = (0.0, 0.0, 0.0)
    optimize_poses: bool = False
    checkpoint_every: int = 0
    log_every: int = 100


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    densify_events: list = field(default_factory=list)

    def losses(self):
        return np.array([r["total"] for r in self.records])

    def to_lines(self):
        cols = ["iteration", "total"] + list(TERMS) + ["primitives"]
        lines = ["\t".join(cols)]
        for r in self.records:
            lines.append("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                                   for c in cols))
        return lines


def scene_extent(graph):
    g = flatten(graph, graph.keyframes[0] if len(graph.keyframes) else 0.0).gaussians
    if not len(g):
        return 1.0
    c = g.center
    return float(1.1 * np.linalg.norm(c - c.mean(axis=0), axis=1).max()) or 1.0


def render_batch(world, batch, k_buffer=16, background=0.0):
    fbs = [rasterize(world, obs.camera, background=background) for obs in batch.cameras]
    ri = None
    if batch.lidar is not None:
        rays = generate_rays(batch.lidar.lidar, batch.timestamp)
        proxies, tree = build_bvh(world)
        ri = trace(rays, tree, proxies, world, k=k_buffer)
    return Rendered(fbs, ri)


def backward_batch(world, batch, rendered, loss):
    """World-space gradients plus the camera-only positional gradient norms."""
    grads = world.zeros_like()
    screen = np.zeros(len(world))
    for fb, obs, gc in zip(rendered.cameras, batch.cameras, loss.camera_grads):
        gcam = rasterize_backward(world, fb, gc.get("g_color"), gc.get("g_depth"), None,
                                  gc.get("g_normal"))
        for name in PARAM_GROUPS:
            getattr(grads, name)[...] += getattr(gcam, name)
        # positional gradient per pixel of screen motion, in NDC-like units
        cam = obs.camera
        z = np.maximum(cam.to_camera(world.center)[:, 2], 1e-6)
        screen += np.linalg.norm(gcam.center, axis=1) * z / cam.fx * (0.5 * cam.width)
    if rendered.lidar is not None and loss.lidar_grads is not None:
        gl = trace_backward(world, rendered.lidar, loss.lidar_grads["g_depth"],
                            loss.lidar_grads["g_intensity"], loss.lidar_grads["g_raydrop"])
        for name in PARAM_GROUPS:
            getattr(grads, name)[...] += getattr(gl, name)
    return grads, screen


def fit(graph, dataset, config=FitConfig(), checkpoint=None, progress=None):
    """Optimise ``graph`` (in a copy) against the training frames of ``dataset``.

    ``checkpoint(graph, iteration)`` is called every ``config.checkpoint_every``
    iterations when given. Returns ``(fitted graph, TrainingLog)``.
    """
    frames = [b for b in dataset if b.split == "train"]
    if not frames:
        raise ContractViolation("dataset has no training frames")
    graph = graph.copy()
    tlog = TrainingLog()
    if config.iterations <= 0:
        return graph, tlog
    rng = np.random.default_rng(config.seed)
    state = OptState(lr=dict(config.lr), sh_rest_ratio=config.sh_rest_lr)
    extent = scene_extent(graph)
    center_lr = config.lr["center"] * (extent if config.scale_center_lr_by_extent else 1.0)
    thresholds = DensifyThresholds(**{**asdict(config.densify), "extent": extent})
    order = []
    for it in range(1, config.iterations + 1):
        if not order:
            order = list(rng.permutation(len(frames)))
        batch = frames[order.pop()]
        progress_frac = (it - 1) / max(config.iterations - 1, 1)
        state.lr["center"] = center_lr * config.center_lr_final ** progress_frac
        flat = flatten(graph, batch.timestamp)
        world = flat.gaussians
        rendered = render_batch(world, batch, config.k_buffer, config.background)
        loss = compute_loss(rendered, batch, config.weights, with_grad=True)
        if not np.isfinite(loss.total):
            raise NonFiniteError(f"non-finite loss at iteration {it}", iteration=it)
        gw, screen = backward_batch(world, batch, rendered, loss)
        cg = pull_back(graph, flat, gw)
        try:
            step(graph, cg, state, config.optimize_poses)
        except NonFiniteError as exc:
            exc.iteration = it
            raise
        _accumulate_stats(graph, flat, screen, state)
        tlog.records.append(dict(iteration=it, total=loss.total, **loss.terms,
                                 primitives=len(graph)))
        if (config.densify_every and config.densify_from <= it <= config.densify_until
                and it % config.densify_every == 0):
            before = len(graph)
            graph, state, rep = densify_and_prune(graph, state, thresholds, rng)
            tlog.densify_events.append(dict(iteration=it, before=before, after=len(graph),
                                            **asdict(rep)))
        if checkpoint is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            checkpoint(graph, it)
        if progress is not None and (it % config.log_every == 0 or it == config.iterations):
            progress(it, loss)
    return graph, tlog


def _accumulate_stats(graph, flat, screen, state):
    sizes = graph.sizes()
    bounds = np.cumsum([0] + sizes)
    keys = ["bg"] + [_node_key(k) for k in range(len(graph.nodes))]
    for key, lo, hi in zip(keys, bounds[:-1], bounds[1:]):
        s = screen[lo:hi]
        acc = state.grad_accum.setdefault(key, np.zeros(hi - lo))
        cnt = state.grad_count.setdefault(key, np.zeros(hi - lo))
        seen = s > 0
        acc[seen] += s[seen]
        cnt[seen] += 1


def evaluate_loss(graph, batch, weights=LossWeights(), k_buffer=16, background=0.0):
    """Forward-only loss for one batch (used by gradient checks and reports)."""
    world = flatten(graph, batch.timestamp).gaussians
    rendered = render_batch(world, batch, k_buffer, background)
    return compute_loss(rendered, batch, weights)


def jitter_centers(graph, sigma, rng):
    """Copy of ``graph`` with every canonical centre perturbed by N(0, sigma^2)."""
    g = graph.copy()
    for gs in [g.background] + [n.gaussians for n in g.nodes]:
        gs.center[...] += rng.normal(0.0, sigma, gs.center.shape)
    return g


__all__ = ["OptState", "adam_step", "step", "densify_and_prune", "init_from_points", "fit",
           "FitConfig", "TrainingLog", "DensifyThresholds", "DensifyReport", "C0", "logit",
           "sigmoid", "jitter_centers", "render_batch", "backward_batch", "evaluate_loss"]
