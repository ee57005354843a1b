"""Static background plus time-indexed rigid and deformable nodes.

Node primitives live in their canonical frame. :func:`flatten` deforms and
moves them into world space for a query time and keeps enough bookkeeping to
send world-space gradients back to canonical parameters.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, OutOfRangeError
from .gaussians import GaussianSet
from .transforms import TIME_EPS, RigidPose, bracket, interpolate_pose, quat_to_matrix, slerp_batch

BACKGROUND = -1


class NodeKind(enum.Enum):
    BACKGROUND = "background"
    RIGID = "rigid"
    DEFORMABLE = "deformable"


@dataclass
class SceneNode:
    kind: NodeKind
    gaussians: GaussianSet
    poses: list = field(default_factory=list)   # RigidPose per keyframe
    offsets: np.ndarray = None                  # (K, n, 3) deformable only
    local_rotations: np.ndarray = None          # (K, n, 4) scalar-last quaternions
    name: str = ""

    def validate(self, n_keyframes):
        n = len(self.gaussians)
        if self.kind is NodeKind.BACKGROUND:
            raise ContractViolation("background primitives belong in SceneGraph.background")
        if len(self.poses) != n_keyframes:
            raise ContractViolation(f"node {self.name!r}: {len(self.poses)} poses for "
                                    f"{n_keyframes} keyframes")
        if self.kind is NodeKind.DEFORMABLE:
            if self.offsets is None:
                self.offsets = np.zeros((n_keyframes, n, 3))
            if self.local_rotations is None:
                self.local_rotations = np.tile([0.0, 0, 0, 1], (n_keyframes, n, 1))
            self.offsets = np.asarray(self.offsets, dtype=np.float64)
            self.local_rotations = np.asarray(self.local_rotations, dtype=np.float64)
            if self.offsets.shape != (n_keyframes, n, 3):
                raise ContractViolation(f"node {self.name!r}: offset table shape "
                                        f"{self.offsets.shape}, expected {(n_keyframes, n, 3)}")
            if self.local_rotations.shape != (n_keyframes, n, 4):
                raise ContractViolation(f"node {self.name!r}: bad local rotation table shape")
        elif self.offsets is not None:
            raise ContractViolation("only deformable nodes carry offsets")


@dataclass
class SceneGraph:
    background: GaussianSet
    nodes: list = field(default_factory=list)
    keyframes: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.keyframes = np.asarray(self.keyframes, dtype=np.float64).ravel()
        if np.any(np.diff(self.keyframes) <= 0):
            raise ContractViolation("keyframe timestamps must be strictly increasing")
        if self.nodes and not len(self.keyframes):
            raise ContractViolation("movable nodes need keyframes")
        for node in self.nodes:
            node.validate(len(self.keyframes))
            for pose, t in zip(node.poses, self.keyframes):
                if pose.timestamp is None or abs(pose.timestamp - t) > TIME_EPS:
                    raise ContractViolation(f"node {node.name!r}: pose timestamps do not "
                                            "match the keyframes")

    @property
    def degrees(self):
        return self.background.degrees

    def sizes(self):
        return [len(self.background)] + [len(n.gaussians) for n in self.nodes]

    def __len__(self):
        return sum(self.sizes())

    def copy(self):
        nodes = [SceneNode(n.kind, n.gaussians.copy(), list(n.poses),
                           None if n.offsets is None else n.offsets.copy(),
                           None if n.local_rotations is None else n.local_rotations.copy(),
                           n.name) for n in self.nodes]
        return SceneGraph(self.background.copy(), nodes, self.keyframes.copy())

    def check_time(self, t):
        if len(self.keyframes) and (t < self.keyframes[0] - TIME_EPS
                                    or t > self.keyframes[-1] + TIME_EPS):
            raise OutOfRangeError(f"time {t} outside keyframe range "
                                  f"[{self.keyframes[0]}, {self.keyframes[-1]}]")

    def flatten(self, t):
        return flatten(self, t)

    def invert_provenance(self, index):
        return invert_provenance(self, index)


@dataclass
class FlatScene:
    """World-space primitives at one time plus per-primitive provenance."""

    gaussians: GaussianSet
    node_id: np.ndarray      # BACKGROUND or index into graph.nodes
    local_index: np.ndarray
    time: float
    transforms: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.gaussians)


def flatten(graph, t):
    """World-space primitive set at time ``t``.

    Background passes through; rigid nodes get the pose interpolated at ``t``
    (slerp/lerp between bracketing keyframes); deformable nodes first add
    their interpolated per-primitive offsets and local rotations.
    """
    graph.check_time(t)
    parts = [graph.background]
    node_id = [np.full(len(graph.background), BACKGROUND)]
    local = [np.arange(len(graph.background))]
    transforms = []
    for k, node in enumerate(graph.nodes):
        g = node.gaussians
        pose = interpolate_pose(node.poses, t)
        R = pose.matrix
        i, w = bracket(graph.keyframes, t)
        exact = np.flatnonzero(graph.keyframes == t)
        if len(exact):
            i, w = int(exact[0]), 0.0
        info = dict(R=R, i=i, w=w)
        center = g.center
        tu, tv = g.tangent_u, g.tangent_v
        if node.kind is NodeKind.DEFORMABLE:
            if w == 0.0:
                off = node.offsets[i]
                Q = quat_to_matrix(node.local_rotations[i])
            else:
                off = (1 - w) * node.offsets[i] + w * node.offsets[i + 1]
                Q = quat_to_matrix(slerp_batch(node.local_rotations[i],
                                               node.local_rotations[i + 1], w))
            center = center + off
            tu = np.einsum("nij,nj->ni", Q, tu)
            tv = np.einsum("nij,nj->ni", Q, tv)
            info["Q"] = Q
        parts.append(g.replace(center=center @ R.T + pose.translation,
                               tangent_u=tu @ R.T, tangent_v=tv @ R.T))
        node_id.append(np.full(len(g), k))
        local.append(np.arange(len(g)))
        transforms.append(info)
    return FlatScene(GaussianSet.concat(parts, graph.degrees), np.concatenate(node_id),
                     np.concatenate(local), float(t), transforms)


def invert_provenance(graph, index):
    """``(node id, local index)`` of a flattened primitive; BACKGROUND is -1."""
    sizes = graph.sizes()
    if not 0 <= index < sum(sizes):
        raise IndexError(f"world index {index} out of range for {sum(sizes)} primitives")
    start = 0
    for node, n in zip([BACKGROUND] + list(range(len(graph.nodes))), sizes):
        if index < start + n:
            return node, index - start
        start += n
    raise AssertionError("unreachable")


@dataclass
class CanonicalGrads:
    """Gradients on the graph's canonical parameters."""

    background: GaussianSet
    nodes: list                 # GaussianSet per node
    offsets: list               # (K, n, 3) array per node or None
    translations: list          # (K, 3) per node


def pull_back(graph, flat, world_grads):
    """Map world-space gradients from a :class:`FlatScene` to canonical space."""
    sizes = graph.sizes()
    bounds = np.cumsum([0] + sizes)
    bg = world_grads.subset(slice(bounds[0], bounds[1]))
    nodes, offsets, trans = [], [], []
    K = len(graph.keyframes)
    for k, node in enumerate(graph.nodes):
        gw = world_grads.subset(slice(bounds[k + 1], bounds[k + 2]))
        info = flat.transforms[k]
        R, i, w = info["R"], info["i"], info["w"]
        g_center = gw.center @ R
        g_tu = gw.tangent_u @ R
        g_tv = gw.tangent_v @ R
        if node.kind is NodeKind.DEFORMABLE:
            Q = info["Q"]
            g_tu = np.einsum("nij,ni->nj", Q, g_tu)
            g_tv = np.einsum("nij,ni->nj", Q, g_tv)
            g_off = np.zeros((K, len(node.gaussians), 3))
            g_off[i] += (1 - w) * g_center
            if w > 0:
                g_off[i + 1] += w * g_center
            offsets.append(g_off)
        else:
            offsets.append(None)
        g_t = np.zeros((K, 3))
        total = gw.center.sum(axis=0)
        g_t[i] += (1 - w) * total
        if w > 0:
            g_t[i + 1] += w * total
        trans.append(g_t)
        nodes.append(gw.replace(center=g_center, tangent_u=g_tu, tangent_v=g_tv))
    return CanonicalGrads(bg, nodes, offsets, trans)


def rigid_node(gaussians, keyframes, translations, rotations=None, name="rigid"):
    """Convenience constructor: one pose per keyframe from translations (+ quaternions)."""
    keyframes = np.asarray(keyframes, dtype=np.float64)
    if rotations is None:
        rotations = [(0.0, 0.0, 0.0, 1.0)] * len(keyframes)
    poses = [RigidPose(q, tr, float(t)) for q, tr, t in zip(rotations, translations, keyframes)]
    return SceneNode(NodeKind.RIGID, gaussians, poses, name=name)
