import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from helpers import random_splats
from surfelsim.errors import ContractViolation, OutOfRangeError
from surfelsim.gaussians import GaussianSet
from surfelsim.scene_graph import (BACKGROUND, NodeKind, SceneGraph, SceneNode, flatten,
                                   invert_provenance, pull_back, rigid_node)
from surfelsim.transforms import RigidPose, interpolate_pose


def one_at_origin():
    return GaussianSet.from_activated([[0.0, 0, 0]], [1, 0, 0], [0, 1, 0], 0.1, 0.5)


def test_background_only_passes_through():
    bg = random_splats(np.random.default_rng(0), 6)
    flat = flatten(SceneGraph(bg), 3.7)
    for name, arr in bg.items():
        np.testing.assert_array_equal(getattr(flat.gaussians, name), arr)
    assert invert_provenance(SceneGraph(bg), 0) == (BACKGROUND, 0)


def test_constant_translation():
    node = rigid_node(one_at_origin(), [0.0, 1.0], [[1, 0, 0], [1, 0, 0]])
    graph = SceneGraph(GaussianSet.empty(), [node], [0.0, 1.0])
    np.testing.assert_allclose(flatten(graph, 0.4).gaussians.center[0], [1, 0, 0])


def test_midpoint_translation_is_lerped():
    node = rigid_node(one_at_origin(), [2.0, 4.0], [[0, 0, 0], [2, 0, 0]])
    graph = SceneGraph(GaussianSet.empty(), [node], [2.0, 4.0])
    np.testing.assert_allclose(flatten(graph, 3.0).gaussians.center[0], [1, 0, 0], atol=1e-15)


def test_out_of_range_time():
    node = rigid_node(one_at_origin(), [0.0, 1.0], [[0, 0, 0], [1, 0, 0]])
    graph = SceneGraph(GaussianSet.empty(), [node], [0.0, 1.0])
    with pytest.raises(OutOfRangeError):
        flatten(graph, 1.5)
    with pytest.raises(OutOfRangeError):
        interpolate_pose(node.poses, -0.1)


def test_empty_graph_flattens_to_empty_set():
    assert len(flatten(SceneGraph(GaussianSet.empty()), 0.0)) == 0


def test_provenance_offsets():
    rng = np.random.default_rng(1)
    node = rigid_node(random_splats(rng, 3), [0.0], [[0, 0, 0]])
    graph = SceneGraph(random_splats(rng, 5), [node], [0.0])
    assert invert_provenance(graph, 6) == (0, 1)
    with pytest.raises(IndexError):
        invert_provenance(graph, 8)


def test_bad_graphs_rejected():
    with pytest.raises(ContractViolation):
        SceneGraph(GaussianSet.empty(), [], [1.0, 0.5])
    node = rigid_node(one_at_origin(), [0.0, 1.0], [[0, 0, 0]] * 2)
    with pytest.raises(ContractViolation):
        SceneGraph(GaussianSet.empty(), [node], [0.0, 2.0])
    with pytest.raises(ContractViolation):
        RigidPose((0, 0, 0, 2.0))


def random_graph(seed):
    rng = np.random.default_rng(seed)
    keys = np.sort(rng.uniform(0, 10, 3)) + np.arange(3)
    rigid = rigid_node(random_splats(rng, int(rng.integers(1, 6))), keys,
                       rng.normal(size=(3, 3)), Rotation.random(3, random_state=seed).as_quat())
    n_def = int(rng.integers(1, 5))
    poses = [RigidPose(q, t, float(k)) for q, t, k in
             zip(Rotation.random(3, random_state=seed + 1).as_quat(), rng.normal(size=(3, 3)), keys)]
    deform = SceneNode(NodeKind.DEFORMABLE, random_splats(rng, n_def), poses,
                       rng.normal(size=(3, n_def, 3)) * 0.1,
                       Rotation.random(3 * n_def, random_state=seed + 2).as_quat()
                       .reshape(3, n_def, 4))
    return SceneGraph(random_splats(rng, int(rng.integers(0, 6))), [rigid, deform], keys), rng


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_provenance_round_trip(seed):
    graph, _ = random_graph(seed)
    flat = flatten(graph, graph.keyframes[1])
    for i in range(len(flat)):
        assert invert_provenance(graph, i) == (flat.node_id[i], flat.local_index[i])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), w=st.floats(0, 1))
def test_rigid_motion_invariants(seed, w):
    graph, _ = random_graph(seed)
    t = (1 - w) * graph.keyframes[0] + w * graph.keyframes[-1]
    flat = flatten(graph, t).gaussians
    n_bg = len(graph.background)
    rig = graph.nodes[0].gaussians
    world = flat.center[n_bg:n_bg + len(rig)]
    d0 = np.linalg.norm(rig.center[:, None] - rig.center[None], axis=-1)
    d1 = np.linalg.norm(world[:, None] - world[None], axis=-1)
    np.testing.assert_allclose(d1, d0, atol=1e-9)
    tu, tv = flat.tangent_u, flat.tangent_v
    assert np.abs(np.linalg.norm(tu, axis=1) - 1).max() < 1e-6
    assert np.abs(np.linalg.norm(tv, axis=1) - 1).max() < 1e-6
    assert np.abs(np.sum(tu * tv, axis=1)).max() < 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_keyframe_reproduces_pose_exactly(seed):
    graph, _ = random_graph(seed)
    node = graph.nodes[0]
    for k, t in enumerate(graph.keyframes):
        flat = flatten(graph, t).gaussians
        n_bg = len(graph.background)
        expect = node.poses[k].apply(node.gaussians.center)
        np.testing.assert_array_equal(flat.center[n_bg:n_bg + len(node.gaussians)], expect)


def test_flatten_is_bitwise_deterministic():
    graph, _ = random_graph(5)
    a = flatten(graph, 7.3).gaussians
    b = flatten(graph, 7.3).gaussians
    for name, arr in a.items():
        assert arr.tobytes() == getattr(b, name).tobytes()


def test_pull_back_matches_finite_differences():
    """Linear world loss sum(G * x) differentiated through flatten."""
    graph, rng = random_graph(11)
    t = 0.3 * graph.keyframes[0] + 0.7 * graph.keyframes[1]
    flat = flatten(graph, t)
    W = flat.gaussians.zeros_like()
    for name, arr in W.items():
        arr[:] = rng.normal(size=arr.shape)

    def loss(g):
        f = flatten(g, t).gaussians
        return sum(np.sum(getattr(f, n) * a) for n, a in W.items())

    cg = pull_back(graph, flat, W)
    h = 1e-6
    checks = [(graph.nodes[0].gaussians.center, cg.nodes[0].center),
              (graph.nodes[1].gaussians.center, cg.nodes[1].center),
              (graph.nodes[1].gaussians.tangent_u, cg.nodes[1].tangent_u),
              (graph.nodes[1].offsets, cg.offsets[1])]
    for param, grad in checks:
        flat_p = param.reshape(-1)
        for i in range(flat_p.size):
            o = flat_p[i]
            flat_p[i] = o + h
            lp = loss(graph)
            flat_p[i] = o - h
            lm = loss(graph)
            flat_p[i] = o
            assert (lp - lm) / (2 * h) == pytest.approx(grad.reshape(-1)[i], abs=1e-6)
