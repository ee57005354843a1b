import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surfelsim.errors import ContractViolation
from surfelsim.gaussians import (Gaussian2D, GaussianSet, SplatLocalPoint, activate,
                                 activate_grad, gaussian_value, orthonormalize, splat_homography,
                                 splat_normal, tangent_frame_from_normal)


def raw(log_scale=(0.0, 0.0), logit=0.0, tu=(1, 0, 0), tv=(0, 1, 0)):
    g = Gaussian2D.create([0, 0, 0], tu, tv)
    return Gaussian2D(g.center, g.tangent_u, g.tangent_v, log_scale[0], log_scale[1], logit,
                      g.sh_color, g.sh_intensity, g.sh_raydrop)


def test_gaussian_value_examples():
    assert gaussian_value(SplatLocalPoint(0, 0)) == 1.0
    assert gaussian_value(SplatLocalPoint(1, 0)) == pytest.approx(0.60653066, abs=1e-8)
    assert gaussian_value((3, 4)) == pytest.approx(3.7267e-6, rel=1e-4)


def test_activate_examples():
    su, sv, a = activate(raw(logit=0.0))
    assert (su, sv, a) == (1.0, 1.0, 0.5)
    assert activate(raw(logit=4.0))[2] == pytest.approx(0.9820, abs=1e-4)


def test_activate_grad_matches_finite_differences():
    g = raw(log_scale=(0.3, -0.7), logit=1.2)
    dsu, dsv, da = activate_grad(g)
    h = 1e-6
    fd_su = (np.exp(0.3 + h) - np.exp(0.3 - h)) / (2 * h)
    fd_a = (activate(raw(logit=1.2 + h))[2] - activate(raw(logit=1.2 - h))[2]) / (2 * h)
    assert dsu == pytest.approx(fd_su, rel=1e-6)
    assert dsv == pytest.approx(np.exp(-0.7), rel=1e-12)
    assert da == pytest.approx(fd_a, rel=1e-6)


def test_splat_normal_examples():
    np.testing.assert_allclose(splat_normal(raw()), [0, 0, 1])
    np.testing.assert_allclose(splat_normal(raw(tu=(0, 1, 0), tv=(1, 0, 0))), [0, 0, -1])


def test_splat_normal_faces_viewer():
    n = splat_normal(raw(), view_dir=[0, 0, 1])
    np.testing.assert_allclose(n, [0, 0, -1])


def test_parallel_tangents_rejected():
    with pytest.raises(ContractViolation):
        splat_normal(raw(tv=(1, 0, 0)))
    with pytest.raises(ContractViolation):
        orthonormalize([[1.0, 0, 0]], [[2.0, 0, 0]])


def test_frame_check_and_shape_validation():
    with pytest.raises(ContractViolation):
        raw(tv=(0.5, 1, 0)).check_frame()
    with pytest.raises(ContractViolation):
        Gaussian2D.create([0, 0])


def test_create_decodes_degree0_values():
    g = Gaussian2D.create([1, 2, 3], scale=(0.2, 0.5), opacity=0.8, color=(0.1, 0.6, 0.9),
                          intensity=0.6, raydrop=0.1)
    assert g.scale_u == pytest.approx(0.2) and g.scale_v == pytest.approx(0.5)
    assert g.opacity == pytest.approx(0.8)
    from surfelsim.sh import eval_sh
    np.testing.assert_allclose(eval_sh(g.sh_color, [0, 0, 1]), [0.1, 0.6, 0.9], atol=1e-12)
    assert eval_sh(g.sh_intensity, [1, 0, 0])[0] == pytest.approx(0.6)
    assert eval_sh(g.sh_raydrop, [1, 0, 0])[0] == pytest.approx(0.1)


def test_homography_maps_local_to_world():
    g = Gaussian2D.create([1, 2, 3], (0, 1, 0), (0, 0, 1), scale=(0.5, 2.0))
    x = splat_homography(g) @ np.array([1.0, 1.0, 1.0, 1.0])
    np.testing.assert_allclose(x, [1, 2.5, 5, 1])


def test_set_roundtrip_through_items():
    rng = np.random.default_rng(0)
    tu, tv = tangent_frame_from_normal(rng.normal(size=(5, 3)))
    gs = GaussianSet.from_activated(rng.normal(size=(5, 3)), tu, tv, 0.3, 0.7)
    back = GaussianSet.from_gaussians(list(gs), gs.degrees)
    for name, arr in gs.items():
        np.testing.assert_array_equal(arr, getattr(back, name))


floats = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(r1=st.floats(0, 50), r2=st.floats(0, 50))
def test_gaussian_monotone_in_radius(r1, r2):
    g1 = gaussian_value((np.sqrt(r1), 0.0))
    g2 = gaussian_value((0.0, np.sqrt(r2)))
    if r1 < r2:
        assert g1 >= g2
    assert g1 <= 1.0
    if r1 > 1e-12:  # below this exp rounds to exactly 1
        assert g1 < 1.0
    else:
        assert r1 > 0 or g1 == 1.0


@settings(max_examples=50, deadline=None)
@given(a=floats, b=floats)
def test_activate_strictly_monotone(a, b):
    if abs(a - b) < 1e-9:  # below float resolution of exp/sigmoid
        return
    lo, hi = sorted([a, b])
    s_lo, _, al_lo = activate(raw(log_scale=(lo, lo), logit=lo))
    s_hi, _, al_hi = activate(raw(log_scale=(hi, hi), logit=hi))
    assert s_lo < s_hi
    assert al_lo < al_hi


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_normal_orthogonal_to_random_frames(seed):
    rng = np.random.default_rng(seed)
    tu, tv = orthonormalize(rng.normal(size=(1, 3)), rng.normal(size=(1, 3)))
    g = raw(tu=tu[0], tv=tv[0])
    n = splat_normal(g, view_dir=rng.normal(size=3))
    assert abs(n @ g.tangent_u) < 1e-6 and abs(n @ g.tangent_v) < 1e-6
    assert abs(np.linalg.norm(n) - 1) < 1e-12
