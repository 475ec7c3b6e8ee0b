import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bevproj.exceptions import FormatError, ValidationError
from bevproj.fields import (
    SIGMA0,
    CombinedProvider,
    ConstantProvider,
    FieldSet,
    LoadedProvider,
    OccluderMaskProvider,
    SlopeOracleProvider,
    ZeroProvider,
    project_params,
    provide_fields,
    save_fields,
)
from bevproj.geometry import BevGridSpec, GroundPlane, build_distance_mask, build_pull_map, surround_rig
from bevproj.sampling import SIGMA_MIN
from bevproj.tensorio import write_tensor


def test_zero_provider(small_cam):
    fs = provide_fields(ZeroProvider(), small_cam, build_distance_mask(small_cam))
    assert np.all(fs.mu_prime == 0) and np.all(fs.alpha_prime == 1)
    np.testing.assert_array_equal(fs.sigma_prime[:, 0, 0], [SIGMA0, 0.0, SIGMA0])


def test_constant_provider_clamps_diagonal(small_cam):
    fs = provide_fields(ConstantProvider(1.0, -2.0, 0.0, 0.3, -1.0, 0.4), small_cam)
    assert fs.sigma_prime[0].min() == pytest.approx(SIGMA_MIN)
    assert fs.sigma_prime[2].min() == pytest.approx(SIGMA_MIN)
    assert np.all(fs.mu_prime[0] == 1.0) and np.all(fs.mu_prime[1] == -2.0)
    assert np.allclose(fs.alpha_prime, 0.4)


def test_slope_oracle_equal_planes_is_zero(small_cam):
    fs = SlopeOracleProvider(GroundPlane.flat(), GroundPlane.flat()).provide(small_cam)
    assert np.all(fs.mu_prime == 0)


def _oracle_offset(rig, u, v, pitch_deg):
    """Closed-form two-projection difference, written without the library's helpers."""
    K = np.array([[rig.fx, 0, rig.cx], [0, rig.fy, rig.cy], [0, 0, 1.0]])
    R, t = rig.pose[:3, :3], rig.pose[:3, 3]
    d = R @ np.linalg.solve(K, [u, v, 1.0])
    s = -t[2] / d[2]
    p = t + s * d  # on z = 0
    q = np.array([p[0], p[1], p[0] * math.tan(math.radians(pitch_deg))])
    c = R.T @ (q - t)
    return np.array([rig.fx * c[0] / c[2] + rig.cx - u, rig.fy * c[1] / c[2] + rig.cy - v])


@pytest.mark.parametrize("u, v", [(10, 30), (31, 25), (50, 39), (0, 22), (63, 35)])
def test_slope_oracle_spot_checks(small_cam, u, v):
    fs = SlopeOracleProvider(GroundPlane.pitched(3.0)).provide(small_cam)
    np.testing.assert_allclose(fs.mu_prime[:, v, u], _oracle_offset(small_cam, u, v, 3.0), atol=1e-4)


def test_slope_oracle_perfection():
    grid = BevGridSpec()
    true = GroundPlane.pitched(3.0)
    for rig in surround_rig():
        pull = build_pull_map(rig, grid)
        target = build_pull_map(rig, grid, true)
        params = project_params(provide_fields(SlopeOracleProvider(true), rig), pull)
        both = params.valid & target.valid
        assert both.sum() > 100
        err = np.linalg.norm(params.mu[both] - target.coords[both], axis=-1)
        assert err.max() < 0.05


def test_occluder_regions(small_cam):
    fs = OccluderMaskProvider(regions=[(2, 3, 5, 4)]).provide(small_cam)
    assert fs.alpha_prime[3:5, 2:6].sum() == 0
    assert fs.alpha_prime.sum() == small_cam.H * small_cam.W - 8
    assert np.all(fs.mu_prime == 0)


def test_occluder_mask_by_camera_name(small_cam):
    m = np.zeros((small_cam.H, small_cam.W), bool)
    m[0, 0] = True
    assert OccluderMaskProvider(mask={"cam": m}).provide(small_cam).alpha_prime[0, 0] == 0
    assert OccluderMaskProvider(mask={"other": m}).provide(small_cam).alpha_prime.min() == 1
    with pytest.raises(FormatError):
        OccluderMaskProvider(mask=np.zeros((2, 2), bool)).provide(small_cam)


def test_combined_takes_geometry_and_confidence(small_cam):
    fs = CombinedProvider(ConstantProvider(2.0, 1.0), ConstantProvider(alpha=0.25)).provide(small_cam)
    assert np.all(fs.mu_prime[0] == 2.0) and np.allclose(fs.alpha_prime, 0.25)


def test_loaded_round_trip(tmp_path, small_cam):
    src = ConstantProvider(0.5, -0.5, 1.5, 0.2, 0.7, 0.6).provide(small_cam)
    save_fields(tmp_path, src, prefix="cam_")
    got = provide_fields(LoadedProvider(tmp_path), small_cam)
    for name in ("mu_prime", "sigma_prime", "alpha_prime"):
        np.testing.assert_array_equal(getattr(got, name), getattr(src, name))


def test_loaded_rejects_bad_shape_and_nan(tmp_path, small_cam):
    fs = ZeroProvider().provide(small_cam)
    save_fields(tmp_path, fs)
    write_tensor(tmp_path / "alpha_prime.bvt", np.ones((3, 3)))
    with pytest.raises(FormatError):
        LoadedProvider(tmp_path).provide(small_cam)
    a = np.ones((small_cam.H, small_cam.W))
    a[1, 1] = np.nan
    write_tensor(tmp_path / "alpha_prime.bvt", a)
    with pytest.raises(ValidationError):
        LoadedProvider(tmp_path).provide(small_cam)


def test_fieldset_validate_ranges():
    fs = FieldSet(np.zeros((2, 2, 2)), np.ones((3, 2, 2)), np.full((2, 2), 1.5))
    with pytest.raises(ValidationError):
        fs.validate()
    with pytest.raises(FormatError):
        FieldSet(np.zeros((2, 2, 2)), np.ones((3, 2, 2)), np.ones((2, 2))).validate(3, 3)


def test_provide_fields_checks_dmask_shape(small_cam):
    with pytest.raises(FormatError):
        provide_fields(ZeroProvider(), small_cam, np.zeros((2, 2)))


# --- project_params ----------------------------------------------------------------

@pytest.fixture
def pull(small_cam):
    return build_pull_map(small_cam, BevGridSpec((0.0, 30.0), (-10.0, 10.0), 0.5))


def test_zero_offsets_keep_pull(small_cam, pull):
    p = project_params(ZeroProvider().provide(small_cam), pull)
    np.testing.assert_array_equal(p.valid, pull.valid)
    np.testing.assert_array_equal(p.mu[p.valid], pull.coords[pull.valid])
    again = project_params(ZeroProvider().provide(small_cam), pull)
    np.testing.assert_array_equal(again.mu[again.valid], p.mu[p.valid])
    assert np.all(np.isnan(p.mu[~p.valid]))


def test_constant_offset(small_cam, pull):
    p = project_params(ConstantProvider(3.0, -2.0).provide(small_cam), pull)
    np.testing.assert_allclose(p.mu[p.valid], pull.coords[p.valid] + (3.0, -2.0), atol=1e-12)
    assert np.all(p.valid <= pull.valid)
    shifted = pull.coords + (3.0, -2.0)
    with np.errstate(invalid="ignore"):
        inside = (shifted[..., 0] <= small_cam.W - 1) & (shifted[..., 1] >= 0)
    np.testing.assert_array_equal(p.valid, pull.valid & inside)


def test_affine_offset_ramp(small_cam, pull):
    fs = ZeroProvider().provide(small_cam)
    u = np.arange(small_cam.W, dtype=np.float32)
    mu = np.zeros_like(fs.mu_prime)
    mu[0] = 0.01 * u - 0.2
    fs = FieldSet(mu, fs.sigma_prime, fs.alpha_prime)
    p = project_params(fs, pull)
    keep = p.valid
    off = p.mu[keep] - pull.coords[keep]
    ramp = 0.01 * pull.coords[keep][:, 0] - 0.2
    np.testing.assert_allclose(off[:, 0], ramp, atol=1e-6)  # float32 field storage
    assert np.abs(off[:, 1]).max() == 0


def test_covariance_sampled_at_updated_location(small_cam, pull):
    fs = ZeroProvider().provide(small_cam)
    mu = np.zeros_like(fs.mu_prime)
    mu[0] = 4.0
    sig = fs.sigma_prime.copy()
    sig[0] = 1.0 + 0.05 * np.arange(small_cam.W)
    p = project_params(FieldSet(mu, sig, fs.alpha_prime), pull)
    keep = p.valid
    at_updated = 1.0 + 0.05 * (pull.coords[keep][:, 0] + 4.0)
    at_pull = 1.0 + 0.05 * pull.coords[keep][:, 0]
    np.testing.assert_allclose(p.sigma[keep][:, 0], at_updated, atol=1e-5)
    assert np.abs(p.sigma[keep][:, 0] - at_pull).min() > 0.19


@given(st.floats(-8, 8), st.floats(-8, 8))
def test_validity_never_grows(du, dv):
    from conftest import forward_camera

    cam = forward_camera(fx=40.0, fy=40.0, cx=31.5, cy=19.5, H=40, W=64, pitch=math.radians(8.0))
    pull = build_pull_map(cam, BevGridSpec((0.0, 30.0), (-10.0, 10.0), 1.0))
    p = project_params(ConstantProvider(du, dv).provide(cam), pull)
    assert np.all(p.valid <= pull.valid)
    assert np.all(p.sigma[p.valid][:, [0, 2]] >= SIGMA_MIN)
