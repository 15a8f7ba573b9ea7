import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from realosr import ConfigurationError, CoverageError, OutOfHemisphereError, TangentGrid, TangentProjector
from realosr.data import natural_erp, smooth_latitude_gradient
from realosr.metrics import ws_psnr
from realosr.sphere import (
    TangentViewSet,
    erp_latlon,
    erp_to_fisheye,
    erp_to_tangent,
    fisheye_to_erp,
    fusion_weights,
    gnomonic_forward,
    gnomonic_inverse,
    tangent_to_erp,
)


def _vec(lat, lon):
    return np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


def gnomonic_oracle(point, center):
    """Central projection onto the tangent plane via explicit 3-D vectors."""
    p, c = _vec(*point), _vec(*center)
    east = np.array([-np.sin(center[1]), np.cos(center[1]), 0.0])
    north = np.cross(c, east)
    t = p / (p @ c)
    return t @ east, t @ north


def _random_pairs(rng, n):
    centers = np.column_stack([rng.uniform(-1.5, 1.5, n), rng.uniform(-np.pi, np.pi, n)])
    pts = []
    for lat0, lon0 in centers:
        while True:
            lat, lon = rng.uniform(-np.pi / 2, np.pi / 2), rng.uniform(-np.pi, np.pi)
            cos_c = np.sin(lat0) * np.sin(lat) + np.cos(lat0) * np.cos(lat) * np.cos(lon - lon0)
            if cos_c > 0.05:
                pts.append((lat, lon))
                break
    return np.array(pts), centers


# ---------------------------------------------------------------- gnomonic

def test_forward_tangent_point_is_origin():
    assert gnomonic_forward((0.0, 0.0), (0.0, 0.0)) == pytest.approx((0.0, 0.0), abs=1e-15)


@pytest.mark.parametrize("point,expected", [((0.0, np.pi / 4), (1.0, 0.0)), ((np.pi / 4, 0.0), (0.0, 1.0))])
def test_forward_closed_form(point, expected):
    assert gnomonic_forward(point, (0.0, 0.0)) == pytest.approx(expected, abs=1e-12)


def test_forward_matches_vector_oracle(rng):
    pts, centers = _random_pairs(rng, 200)
    for p, c in zip(pts, centers):
        assert gnomonic_forward(p, c) == pytest.approx(gnomonic_oracle(p, c), abs=1e-10)


def test_forward_rejects_far_hemisphere():
    with pytest.raises(OutOfHemisphereError):
        gnomonic_forward((0.0, np.pi), (0.0, 0.0))
    with pytest.raises(OutOfHemisphereError):
        gnomonic_forward((0.0, np.pi / 2), (0.0, 0.0))


def test_inverse_examples():
    assert gnomonic_inverse(0.0, 0.0, (0.3, 1.1)) == pytest.approx((0.3, 1.1), abs=1e-15)
    assert gnomonic_inverse(1.0, 0.0, (0.0, 0.0)) == pytest.approx((0.0, np.pi / 4), abs=1e-12)


def _ang_err(a, b):
    dlat = np.abs(a[0] - b[0])
    dlon = np.abs(np.angle(np.exp(1j * (a[1] - b[1]))))
    return max(dlat, dlon * np.cos(a[0]))


def test_round_trip_1000_points_10_centers(rng):
    worst = 0.0
    for _ in range(10):
        pts, centers = _random_pairs(rng, 100)
        for p, c in zip(pts, centers):
            back = gnomonic_inverse(*gnomonic_forward(p, c), c)
            worst = max(worst, _ang_err(p, back))
    assert worst < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-3.1, 3.1), st.floats(-5, 5), st.floats(-5, 5))
def test_inverse_then_forward_is_identity(lat0, lon0, u, v):
    lat, lon = gnomonic_inverse(u, v, (lat0, lon0))
    assert gnomonic_forward((lat, lon), (lat0, lon0)) == pytest.approx((u, v), abs=1e-8)


# ---------------------------------------------------------------- grid

def test_default_grid_layout():
    grid = TangentGrid()
    assert grid.M == 18 and grid.patch_size == 128
    assert grid.check_coverage(180)


def test_grid_without_poles_fails_coverage():
    grid = TangentGrid(TangentGrid().centers[2:])
    with pytest.raises(ConfigurationError):
        grid.check_coverage()


@pytest.mark.parametrize("fov", [0.0, np.pi, -1.0])
def test_grid_rejects_bad_fov(fov):
    with pytest.raises(ConfigurationError):
        TangentGrid(fov=fov)


def test_grid_text_round_trip():
    grid = TangentGrid(patch_size=64)
    back = TangentGrid.from_text("# comment\n" + grid.to_text())
    np.testing.assert_allclose(back.centers, grid.centers, atol=1e-12)
    assert back.fov == pytest.approx(grid.fov) and back.patch_size == 64


def test_grid_text_errors():
    with pytest.raises(ConfigurationError):
        TangentGrid.from_text("fov 80\n")
    with pytest.raises(ConfigurationError):
        TangentGrid.from_text("center 10\n")
    with pytest.raises(ConfigurationError):
        TangentGrid.from_text("tilt 3\ncenter 0 0\n")


# ---------------------------------------------------------------- ERP <-> TP

def test_erp_to_tangent_shapes():
    vs = erp_to_tangent(np.full((3, 32, 64), 0.2), TangentGrid(), 1)
    assert vs.views.shape == (18, 3, 128, 128)
    assert len(vs) == 18 and vs.valid_mask.shape == (18, 128, 128)


def test_constant_round_trip_exact():
    grid = TangentGrid(patch_size=32)
    vs = erp_to_tangent(np.full((3, 32, 64), 0.5), grid, 2)
    np.testing.assert_allclose(vs.views, 0.5, atol=1e-6)
    np.testing.assert_allclose(tangent_to_erp(vs, 32, 2), 0.5, atol=1e-6)


def test_fusion_weights_sum_to_one():
    w = fusion_weights(TangentGrid(patch_size=32), 40)
    assert w.shape == (18, 40, 80)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-6)
    assert w.min() >= 0


def test_masked_pixels_never_contribute():
    grid = TangentGrid(patch_size=32)
    vs = erp_to_tangent(np.full((1, 32, 64), 0.5), grid, 1)
    views = vs.views.copy()
    mask = np.ones_like(vs.valid_mask)
    mask[3, :, :16] = False
    views[3][:, :, :16] = 100.0  # garbage behind the mask
    out = tangent_to_erp(TangentViewSet(views, grid, mask), 32, 1)
    assert out.max() < 1.0


def test_coverage_error_when_all_masked():
    grid = TangentGrid(patch_size=16)
    vs = TangentViewSet(np.zeros((18, 1, 16, 16)), grid, np.zeros((18, 16, 16), bool))
    with pytest.raises(CoverageError):
        tangent_to_erp(vs, 16, 1)


def test_latitude_gradient_round_trip_regression():
    erp = smooth_latitude_gradient(128)
    out = tangent_to_erp(erp_to_tangent(erp, TangentGrid(patch_size=96), 2), 128, 2)
    assert ws_psnr(erp, out) >= 40.0


def test_projection_is_deterministic(astronaut_erp):
    grid = TangentGrid(patch_size=32)
    a = erp_to_tangent(astronaut_erp, grid).views
    b = erp_to_tangent(astronaut_erp, grid).views
    assert np.array_equal(a, b)


def test_view_center_samples_tangent_point():
    # a single bright ERP pixel near (lat 25, lon 0) shows up at the center of the view centered there
    h = 90
    erp = np.zeros((1, h, 2 * h))
    lat, lon = erp_latlon(h)
    i = int(np.argmin(np.abs(lat[:, 0] - np.deg2rad(25))))
    j = int(np.argmin(np.abs(lon[0])))
    erp[0, i - 1:i + 2, j - 1:j + 2] = 1.0
    grid = TangentGrid(np.array([[lat[i, 0], lon[0, j]]]), patch_size=33)
    view = erp_to_tangent(erp, TangentGrid(np.vstack([grid.centers, TangentGrid().centers]), patch_size=33), 1)
    assert view.views[0, 0, 16, 16] == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- fisheye

def test_fisheye_constant_round_trip():
    erp = np.full((3, 32, 64), 0.7)
    pair = erp_to_fisheye(erp, 32)
    np.testing.assert_allclose(fisheye_to_erp(pair, 32), 0.7, atol=1e-6)


def test_fisheye_pole_at_disc_center():
    h = 64
    erp = np.zeros((1, h, 2 * h))
    lat, lon = erp_latlon(h)
    # mark the front hemisphere pole (lat 0, lon 0) neighbourhood
    near = (np.abs(lat) < 0.06) & (np.abs(lon) < 0.06)
    erp[0][near] = 1.0
    pair = erp_to_fisheye(erp, 64)
    cy, cx = np.unravel_index(np.argmax(pair.front[0]), pair.front[0].shape)
    assert abs(cy - 31.5) <= 1 and abs(cx - 31.5) <= 1
    assert pair.mask[32, 32] and not pair.mask[0, 0]
    assert pair.focal == pytest.approx(64 / np.pi)


def test_fisheye_round_trip_regression():
    erp = natural_erp(256)
    back = fisheye_to_erp(erp_to_fisheye(erp, 256), 256)
    assert ws_psnr(erp, back) >= 28.0


# ---------------------------------------------------------------- estimator

def test_projector_estimator(astronaut_erp):
    proj = TangentProjector(TangentGrid(patch_size=32))
    assert proj.get_params()["pre_upsample"] == 2
    views = proj.fit(astronaut_erp).transform(astronaut_erp)
    out = proj.inverse_transform(views)
    assert out.shape == astronaut_erp.shape
    assert ws_psnr(astronaut_erp, out) > 25
    proj2 = TangentProjector(TangentGrid(patch_size=32), output_scale=2).fit(astronaut_erp)
    assert proj2.inverse_transform(views).shape == (3, 128, 256)
