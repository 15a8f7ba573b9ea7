import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from realosr import ValidationError
from realosr.resample import cubic_kernel, resize_matrix, resize_to, sample_bicubic


def test_cubic_kernel_interpolates_nodes():
    assert cubic_kernel(0.0) == 1.0
    np.testing.assert_array_equal(cubic_kernel(np.array([1.0, 2.0, -1.0, 2.5])), 0.0)


@given(st.floats(0, 1, exclude_max=True))
def test_cubic_kernel_partition_of_unity(frac):
    taps = cubic_kernel(frac - np.arange(-1, 3))
    assert abs(taps.sum() - 1.0) < 1e-12


def test_integer_coordinates_return_pixels(rng):
    img = rng.random((2, 7, 9))
    r, c = np.mgrid[0:7, 0:9]
    np.testing.assert_allclose(sample_bicubic(img, r, c), img, atol=1e-12)


def test_constant_image_any_coordinates(rng):
    img = np.full((3, 6, 6), 0.37)
    rows, cols = rng.uniform(-3, 9, (2, 50))
    np.testing.assert_allclose(sample_bicubic(img, rows, cols), 0.37, atol=1e-12)


def test_linear_ramp_half_pixel_midpoint():
    img = np.tile(np.arange(10.0) * 0.1, (1, 10, 1))
    out = sample_bicubic(img, np.array([4.0]), np.array([4.5]))
    assert abs(out[0, 0] - 0.45) < 1e-9


def test_wrap_columns_cross_the_seam():
    img = np.zeros((1, 4, 8))
    img[0, :, 0] = 1.0
    # half-way between the last and first column
    out = sample_bicubic(img, np.array([1.0]), np.array([7.5]), col_boundary="wrap")
    assert 0.4 < out[0, 0] < 0.7


def test_unknown_boundary_rejected():
    with pytest.raises(ValidationError):
        sample_bicubic(np.zeros((1, 4, 4)), np.zeros(1), np.zeros(1), row_boundary="mirror")


@pytest.mark.parametrize("mode", ["bicubic", "bilinear", "area"])
@pytest.mark.parametrize("n_in,n_out", [(16, 4), (4, 16), (9, 9), (10, 7)])
def test_resize_rows_sum_to_one(mode, n_in, n_out):
    np.testing.assert_allclose(resize_matrix(n_in, n_out, mode).sum(axis=1), 1.0, atol=1e-12)


def test_resize_identity_and_constant(rng):
    img = rng.random((3, 12, 20))
    np.testing.assert_allclose(resize_to(img, (12, 20)), img, atol=1e-12)
    np.testing.assert_allclose(resize_to(np.full((1, 8, 8), 0.3), (5, 13), "area"), 0.3, atol=1e-12)


def test_area_downscale_by_two_is_block_mean(rng):
    img = rng.random((1, 8, 8))
    expected = img.reshape(1, 4, 2, 4, 2).mean(axis=(2, 4))
    np.testing.assert_allclose(resize_to(img, (4, 4), "area"), expected, atol=1e-12)
