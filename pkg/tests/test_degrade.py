import json

import numpy as np
import pytest

from realosr import PRESETS, ConfigurationError, DegradationConfig, DegradationParams, ValidationError, synthesize_pair
from realosr.data import band_limited_image, natural_image
from realosr.degrade import (
    add_noise,
    apply_blur,
    degradation_level,
    gaussian_kernel,
    jpeg_roundtrip,
    replay,
    resize,
    sample_stages,
    synthesize_dataset,
)
from realosr.metrics import psnr
from realosr.resample import resize_to
from realosr.sphere import erp_to_fisheye, fisheye_to_erp


# ---------------------------------------------------------------- blur

def test_delta_kernel_is_identity(rng):
    img = rng.random((3, 16, 16))
    delta = np.zeros((5, 5))
    delta[2, 2] = 1.0
    np.testing.assert_allclose(apply_blur(img, delta), img, atol=1e-9)


def test_blur_keeps_constants():
    k = gaussian_kernel(1.3, 0.6, 0.7)
    np.testing.assert_allclose(apply_blur(np.full((2, 12, 12), 0.42), k), 0.42, atol=1e-12)


def test_gaussian_impulse_ratio():
    img = np.zeros((1, 41, 41))
    img[0, 20, 20] = 1.0
    out = apply_blur(img, gaussian_kernel(2.0))
    assert out[0, 20, 21] / out[0, 20, 20] == pytest.approx(np.exp(-1 / (2 * 2.0 ** 2)), abs=1e-6)


def test_anisotropic_kernel_orientation():
    k = gaussian_kernel(3.0, 0.5, 0.0, size=15)
    assert k[7, 10] > k[10, 7]  # wider along x
    k90 = gaussian_kernel(3.0, 0.5, np.pi / 2, size=15)
    np.testing.assert_allclose(k90, k.T, atol=1e-12)


def test_blur_rejects_unnormalized_kernel():
    with pytest.raises(ValidationError):
        apply_blur(np.zeros((1, 8, 8)), np.ones((3, 3)))


# ---------------------------------------------------------------- noise

def test_noise_zero_level_identity(rng):
    img = rng.random((3, 8, 8))
    np.testing.assert_array_equal(add_noise(img, "gaussian", 0.0, 3), img)


@pytest.mark.parametrize("kind", ["gaussian", "poisson"])
def test_noise_seeded_and_clipped(rng, kind):
    img = rng.random((3, 32, 32))
    a = add_noise(img, kind, 0.2, seed=9)
    assert np.array_equal(a, add_noise(img, kind, 0.2, seed=9))
    assert not np.array_equal(a, add_noise(img, kind, 0.2, seed=10))
    assert a.min() >= 0 and a.max() <= 1


def test_gaussian_noise_std():
    out = add_noise(np.full((1, 256, 256), 0.5), "gaussian", 0.1, seed=0, clip=False)
    assert 0.095 <= out.std() <= 0.105


def test_poisson_noise_std_at_half():
    out = add_noise(np.full((1, 256, 256), 0.5), "poisson", 0.05, seed=0, clip=False)
    assert out.std() == pytest.approx(0.05, rel=0.05)


def test_noise_rejects_bad_input():
    with pytest.raises(ValidationError):
        add_noise(np.zeros((1, 4, 4)), "gaussian", -0.1)
    with pytest.raises(ValidationError):
        add_noise(np.zeros((1, 4, 4)), "salt", 0.1)


# ---------------------------------------------------------------- jpeg / resize

def test_jpeg_quality_ordering_and_floor():
    img = natural_image("astronaut")[:, :128, :128]
    assert psnr(img, jpeg_roundtrip(img, 100)) >= 40.0
    assert psnr(img, jpeg_roundtrip(img, 30)) < psnr(img, jpeg_roundtrip(img, 90))


@pytest.mark.parametrize("q", [1, 5, 30, 50, 60, 75, 90, 100])
@pytest.mark.parametrize("value", [0.1, 0.37, 0.6, 0.93])
def test_jpeg_constant_image(q, value):
    out = jpeg_roundtrip(np.full((3, 16, 16), value), q)
    assert np.ptp(out) == 0.0  # DC-only blocks decode flat
    if q >= 60:
        # below this the DC quantizer step alone exceeds one code value
        np.testing.assert_allclose(out, value, atol=1 / 255 + 1e-12)


def test_jpeg_deterministic(rng):
    img = rng.random((3, 16, 16))
    assert np.array_equal(jpeg_roundtrip(img, 40), jpeg_roundtrip(img, 40))


def test_resize_examples(rng):
    img = rng.random((3, 10, 14))
    np.testing.assert_allclose(resize(img, 1.0), img, atol=1e-12)
    np.testing.assert_allclose(resize(np.full((1, 10, 10), 0.2), 0.37, "area"), 0.2, atol=1e-12)
    band = band_limited_image(64, 64, seed=2)
    assert psnr(band, resize(resize(band, 0.5), 2.0)) >= 35.0
    with pytest.raises(ValidationError):
        resize(img, 0.01)


# ---------------------------------------------------------------- config / levels

def test_config_validation():
    with pytest.raises(ConfigurationError):
        DegradationConfig(scale=0)
    with pytest.raises(ConfigurationError):
        DegradationConfig(blur_sigma=(2.0, 1.0))
    with pytest.raises(ConfigurationError):
        DegradationConfig(jpeg_quality=(0, 50))
    with pytest.raises(ConfigurationError):
        DegradationConfig.preset("brutal")
    assert DegradationConfig.preset("severe", scale=2).scale == 2


def test_params_invariant():
    with pytest.raises(ValidationError):
        DegradationParams(1.2, 0.0)
    assert DegradationParams.from_array([0.3, 0.7]).as_array().tolist() == [0.3, 0.7]


def test_max_sigma_and_noise_give_unit_levels():
    cfg = DegradationConfig(blur_sigma=(3.0, 3.0), blur_sigma2=(1.5, 1.5), aniso_prob=0.0,
                            noise_sigma=(0.1, 0.1), noise_sigma2=(0.1, 0.1), second_order_prob=1.0)
    assert degradation_level(sample_stages(cfg, 0), cfg).as_array().tolist() == [1.0, 1.0]


def test_levels_in_unit_square_and_pure():
    cfg = PRESETS["default"]
    for seed in range(50):
        stages = sample_stages(cfg, seed)
        d = degradation_level(stages, cfg).as_array()
        assert np.all((d >= 0) & (d <= 1))
        assert np.array_equal(d, degradation_level(json.loads(json.dumps(stages)), cfg).as_array())


# ---------------------------------------------------------------- pairs

def test_pair_determinism_and_shapes(astronaut_erp):
    a = synthesize_pair(astronaut_erp, seed=4)
    b = synthesize_pair(astronaut_erp, seed=4)
    assert np.array_equal(a.lr, b.lr) and a.stages == b.stages
    assert a.lr.shape == (3, 16, 32)
    assert a.lr.min() >= 0 and a.lr.max() <= 1
    assert not np.array_equal(a.lr, synthesize_pair(astronaut_erp, seed=5).lr)


def test_stage_log_replays_lr(astronaut_erp):
    rec = synthesize_pair(astronaut_erp, PRESETS["severe"], seed=8)
    log = json.loads(json.dumps(rec.meta("x")))
    assert np.array_equal(replay(astronaut_erp, log["stages"], rec.scale), rec.lr)


def test_skeleton_reduces_to_projection_and_resize(astronaut_erp):
    rec = synthesize_pair(astronaut_erp, DegradationConfig.skeleton(4), seed=1)
    pair = erp_to_fisheye(astronaut_erp, 64)
    small = pair.replace(*(np.clip(resize_to(h, (16, 16), "bicubic"), 0, 1) for h in pair.hemispheres()))
    np.testing.assert_array_equal(rec.lr, np.clip(fisheye_to_erp(small, 16), 0, 1))
    assert [s["op"] for s in rec.stages] == ["final_resize"]


def test_pair_rejects_indivisible_height(rng):
    with pytest.raises(ValidationError):
        synthesize_pair(rng.random((3, 30, 60)), seed=0)


def test_dataset_written_and_reproducible(tmp_path, astronaut_erp):
    for run in ("a", "b"):
        synthesize_dataset([("x", astronaut_erp), ("y", astronaut_erp[:, ::-1])], tmp_path / run, seed=3)
    for sub in ("hr/x.png", "lr/y.png", "meta/pairs.jsonl"):
        assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()
    lines = (tmp_path / "a/meta/pairs.jsonl").read_text().splitlines()
    assert [json.loads(l)["seed"] for l in lines] == [3, 4]
