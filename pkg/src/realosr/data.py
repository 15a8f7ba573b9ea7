"""Bundled natural test imagery and synthetic ERP panoramas for desk-scale runs."""

from functools import lru_cache

import numpy as np
from skimage import data as skdata

from .resample import resize_to

NATURAL_IMAGES = ("astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field",
                  "immunohistochemistry", "camera", "brick", "grass", "gravel")


def natural_image(name="astronaut"):
    """A scikit-image sample image as a (3, H, W) float array in [0, 1]."""
    return _natural_image(name).copy()


@lru_cache(maxsize=None)
def _natural_image(name):
    img = np.asarray(getattr(skdata, name)(), dtype=np.float64) / 255.0
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    out = np.ascontiguousarray(img[..., :3].transpose(2, 0, 1))
    out.setflags(write=False)
    return out


def natural_erp(h=256, name="astronaut"):
    """Natural image resized to an ``h x 2h`` ERP raster."""
    return np.clip(resize_to(natural_image(name), (h, 2 * h), "bicubic"), 0.0, 1.0)


def smooth_latitude_gradient(h, channels=3):
    """Analytic ERP image varying smoothly with latitude only."""
    lat = np.pi / 2 - (np.arange(h) + 0.5) / h * np.pi
    ramp = 0.5 + 0.4 * np.sin(lat)
    img = np.broadcast_to(ramp[:, None], (h, 2 * h))
    return np.stack([img * (0.8 + 0.1 * c) for c in range(channels)])


def band_limited_image(h, w, channels=3, seed=0, cycles=3):
    """Sum of a few low-frequency sinusoids, values inside [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w]
    out = np.zeros((channels, h, w))
    for c in range(channels):
        for _ in range(4):
            fy, fx = rng.uniform(0, cycles, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            out[c] += np.cos(2 * np.pi * (fy * y / h + fx * x / w) + phase)
    return 0.5 + 0.1 * out


def synthetic_panoramas(n, h=128, seed=0):
    """``n`` ERP panoramas assembled from bundled images with random crops, rolls and flips."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        name = NATURAL_IMAGES[rng.integers(len(NATURAL_IMAGES))]
        img = _natural_image(name)
        _, ih, iw = img.shape
        ch = int(rng.integers(ih // 2, ih + 1))
        cw = min(iw, 2 * ch)
        top = int(rng.integers(0, ih - ch + 1))
        left = int(rng.integers(0, iw - cw + 1))
        crop = img[:, top:top + ch, left:left + cw]
        if rng.random() < 0.5:
            crop = crop[:, :, ::-1]
        pano = resize_to(crop, (h, 2 * h), "bicubic")
        pano = np.roll(pano, int(rng.integers(0, 2 * h)), axis=2)
        out.append(np.clip(pano, 0.0, 1.0))
    return out


def random_crops(n, size, seed=0):
    """``n`` square crops (3, size, size) from the bundled images."""
    rng = np.random.default_rng(seed)
    crops = []
    for _ in range(n):
        img = _natural_image(NATURAL_IMAGES[rng.integers(len(NATURAL_IMAGES))])
        _, ih, iw = img.shape
        top = int(rng.integers(0, ih - size + 1))
        left = int(rng.integers(0, iw - size + 1))
        crops.append(img[:, top:top + size, left:left + size].copy())
    return crops
