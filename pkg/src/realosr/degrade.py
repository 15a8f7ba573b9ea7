"""Seeded real-world degradation synthesis on fisheye hemispheres.

A pair is produced as ``ERP -> fisheye -> [blur, resize, noise, JPEG] (x1 or x2)
-> final resize -> ERP``. Every random draw is recorded in a stage log, and
:func:`replay` reproduces the LR image from the HR image and the log alone.
"""

import io
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from PIL import Image
from scipy.ndimage import convolve

from ._validation import ConfigurationError, ValidationError, check_erp, check_image, check_unit_interval
from .resample import resize_to
from .sphere import erp_to_fisheye, fisheye_to_erp

__all__ = [
    "DegradationParams",
    "DegradationConfig",
    "PairRecord",
    "gaussian_kernel",
    "apply_blur",
    "add_noise",
    "jpeg_roundtrip",
    "resize",
    "sample_stages",
    "degrade_raster",
    "replay",
    "synthesize_pair",
    "degradation_level",
    "PRESETS",
    "synthesize_dataset",
]


@dataclass(frozen=True)
class DegradationParams:
    """Noise and blur levels ``d = [d_n, d_b]`` in [0, 1]."""

    d_n: float
    d_b: float

    def __post_init__(self):
        check_unit_interval([self.d_n, self.d_b], "degradation params")

    def as_array(self):
        return np.array([self.d_n, self.d_b])

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64).ravel()
        return cls(float(arr[0]), float(arr[1]))


def _check_range(name, rng, lo=0.0, hi=math.inf):
    a, b = rng
    if not (lo <= a <= b <= hi):
        raise ConfigurationError(f"{name} range {rng} must satisfy {lo} <= low <= high <= {hi}")


@dataclass(frozen=True)
class DegradationConfig:
    """Real-ESRGAN-style two-order degradation recipe at desk resolution.

    Sigmas are in pixels of the fisheye raster being degraded; noise levels are
    standard deviations on the [0, 1] intensity scale.
    """

    scale: int = 4
    blur_prob: float = 1.0
    blur_sigma: tuple = (0.2, 3.0)
    blur_sigma2: tuple = (0.2, 1.5)
    aniso_prob: float = 0.3
    resize_prob: float = 1.0
    resize_range: tuple = (0.3, 1.5)
    resize_range2: tuple = (0.5, 1.2)
    resize_modes: tuple = ("area", "bilinear", "bicubic")
    noise_prob: float = 1.0
    noise_sigma: tuple = (0.0, 0.1)
    noise_sigma2: tuple = (0.0, 0.1)
    poisson_prob: float = 0.4
    jpeg_prob: float = 1.0
    jpeg_quality: tuple = (30, 95)
    jpeg_quality2: tuple = (30, 95)
    second_order_prob: float = 0.5
    final_mode: str = "bicubic"
    fisheye_side: int = 0  # 0: use the HR ERP height

    def __post_init__(self):
        if int(self.scale) != self.scale or self.scale < 1:
            raise ConfigurationError("scale must be an integer >= 1")
        for name in ("blur_prob", "aniso_prob", "resize_prob", "noise_prob", "poisson_prob",
                     "jpeg_prob", "second_order_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        _check_range("blur_sigma", self.blur_sigma, 0.0, 10.0)
        _check_range("blur_sigma2", self.blur_sigma2, 0.0, 10.0)
        _check_range("resize_range", self.resize_range, 0.05, 4.0)
        _check_range("resize_range2", self.resize_range2, 0.05, 4.0)
        _check_range("noise_sigma", self.noise_sigma, 0.0, 1.0)
        _check_range("noise_sigma2", self.noise_sigma2, 0.0, 1.0)
        _check_range("jpeg_quality", self.jpeg_quality, 1, 100)
        _check_range("jpeg_quality2", self.jpeg_quality2, 1, 100)
        if not self.resize_modes or any(m not in ("area", "bilinear", "bicubic") for m in self.resize_modes):
            raise ConfigurationError(f"invalid resize modes {self.resize_modes}")

    @classmethod
    def preset(cls, name, **overrides):
        try:
            base = PRESETS[name]
        except KeyError:
            raise ConfigurationError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        return replace(base, **overrides)

    @classmethod
    def skeleton(cls, scale=4):
        """All stochastic stages off: the pipeline reduces to projection plus final resize."""
        return cls(scale=scale, blur_prob=0.0, resize_prob=0.0, noise_prob=0.0, jpeg_prob=0.0,
                   second_order_prob=0.0)

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "default": DegradationConfig(),
    "severe": DegradationConfig(noise_sigma=(0.05, 0.2), noise_sigma2=(0.03, 0.15),
                                jpeg_quality=(10, 40), jpeg_quality2=(10, 40),
                                second_order_prob=0.8),
}


# --------------------------------------------------------------------------- stages

def gaussian_kernel(sigma_x, sigma_y=None, theta=0.0, size=None):
    """Normalized (possibly anisotropic, rotated) Gaussian kernel of odd ``size``."""
    sigma_y = sigma_x if sigma_y is None else sigma_y
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValidationError("blur sigmas must be positive")
    if size is None:
        size = min(21, 2 * math.ceil(3 * max(sigma_x, sigma_y)) + 1)
    r = size // 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    c, s = math.cos(theta), math.sin(theta)
    xr, yr = c * x + s * y, -s * x + c * y
    k = np.exp(-0.5 * ((xr / sigma_x) ** 2 + (yr / sigma_y) ** 2))
    return k / k.sum()


def apply_blur(img, kernel):
    """Convolve every channel with ``kernel`` using reflect padding."""
    img = check_image(img)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or abs(kernel.sum() - 1.0) > 1e-6:
        raise ValidationError(f"blur kernel must be 2-D and sum to 1 (sum={kernel.sum():.6g})")
    return np.stack([convolve(ch, kernel, mode="reflect") for ch in img])


def add_noise(img, kind="gaussian", level=0.0, seed=0, clip=True):
    """Add seeded Gaussian or Poisson noise.

    ``level`` is the noise standard deviation; for Poisson noise it is the
    standard deviation at intensity 0.5 (photon count ``0.5 / level**2``).
    """
    img = check_image(img)
    if level < 0:
        raise ValidationError("noise level must be >= 0")
    if level == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        out = img + rng.normal(0.0, level, size=img.shape)
    elif kind == "poisson":
        peak = 0.5 / level ** 2
        out = rng.poisson(np.clip(img, 0, None) * peak) / peak
    else:
        raise ValidationError(f"unknown noise kind {kind!r}")
    return np.clip(out, 0.0, 1.0) if clip else out


def jpeg_roundtrip(img, quality):
    """Encode to baseline JPEG at ``quality`` and decode (8-bit, 4:2:0 for RGB)."""
    img = check_image(img)
    if not 1 <= quality <= 100:
        raise ValidationError("JPEG quality must lie in [1, 100]")
    u8 = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    pil = Image.fromarray(u8[0] if len(u8) == 1 else u8.transpose(1, 2, 0))
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality))
    dec = np.asarray(Image.open(io.BytesIO(buf.getvalue())), dtype=np.float64) / 255.0
    return dec[None] if dec.ndim == 2 else dec.transpose(2, 0, 1)


def resize(img, scale, mode="bicubic"):
    """Rescale by ``scale``; output size ``round(n * scale)`` (pixel-center aligned)."""
    img = check_image(img)
    _, h, w = img.shape
    size = (max(1, round(h * scale)), max(1, round(w * scale)))
    if scale <= 0 or round(h * scale) < 1 or round(w * scale) < 1:
        raise ValidationError(f"scale {scale} produces an empty image from {h}x{w}")
    return resize_to(img, size, mode)


# --------------------------------------------------------------------------- pipeline

def _order(cfg, rng, second):
    sig = cfg.blur_sigma2 if second else cfg.blur_sigma
    res = cfg.resize_range2 if second else cfg.resize_range
    noi = cfg.noise_sigma2 if second else cfg.noise_sigma
    jpg = cfg.jpeg_quality2 if second else cfg.jpeg_quality
    order = 2 if second else 1
    stages = []
    if rng.random() < cfg.blur_prob:
        if rng.random() < cfg.aniso_prob:
            sx, sy = (float(v) for v in rng.uniform(*sig, size=2))
            theta = float(rng.uniform(0, np.pi))
        else:
            sx = sy = float(rng.uniform(*sig))
            theta = 0.0
        stages.append({"op": "blur", "order": order, "sigma_x": sx, "sigma_y": sy, "theta": theta})
    if rng.random() < cfg.resize_prob:
        # second-order sizes are relative to the final LR size, as in Real-ESRGAN
        stages.append({"op": "resize", "order": order, "scale": float(rng.uniform(*res)),
                       "relative_to": "target" if second else "input",
                       "mode": str(cfg.resize_modes[rng.integers(len(cfg.resize_modes))])})
    if rng.random() < cfg.noise_prob:
        kind = "poisson" if rng.random() < cfg.poisson_prob else "gaussian"
        stages.append({"op": "noise", "order": order, "kind": kind,
                       "level": float(rng.uniform(*noi)),
                       "seeds": [int(s) for s in rng.integers(0, 2 ** 31, size=2)]})
    if rng.random() < cfg.jpeg_prob:
        stages.append({"op": "jpeg", "order": order,
                       "quality": int(rng.integers(jpg[0], jpg[1] + 1))})
    return stages


def sample_stages(cfg, seed):
    """Draw the full ordered stage log for one pair."""
    rng = np.random.default_rng(seed)
    stages = _order(cfg, rng, second=False)
    if rng.random() < cfg.second_order_prob:
        stages += _order(cfg, rng, second=True)
    stages.append({"op": "final_resize", "scale": cfg.scale, "mode": cfg.final_mode})
    return stages


def degrade_raster(img, stages, target_size, hemisphere=0):
    """Apply ``stages`` to one planar raster; ``final_resize`` goes to ``target_size``."""
    out = check_image(img)
    for st in stages:
        op = st["op"]
        if op == "blur":
            out = apply_blur(out, gaussian_kernel(st["sigma_x"], st["sigma_y"], st["theta"]))
        elif op == "resize":
            if st.get("relative_to") == "target":
                size = tuple(max(1, round(n * st["scale"])) for n in target_size)
                out = resize_to(out, size, st["mode"])
            else:
                out = resize(out, st["scale"], st["mode"])
        elif op == "noise":
            out = add_noise(out, st["kind"], st["level"], st["seeds"][hemisphere])
        elif op == "jpeg":
            out = jpeg_roundtrip(out, st["quality"])
        elif op == "final_resize":
            out = resize_to(out, target_size, st["mode"])
        else:
            raise ValidationError(f"unknown stage {op!r}")
        out = np.clip(out, 0.0, 1.0)
    return out


def _combined(values):
    return math.sqrt(sum(v * v for v in values))


def _normalize(value, lo, hi):
    if hi - lo < 1e-12:
        return 1.0 if hi > 0 and value >= hi - 1e-12 else 0.0
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def degradation_level(stages, cfg):
    """Map a stage log to ``d = [d_n, d_b]``.

    Total blur (noise) is the root-sum-square of the per-order effective sigmas,
    min-max normalized between the smallest first-order value and the largest
    value the config can produce.
    """
    blur = [math.sqrt((s["sigma_x"] ** 2 + s["sigma_y"] ** 2) / 2) for s in stages if s["op"] == "blur"]
    noise = [s["level"] for s in stages if s["op"] == "noise"]
    two = cfg.second_order_prob > 0
    b_lo = cfg.blur_sigma[0] if cfg.blur_prob > 0 else 0.0
    b_hi = _combined([cfg.blur_sigma[1]] + ([cfg.blur_sigma2[1]] if two else [])) if cfg.blur_prob > 0 else 0.0
    n_lo = cfg.noise_sigma[0] if cfg.noise_prob > 0 else 0.0
    n_hi = _combined([cfg.noise_sigma[1]] + ([cfg.noise_sigma2[1]] if two else [])) if cfg.noise_prob > 0 else 0.0
    return DegradationParams(_normalize(_combined(noise), n_lo, n_hi),
                             _normalize(_combined(blur), b_lo, b_hi))


@dataclass
class PairRecord:
    hr: np.ndarray
    lr: np.ndarray
    params: DegradationParams
    seed: int
    stages: list = field(default_factory=list)
    scale: int = 4

    def meta(self, name=None):
        out = {"seed": self.seed, "scale": self.scale,
               "d": [self.params.d_n, self.params.d_b], "stages": self.stages}
        if name is not None:
            out = {"name": name, **out}
        return out


def replay(hr_erp, stages, scale, fisheye_side=0):
    """Recompute the LR ERP from the HR ERP and a stage log."""
    hr = check_erp(hr_erp)
    h = hr.shape[1]
    if h % scale:
        raise ValidationError(f"ERP height {h} is not divisible by scale {scale}")
    side = fisheye_side or h
    if side % scale:
        raise ValidationError(f"fisheye side {side} is not divisible by scale {scale}")
    pair = erp_to_fisheye(hr, side)
    target = (side // scale, side // scale)
    hemis = [degrade_raster(img, stages, target, i) for i, img in enumerate(pair.hemispheres())]
    return np.clip(fisheye_to_erp(pair.replace(*hemis), h // scale), 0.0, 1.0)


def synthesize_pair(hr_erp, cfg=None, seed=0):
    """Degrade one HR ERP into a :class:`PairRecord` (deterministic in ``seed``)."""
    cfg = PRESETS["default"] if cfg is None else cfg
    hr = check_erp(hr_erp)
    stages = sample_stages(cfg, seed)
    lr = replay(hr, stages, cfg.scale, cfg.fisheye_side)
    return PairRecord(hr, lr, degradation_level(stages, cfg), int(seed), stages, cfg.scale)


def synthesize_dataset(images, out_dir, cfg=None, seed=0, fit_to_scale=True):
    """Write ``hr/``, ``lr/`` and ``meta/pairs.jsonl`` for ``(name, erp)`` items.

    Item ``i`` uses seed ``seed + i``. HR images whose height is not a multiple
    of ``2 * scale`` are resized down to the nearest multiple when ``fit_to_scale``.
    HR values are quantized to 8 bits first so the stored pair is consistent.
    """
    import json
    from pathlib import Path

    from .io import dataset_paths, write_png

    cfg = PRESETS["default"] if cfg is None else cfg
    paths = dataset_paths(out_dir)
    for p in paths.values():
        p.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, erp) in enumerate(images):
        erp = check_erp(erp)
        h = erp.shape[1]
        step = 2 * cfg.scale
        if h % step:
            if not fit_to_scale:
                raise ValidationError(f"{name}: height {h} is not a multiple of {step}")
            h -= h % step
            erp = resize_to(erp, (h, 2 * h), "bicubic", col_boundary="wrap")
        erp = np.round(np.clip(erp, 0.0, 1.0) * 255) / 255
        rec = synthesize_pair(erp, cfg, seed + i)
        write_png(paths["hr"] / f"{name}.png", rec.hr)
        write_png(paths["lr"] / f"{name}.png", rec.lr)
        lines.append(json.dumps(rec.meta(name), sort_keys=True))
    (paths["meta"] / "pairs.jsonl").write_text("\n".join(lines) + "\n")
    return paths
