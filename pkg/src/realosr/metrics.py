"""Spherically weighted and planar fidelity metrics on [0, 1] images."""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ._validation import ValidationError, check_image, check_positive_int, check_same_shape

PSNR_CAP = 99.0  # reported for identical images
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11 x 11 window

METRIC_COLUMNS = ("ws_psnr", "ws_ssim", "psnr", "ssim")


def ws_weights(h):
    """Cosine-latitude weight per ERP row, shape (h, 1)."""
    h = check_positive_int(h, "h")
    i = np.arange(h)
    return np.cos((i + 0.5 - h / 2) * np.pi / h)[:, None]


def _pair(ref, test):
    check_same_shape(ref, test)
    return check_image(ref, "ref"), check_image(test, "test")


def _psnr_from_mse(mse):
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ws_psnr(ref, test):
    ref, test = _pair(ref, test)
    w = np.broadcast_to(ws_weights(ref.shape[1]), ref.shape[1:])
    err = ((ref - test) ** 2).mean(axis=0)
    return _psnr_from_mse(float((w * err).sum() / w.sum()))


def psnr(ref, test):
    ref, test = _pair(ref, test)
    return _psnr_from_mse(float(((ref - test) ** 2).mean()))


def ssim_map(ref, test):
    """Per-pixel SSIM averaged over channels, shape (H, W).

    Gaussian 11x11 window (sigma 1.5) with reflect padding.
    """
    ref, test = _pair(ref, test)
    blur = lambda x: gaussian_filter(x, SSIM_SIGMA, mode="reflect", truncate=SSIM_RADIUS / SSIM_SIGMA,
                                     axes=(1, 2))
    mu_x, mu_y = blur(ref), blur(test)
    sxx = blur(ref * ref) - mu_x ** 2
    syy = blur(test * test) - mu_y ** 2
    sxy = blur(ref * test) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den).mean(axis=0)


def ssim(ref, test):
    return float(ssim_map(ref, test).mean())


def ws_ssim(ref, test):
    smap = ssim_map(ref, test)
    w = np.broadcast_to(ws_weights(smap.shape[0]), smap.shape)
    return float((w * smap).sum() / w.sum())


def compute_all(ref, test):
    return {"ws_psnr": ws_psnr(ref, test), "ws_ssim": ws_ssim(ref, test),
            "psnr": psnr(ref, test), "ssim": ssim(ref, test)}


@dataclass
class MetricReport:
    """Per-image metric rows plus their dataset mean."""

    names: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def add(self, name, ref, test):
        self.names.append(name)
        self.rows.append(compute_all(ref, test))

    def mean(self):
        if not self.rows:
            raise ValidationError("metric report is empty")
        return {k: float(np.mean([r[k] for r in self.rows])) for k in METRIC_COLUMNS}

    def to_csv(self, path, extra=None):
        """Write one row per image and a trailing ``mean`` row.

        ``extra`` adds constant columns (e.g. the ablation variant) to every row.
        Learned perceptual metrics are reported as ``unavailable``.
        """
        import csv

        extra = dict(extra or {})
        header = ["image", *extra, *METRIC_COLUMNS, "lpips"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for name, row in zip(self.names, self.rows):
                writer.writerow([name, *extra.values(), *(f"{row[k]:.6f}" for k in METRIC_COLUMNS),
                                 "unavailable"])
            mean = self.mean()
            writer.writerow(["mean", *extra.values(), *(f"{mean[k]:.6f}" for k in METRIC_COLUMNS),
                             "unavailable"])
