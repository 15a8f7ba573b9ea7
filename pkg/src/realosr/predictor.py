"""Degradation-level estimation: ground-truth oracle or a small learned CNN regressor."""

import numpy as np
import torch
import torch.nn as nn
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ValidationError, check_image
from .data import random_crops
from .degrade import PRESETS, DegradationParams, degradation_level, degrade_raster, sample_stages
from .resample import resize_to

__all__ = ["DegradationPredictor", "estimate_degradation", "make_patches"]


class _Regressor(nn.Module):
    def __init__(self, width=32):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.head = nn.Sequential(nn.Linear(2 * width, width), nn.SiLU(), nn.Linear(width, 2))

    def forward(self, x):
        # high-pass residual carries most of the noise/blur evidence
        hp = x - nn.functional.avg_pool2d(x, 3, 1, 1, count_include_pad=False)
        h = self.features(hp * 10.0)
        pooled = torch.cat([h.mean(dim=(2, 3)), h.std(dim=(2, 3))], dim=1)
        return torch.sigmoid(self.head(pooled))


class DegradationPredictor(RegressorMixin, BaseEstimator):
    """Regress ``d = [d_n, d_b]`` from an LR patch; outputs are squashed into [0, 1].

    ``X`` is an array of (3, h, w) patches, ``y`` an (n, 2) array of levels.
    """

    def __init__(self, width=32, epochs=60, batch_size=32, lr=2e-3, seed=0):
        self.width = width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, X, y):
        X = torch.as_tensor(np.asarray(X, dtype=np.float32))
        y = torch.as_tensor(np.asarray(y, dtype=np.float32))
        if X.dim() != 4 or X.shape[1] != 3 or y.shape != (len(X), 2):
            raise ValidationError("expected X of shape (n, 3, h, w) and y of shape (n, 2)")
        gen = torch.Generator().manual_seed(self.seed)
        torch.manual_seed(self.seed)
        net = _Regressor(self.width)
        opt = torch.optim.Adam(net.parameters(), lr=self.lr)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, self.epochs)
        for _ in range(self.epochs):
            perm = torch.randperm(len(X), generator=gen)
            for i in range(0, len(X), self.batch_size):
                idx = perm[i:i + self.batch_size]
                loss = nn.functional.l1_loss(net(X[idx]), y[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
            sched.step()
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        self.net_ = net
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = np.asarray(X, dtype=np.float32)
        single = X.ndim == 3
        with torch.no_grad():
            out = self.net_(torch.as_tensor(X[None] if single else X)).double().numpy()
        return out[0] if single else out

    def score(self, X, y, sample_weight=None):
        """Negative mean absolute error (higher is better)."""
        return -float(np.mean(np.abs(self.predict(X) - np.asarray(y))))


def make_patches(n, size=64, cfg=None, seed=0, view_upsample=2):
    """Synthetic (patch, d) training pairs from degraded natural crops.

    Crops of ``size * scale`` pixels go through the planar degradation stages,
    land at ``size / view_upsample`` and are bicubic-upsampled back to ``size``,
    imitating LR tangent views that oversample their ERP source.
    """
    cfg = PRESETS["default"] if cfg is None else cfg
    lr_size = size // view_upsample
    crops = random_crops(n, lr_size * cfg.scale, seed)
    X, y = [], []
    for i, crop in enumerate(crops):
        stages = sample_stages(cfg, seed * 100003 + i)
        lr = degrade_raster(crop, stages, (lr_size, lr_size))
        X.append(np.clip(resize_to(lr, (size, size), "bicubic"), 0, 1))
        y.append(degradation_level(stages, cfg).as_array())
    return np.array(X), np.array(y)


def estimate_degradation(lr_view, mode="oracle", record=None, predictor=None):
    """Degradation levels for one LR view."""
    if mode == "oracle":
        if record is None:
            raise ValidationError("oracle degradation estimation requires a PairRecord")
        params = record.params if hasattr(record, "params") else record
        return params if isinstance(params, DegradationParams) else DegradationParams.from_array(params)
    if mode == "learned":
        if predictor is None:
            raise ValidationError("learned degradation estimation requires a fitted DegradationPredictor")
        view = check_image(lr_view, "lr_view")
        return DegradationParams.from_array(np.clip(predictor.predict(view), 0.0, 1.0))
    raise ValidationError(f"unknown estimation mode {mode!r}; expected 'oracle' or 'learned'")
