"""Losses, the adversarial training loop, evaluation and the DUIG ablation harness."""

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigurationError, ValidationError, check_erp
from .data import random_crops
from .denoiser import RealOSRNet, realosr_pipeline
from .duig import VARIANTS
from .io import dataset_paths, file_sha256, load_checkpoint, read_dataset_meta, read_png, save_checkpoint, state_hash
from .metrics import METRIC_COLUMNS, MetricReport
from .resample import resize_to
from .sphere import TangentGrid, erp_to_tangent

__all__ = [
    "LossWeights",
    "charbonnier_loss",
    "perceptual_proxy_loss",
    "PatchDiscriminator",
    "gan_losses",
    "combine_losses",
    "total_loss",
    "TrainConfig",
    "TrainResult",
    "load_dataset",
    "view_pairs",
    "pretrained_autoencoder_state",
    "build_model",
    "train",
    "evaluate",
    "ablate",
    "RealOSR",
]

log = logging.getLogger(__name__)

PERCEPTUAL_NOTE = "perceptual term = multi-scale Sobel gradient L1 proxy (no pretrained LPIPS network)"


# --------------------------------------------------------------------------- losses

@dataclass(frozen=True)
class LossWeights:
    rec: float = 2.0
    perc: float = 5.0
    gan: float = 0.5

    def __post_init__(self):
        for name in ("rec", "perc", "gan"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")


def _check_pair(pred, gt):
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(gt.shape)}")


def charbonnier_loss(pred, gt, eps=1e-3):
    """Mean of ``sqrt((pred - gt)^2 + eps^2)``."""
    _check_pair(pred, gt)
    return torch.sqrt((pred - gt) ** 2 + eps * eps).mean()


_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0


def _sobel(x):
    c = x.shape[1]
    kx = _SOBEL_X.to(x.dtype)
    k = torch.stack([kx, kx.T])[:, None].repeat(c, 1, 1, 1)
    xp = F.pad(x, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(xp, k, groups=c)


def perceptual_proxy_loss(pred, gt, scales=3):
    """Mean over dyadic scales of the L1 distance between Sobel gradients."""
    _check_pair(pred, gt)
    if pred.dim() == 3:
        pred, gt = pred[None], gt[None]
    total = pred.new_zeros(())
    for s in range(scales):
        if s:
            pred = F.avg_pool2d(pred, 2)
            gt = F.avg_pool2d(gt, 2)
        total = total + (_sobel(pred) - _sobel(gt)).abs().mean()
    return total / scales


class PatchDiscriminator(nn.Module):
    """Four strided convolutions producing a map of patch logits."""

    def __init__(self, in_ch=3, width=32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 2 * width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 1, 4, 2, 1),
        )

    def forward(self, x):
        return self.net(x)


def gan_losses(disc, real, fake):
    """Hinge losses ``(g_loss, d_loss)``. Detach ``fake`` yourself for the critic step."""
    d_fake = disc(fake)
    d_loss = F.relu(1.0 - disc(real)).mean() + F.relu(1.0 + d_fake).mean()
    g_loss = -d_fake.mean()
    return g_loss, d_loss


def combine_losses(components, weights):
    return weights.rec * components["rec"] + weights.perc * components["perc"] + weights.gan * components["gan"]


def total_loss(pred, gt, disc=None, weights=None):
    """Weighted reconstruction + perceptual proxy + generator hinge loss.

    Returns ``(total, components)``; a missing discriminator contributes zero.
    """
    weights = LossWeights() if weights is None else weights
    comps = {"rec": charbonnier_loss(pred, gt), "perc": perceptual_proxy_loss(pred, gt)}
    comps["gan"] = -disc(pred).mean() if disc is not None else pred.new_zeros(())
    return combine_losses(comps, weights), comps


# --------------------------------------------------------------------------- data

def load_dataset(root):
    """``[(name, hr, lr, d), ...]`` from a synthesized dataset directory."""
    paths = dataset_paths(root)
    meta = read_dataset_meta(root)
    items = []
    for hr_path in sorted(paths["hr"].glob("*.png")):
        name = hr_path.stem
        lr_path = paths["lr"] / hr_path.name
        if not lr_path.exists() or name not in meta:
            raise ValidationError(f"dataset item {name!r} is missing its LR image or metadata")
        items.append((name, read_png(hr_path), read_png(lr_path), np.asarray(meta[name]["d"], dtype=np.float64)))
    if not items:
        raise ValidationError(f"no HR/LR pairs found under {root}")
    return items


def view_pairs(items, view_size=64, pre_upsample=2):
    """Aligned (LR view, HR view, d) training triples over the default tangent grid."""
    grid = TangentGrid(patch_size=view_size)
    xs, ys, ds = [], [], []
    for _, hr, lr, d in items:
        xs.append(np.clip(erp_to_tangent(lr, grid, pre_upsample).views, 0, 1))
        ys.append(np.clip(erp_to_tangent(hr, grid, 1).views, 0, 1))
        ds.append(np.repeat(d[None], grid.M, axis=0))
    as_t = lambda a: torch.as_tensor(np.concatenate(a), dtype=torch.float32)
    return as_t(xs), as_t(ys), as_t(ds)


# --------------------------------------------------------------------------- model construction

@lru_cache(maxsize=8)
def pretrained_autoencoder_state(view_size=64, width=32, latent_channels=4, rank=4, seed=0, steps=300):
    """Reconstruction-pretrained autoencoder weights, standing in for a frozen foundation VAE."""
    torch.manual_seed(seed)
    model = RealOSRNet(view_size, width, latent_channels, rank, variant="tp_baseline", seed=seed)
    ae = model.autoencoder
    params = [layer.base.weight for layer in ae.enc] + [layer.base.bias for layer in ae.enc if layer.base.bias is not None]
    params += list(ae.dec.parameters())
    for p in params:
        p.requires_grad_(True)
    opt = torch.optim.Adam(params, lr=2e-3)
    crops = torch.as_tensor(np.array(random_crops(256, view_size, seed=seed + 11)), dtype=torch.float32)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        x = crops[torch.randint(len(crops), (16,), generator=gen)]
        loss = F.l1_loss(ae.decode(ae.encode(x)), x)
        opt.zero_grad()
        loss.backward()
        opt.step()
    log.debug("autoencoder pretraining final L1 %.4f", loss.item())
    return {k: v.detach().clone() for k, v in ae.state_dict().items()}


def build_model(variant="full", view_size=64, width=32, seed=0, ae_mode="learned", ae_steps=300):
    model = RealOSRNet(view_size=view_size, width=width, variant=variant, ae_mode=ae_mode, seed=seed)
    if ae_mode == "learned" and ae_steps > 0:
        model.autoencoder.load_state_dict(
            pretrained_autoencoder_state(view_size, width, model.config["latent_channels"],
                                         model.config["rank"], seed, ae_steps))
    return model


# --------------------------------------------------------------------------- training

@dataclass
class TrainConfig:
    """Documented config-file keys for ``train``."""

    dataset: str = ""
    out_dir: str = "runs/train"
    variant: str = "full"
    steps: int = 200
    lr: float = 1e-5
    batch: int = 4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    view_size: int = 64
    width: int = 32
    disc_lr: float = 1e-5
    ae_steps: int = 300
    pre_upsample: int = 2

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        elif isinstance(self.weights, (list, tuple)):
            self.weights = LossWeights(*self.weights)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("steps", "batch", "view_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not (self.lr > 0 and self.disc_lr > 0):
            raise ConfigurationError("learning rates must be positive")

    @classmethod
    def from_dict(cls, cfg):
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self):
        out = asdict(self)
        out["weights"] = asdict(self.weights)
        return out


@dataclass
class TrainResult:
    model: RealOSRNet
    losses: list
    checkpoint: Path
    n_trainable: int
    frozen_before: str
    frozen_after: str

    @property
    def loss_ratio(self):
        """Mean total loss of the last 10 steps over that of the first 10."""
        tot = np.array([r["total"] for r in self.losses])
        k = min(10, len(tot))
        return float(tot[-k:].mean() / tot[:k].mean())


LOSS_COLUMNS = ("step", "total", "rec", "perc", "gan", "d_loss")


def train(config, items=None):
    """Train LoRA factors, the degradation embedding and DUIG (plus a critic).

    Writes ``losses.csv`` and ``checkpoint.pt`` under ``config.out_dir``.
    ``items`` overrides loading ``config.dataset`` from disk.
    """
    cfg = config if isinstance(config, TrainConfig) else TrainConfig.from_dict(dict(config))
    if items is None:
        items = load_dataset(cfg.dataset)
    if not items:
        raise ValidationError("training dataset is empty")
    log.info(PERCEPTUAL_NOTE)
    x, y, d = view_pairs(items, cfg.view_size, cfg.pre_upsample)

    model = build_model(cfg.variant, cfg.view_size, cfg.width, cfg.seed, ae_steps=cfg.ae_steps)
    torch.manual_seed(cfg.seed)
    disc = PatchDiscriminator()
    frozen_before = state_hash(model.frozen_state())
    params = [p for _, p in model.trainable_named_parameters()]
    opt_g = torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.disc_lr, betas=(0.9, 0.999))
    gen = torch.Generator().manual_seed(cfg.seed)

    model.train()
    losses = []
    for step in range(cfg.steps):
        idx = torch.randint(len(x), (cfg.batch,), generator=gen)
        xb, yb, db = x[idx], y[idx], d[idx]
        pred = model(xb, db)

        for p in disc.parameters():
            p.requires_grad_(False)
        total, comps = total_loss(pred, yb, disc, cfg.weights)
        opt_g.zero_grad()
        total.backward()
        opt_g.step()

        for p in disc.parameters():
            p.requires_grad_(True)
        _, d_loss = gan_losses(disc, yb, pred.detach())
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        row = {"step": step, "total": total.item(), **{k: v.item() for k, v in comps.items()},
               "d_loss": d_loss.item()}
        # the logged total must be exactly the weighted sum of the logged components
        recomputed = combine_losses(comps, cfg.weights)
        if recomputed.item() != row["total"]:
            raise RuntimeError("total loss disagrees with its weighted components")
        losses.append(row)

    model.eval()
    frozen_after = state_hash(model.frozen_state())
    if frozen_after != frozen_before:
        raise RuntimeError("a frozen parameter changed during training")

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "losses.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        writer.writerows(losses)
    ckpt = out / "checkpoint.pt"
    save_checkpoint(ckpt, model, extra={"train_config": cfg.to_dict(), "perceptual": PERCEPTUAL_NOTE})
    return TrainResult(model, losses, ckpt, sum(p.numel() for p in params), frozen_before, frozen_after)


# --------------------------------------------------------------------------- evaluation

def bicubic_upsample(erp_lr, scale=4):
    erp = check_erp(erp_lr)
    _, h, w = erp.shape
    return np.clip(resize_to(erp, (h * scale, w * scale), "bicubic", col_boundary="wrap"), 0, 1)


def evaluate(checkpoint, dataset_dir, variant, out_csv=None, mode="serial", jobs=4, items=None):
    """Metrics of every SR output against its HR image.

    ``variant="bicubic"`` skips the network (``checkpoint`` may be None) and
    reports the bicubic-upsampling baseline. The checkpoint is only read.
    """
    items = load_dataset(dataset_dir) if items is None else items
    model = None
    if variant != "bicubic":
        model, _ = load_checkpoint(checkpoint, variant)
        model.eval()
    report = MetricReport()
    for name, hr, lr, d in items:
        scale = hr.shape[1] // lr.shape[1]
        if model is None:
            sr = bicubic_upsample(lr, scale)
        else:
            sr = realosr_pipeline(lr, model, mode=mode, record=d, scale=scale, jobs=jobs)
        report.add(name, hr, sr)
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        report.to_csv(out_csv, extra={"variant": variant})
    return report


def ablate(dataset_dir, out_dir, variants=VARIANTS, steps=200, seed=0, mode="serial", jobs=4, **train_kw):
    """Train and evaluate each variant, then merge their mean rows into one table."""
    out_dir = Path(out_dir)
    items = load_dataset(dataset_dir)
    rows = []
    for variant in variants:
        cfg = TrainConfig(dataset=str(dataset_dir), out_dir=str(out_dir / variant), variant=variant,
                          steps=steps, seed=seed, **train_kw)
        t0 = time.perf_counter()
        res = train(cfg, items)
        report = evaluate(res.checkpoint, dataset_dir, variant, out_dir / f"metrics_{variant}.csv",
                          mode=mode, jobs=jobs, items=items)
        rows.append({"variant": variant, **report.mean(), "trainable_params": res.n_trainable,
                     "final_loss": res.losses[-1]["total"], "seconds": time.perf_counter() - t0})
    table = out_dir / "ablation.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", *METRIC_COLUMNS, "trainable_params", "final_loss", "seconds"])
        writer.writeheader()
        writer.writerows(rows)
    return rows, table


# --------------------------------------------------------------------------- estimator

class RealOSR(BaseEstimator):
    """Estimator wrapper: ``fit`` on a dataset directory, ``predict`` an SR ERP from an LR ERP."""

    def __init__(self, variant="full", steps=200, lr=1e-5, batch=4, view_size=64, seed=0,
                 out_dir="runs/estimator", mode="serial", jobs=4):
        self.variant = variant
        self.steps = steps
        self.lr = lr
        self.batch = batch
        self.view_size = view_size
        self.seed = seed
        self.out_dir = out_dir
        self.mode = mode
        self.jobs = jobs

    def fit(self, X, y=None):
        cfg = TrainConfig(dataset=str(X), out_dir=self.out_dir, variant=self.variant, steps=self.steps,
                          lr=self.lr, batch=self.batch, view_size=self.view_size, seed=self.seed)
        res = train(cfg)
        self.model_ = res.model
        self.losses_ = res.losses
        self.checkpoint_ = res.checkpoint
        self.checkpoint_sha256_ = file_sha256(res.checkpoint)
        return self

    def predict(self, X, d=(0.5, 0.5), scale=4):
        check_is_fitted(self, "model_")
        return realosr_pipeline(X, self.model_, mode=self.mode, record=np.asarray(d, dtype=np.float64),
                                scale=scale, jobs=self.jobs)
