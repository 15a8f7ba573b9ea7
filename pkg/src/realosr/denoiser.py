"""Toy single-step denoising backbone with degradation-aware LoRA and DUIG.

The model mirrors the injection topology of a latent diffusion SR network at
desk scale: a small autoencoder (``E``/``D``), a 7-block UNet run exactly once
per tangent view, LoRA factors on every UNet/encoder conv whose rank-wise
scales come from an embedding of ``d``, and one DUIG module after every block.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import ValidationError, check_erp, check_unit_interval
from .duig import VARIANTS, DuigBlock
from .sphere import TangentGrid, TangentViewSet, erp_to_tangent, tangent_to_erp

__all__ = [
    "LoraConv2d",
    "DegradationEmbedding",
    "ToyAutoencoder",
    "ToyUNet",
    "RealOSRNet",
    "lora_modulate",
    "realosr_pipeline",
]

TIMESTEP = 999  # fixed one-step operating point


class LoraConv2d(nn.Module):
    """Frozen conv plus a rank-``r`` update ``B diag(s(d)) A``.

    ``B`` starts at zero, so a fresh adapter leaves the base conv unchanged.
    """

    def __init__(self, in_ch, out_ch, kernel_size, stride=1, padding=0, rank=4, name=""):
        super().__init__()
        self.name = name
        self.base = nn.Conv2d(in_ch, out_ch, kernel_size, stride, padding)
        self.base.requires_grad_(False)
        self.rank = rank
        self.lora_down = nn.Parameter(torch.randn(rank, in_ch, kernel_size, kernel_size)
                                      / math.sqrt(in_ch * kernel_size * kernel_size))
        self.lora_up = nn.Parameter(torch.zeros(out_ch, rank, 1, 1))

    def forward(self, x, scales=None):
        out = self.base(x)
        low = F.conv2d(x, self.lora_down, None, self.base.stride, self.base.padding)
        if scales is not None:
            low = low * scales[self.name][:, :, None, None]
        return out + F.conv2d(low, self.lora_up)

    def delta_weight(self, s):
        """Effective weight update for one scale vector ``s`` of shape (rank,)."""
        up = self.lora_up[:, :, 0, 0] * s[None, :]
        return torch.einsum("or,rikl->oikl", up, self.lora_down)


class DegradationEmbedding(nn.Module):
    """Map ``d`` to per-layer rank-wise LoRA scales."""

    def __init__(self, layer_names, rank=4, dim=64, n_freqs=4):
        super().__init__()
        self.register_buffer("freqs", (2.0 ** torch.arange(n_freqs)) * math.pi)
        self.trunk = nn.Sequential(nn.Linear(2 + 4 * n_freqs, dim), nn.SiLU(), nn.Linear(dim, dim), nn.SiLU())
        self.heads = nn.ModuleDict({n.replace(".", "_"): nn.Linear(dim, rank) for n in layer_names})
        self.layer_names = list(layer_names)
        with torch.no_grad():
            for head in self.heads.values():
                head.weight.mul_(0.1)
                head.bias.fill_(1.0)

    def forward(self, d):
        ang = d[..., None] * self.freqs
        feats = torch.cat([d, torch.sin(ang).flatten(-2), torch.cos(ang).flatten(-2)], dim=-1)
        e = self.trunk(feats)
        return {n: self.heads[n.replace(".", "_")](e) for n in self.layer_names}


def lora_modulate(d, embedding):
    """Adapter scales for ``d`` (shape (2,) or (B, 2)); rejects values outside [0, 1]."""
    check_unit_interval(np.asarray(torch.as_tensor(d).detach().cpu()), "d")
    p = next(embedding.parameters())
    d = torch.as_tensor(d, dtype=p.dtype, device=p.device)
    return embedding(d[None] if d.dim() == 1 else d)


def _timestep_embedding(t, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half) / half)
    ang = t * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)])


class ToyAutoencoder(nn.Module):
    """Encoder 3xNxN -> C_z x N/4 x N/4 (LoRA-adapted) and a plain decoder.

    ``mode="identity"`` bypasses both networks: the latent is the image itself.
    """

    def __init__(self, latent_channels=4, width=32, mode="learned", rank=4):
        super().__init__()
        if mode not in ("learned", "identity"):
            raise ValidationError(f"autoencoder mode must be 'learned' or 'identity', got {mode!r}")
        self.mode = mode
        self.latent_channels = 3 if mode == "identity" else latent_channels
        self.factor = 1 if mode == "identity" else 4
        if mode == "learned":
            self.enc = nn.ModuleList([
                LoraConv2d(3, width, 3, 1, 1, rank, "enc.0"),
                LoraConv2d(width, width, 4, 2, 1, rank, "enc.1"),
                LoraConv2d(width, width, 4, 2, 1, rank, "enc.2"),
                LoraConv2d(width, latent_channels, 1, 1, 0, rank, "enc.3"),
            ])
            self.dec = nn.Sequential(
                nn.Conv2d(latent_channels, width, 1), nn.SiLU(),
                nn.ConvTranspose2d(width, width, 4, 2, 1), nn.SiLU(),
                nn.ConvTranspose2d(width, width, 4, 2, 1), nn.SiLU(),
                nn.Conv2d(width, 3, 3, 1, 1),
            )

    def lora_layers(self):
        return list(self.enc) if self.mode == "learned" else []

    def encode(self, x, scales=None):
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValidationError(f"encoder expects (B, 3, H, W) with H, W divisible by 4, got {tuple(x.shape)}")
        if self.mode == "identity":
            return x
        h = x
        for i, layer in enumerate(self.enc):
            h = layer(h, scales)
            if i < len(self.enc) - 1:
                h = F.silu(h)
        return h

    def decode(self, z):
        if self.mode == "identity":
            return z
        return self.dec(z)


class _Block(nn.Module):
    """Two LoRA 3x3 convs with a constant-timestep bias; optional down/up-sampling."""

    def __init__(self, in_ch, out_ch, resample, t_dim, rank, name, zero_out=False):
        super().__init__()
        self.resample = resample
        stride = 2 if resample == "down" else 1
        self.conv1 = LoraConv2d(in_ch, out_ch, 3, stride, 1, rank, f"{name}.conv1")
        self.conv2 = LoraConv2d(out_ch, out_ch, 3, 1, 1, rank, f"{name}.conv2")
        self.temb = nn.Linear(t_dim, out_ch)
        if zero_out:
            nn.init.zeros_(self.conv2.base.weight)
            nn.init.zeros_(self.conv2.base.bias)

    def forward(self, x, t_emb, scales):
        if self.resample == "up":
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        h = F.silu(self.conv1(x, scales) + self.temb(t_emb)[None, :, None, None])
        return self.conv2(h, scales)


class ToyUNet(nn.Module):
    """Seven blocks: three downsampling, a bottleneck, three upsampling with skips.

    The last block predicts a noise residual from its inputs and returns
    ``z - eps``; its output conv starts at zero so the untrained network is the
    identity on the latent.
    """

    def __init__(self, latent_channels=4, width=32, rank=4, t_dim=32):
        super().__init__()
        w, c = width, latent_channels
        layout = [  # (in, out, resample)
            (c, w, "down"), (w, 2 * w, "down"), (2 * w, 4 * w, "down"), (4 * w, 4 * w, None),
            (8 * w, 2 * w, "up"), (4 * w, w, "up"), (2 * w, c, "up"),
        ]
        self.blocks = nn.ModuleList([
            _Block(i, o, r, t_dim, rank, f"unet.{b}", zero_out=(b == len(layout) - 1))
            for b, (i, o, r) in enumerate(layout)
        ])
        self.out_channels = [o for _, o, _ in layout]
        self.register_buffer("t_emb", _timestep_embedding(TIMESTEP, t_dim))
        for p in self.parameters():
            p.requires_grad_(False)
        for layer in self.lora_layers():
            layer.lora_down.requires_grad_(True)
            layer.lora_up.requires_grad_(True)
        self.block_calls = 0
        self.forward_calls = 0

    @property
    def n_blocks(self):
        return len(self.blocks)

    def block_sizes(self, latent_size):
        return [latent_size // 2, latent_size // 4, latent_size // 8, latent_size // 8,
                latent_size // 4, latent_size // 2, latent_size]

    def lora_layers(self):
        return [m for m in self.modules() if isinstance(m, LoraConv2d)]

    def forward(self, z, scales=None, guidance=None):
        """One traversal of all blocks.

        ``guidance(b, f)`` is applied to every block output (1-based ``b``) before
        it feeds the next block and the skip connections.
        """
        self.forward_calls += 1
        skips = []
        f = z
        n = len(self.blocks)
        for b, block in enumerate(self.blocks, start=1):
            if b > 4:
                skip = skips[n - b]
                f = torch.cat([f, skip], dim=1)
            f = block(f, self.t_emb, scales)
            self.block_calls += 1
            if b == n:
                f = z - f
            if guidance is not None:
                f = guidance(b, f)
            if b <= 3:
                skips.append(f)
        return f


class RealOSRNet(nn.Module):
    """Autoencoder + UNet + LoRA embedding + per-block DUIG for one ablation variant."""

    def __init__(self, view_size=64, width=32, latent_channels=4, rank=4, n_kernels=4,
                 variant="full", ae_mode="learned", seed=0):
        super().__init__()
        if variant not in VARIANTS:
            raise ValidationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if view_size % 32:
            raise ValidationError("view_size must be divisible by 32")
        torch.manual_seed(seed)
        self.config = dict(view_size=view_size, width=width, latent_channels=latent_channels, rank=rank,
                           n_kernels=n_kernels, variant=variant, ae_mode=ae_mode, seed=seed)
        self.variant = variant
        self.view_size = view_size
        self.autoencoder = ToyAutoencoder(latent_channels, width, ae_mode, rank)
        cz = self.autoencoder.latent_channels
        self.latent_size = view_size // self.autoencoder.factor
        self.unet = ToyUNet(cz, width, rank)
        layers = self.autoencoder.lora_layers() + self.unet.lora_layers()
        self.embedding = DegradationEmbedding([m.name for m in layers], rank)
        self.duig = None
        if variant != "tp_baseline":
            self.duig = nn.ModuleList([
                DuigBlock(ch, size, view_size, variant, n_kernels)
                for ch, size in zip(self.unet.out_channels, self.unet.block_sizes(self.latent_size))
            ])
        self.duig_enabled = True
        for p in self.autoencoder.parameters():
            p.requires_grad_(False)
        for layer in self.autoencoder.lora_layers():
            layer.lora_down.requires_grad_(True)
            layer.lora_up.requires_grad_(True)

    # ---------------------------------------------------------------- parts
    def scales(self, d):
        return lora_modulate(d, self.embedding)

    def encode(self, x, d):
        return self.autoencoder.encode(x, self.scales(d))

    def decode(self, z):
        return self.autoencoder.decode(z)

    def denoise_with_duig(self, z, x_lr, d, scales=None):
        if z.dim() != 4 or z.shape[-1] != self.latent_size:
            raise ValidationError(f"latent must be (B, C, {self.latent_size}, {self.latent_size}), got {tuple(z.shape)}")
        if x_lr.shape[-1] != self.view_size or x_lr.shape[0] != z.shape[0]:
            raise ValidationError(f"LR view must be (B, 3, {self.view_size}, {self.view_size}), got {tuple(x_lr.shape)}")
        scales = self.scales(d) if scales is None else scales
        guidance = None
        if self.duig is not None and self.duig_enabled:
            d_t = torch.as_tensor(d, dtype=z.dtype)
            guidance = lambda b, f: self.duig[b - 1](f, x_lr, d_t)
        return self.unet(z, scales, guidance)

    def forward(self, x_lr, d):
        """LR views (B, 3, N, N) in [0, 1] and ``d`` (B, 2) -> restored views."""
        d = torch.as_tensor(d, dtype=x_lr.dtype)
        if d.dim() == 1:
            d = d[None].expand(x_lr.shape[0], 2)
        scales = self.scales(d)
        z = self.autoencoder.encode(x_lr, scales)
        z_tilde = self.denoise_with_duig(z, x_lr, d, scales)
        return self.decode(z_tilde)

    # ---------------------------------------------------------------- bookkeeping
    def trainable_named_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def frozen_state(self):
        """Tensors that training must never modify (decoder and base weights)."""
        return {n: t for n, t in self.state_dict().items()
                if n.startswith("autoencoder.dec") or ".base." in n}

    def duig_calls(self):
        return 0 if self.duig is None else sum(m.calls for m in self.duig)

    def reset_counters(self):
        self.unet.block_calls = 0
        self.unet.forward_calls = 0
        if self.duig is not None:
            for m in self.duig:
                m.calls = 0


# --------------------------------------------------------------------------- pipeline

def _restore_view(model, view, d):
    with torch.no_grad():
        x = torch.as_tensor(view, dtype=torch.float32)[None]
        out = model(x, torch.as_tensor(d, dtype=torch.float32)[None])
    return out[0].double().numpy()


def realosr_pipeline(erp_lr, model, grid=None, mode="serial", d_source="oracle", record=None,
                     predictor=None, scale=4, pre_upsample=2, jobs=4, timings=None):
    """Super-resolve an LR ERP image: ERP -> tangent views -> one UNet pass each -> ERP.

    ``d_source="oracle"`` reads ``record.params``; ``"learned"`` queries ``predictor``
    per view. ``mode="parallel"`` restores views concurrently with ``jobs`` threads;
    results match serial mode exactly.
    """
    from .predictor import estimate_degradation

    erp = check_erp(erp_lr)
    if mode not in ("serial", "parallel"):
        raise ValidationError(f"mode must be 'serial' or 'parallel', got {mode!r}")
    if grid is None:
        grid = TangentGrid(patch_size=model.view_size)
    if grid.patch_size != model.view_size:
        raise ValidationError(f"grid patch size {grid.patch_size} != model view size {model.view_size}")
    t0 = time.perf_counter()
    views = erp_to_tangent(erp, grid, pre_upsample)
    inputs = np.clip(views.views, 0.0, 1.0)
    ds = [estimate_degradation(v, d_source, record=record, predictor=predictor).as_array() for v in inputs]

    def work(m):
        return _restore_view(model, inputs[m], ds[m])

    model.eval()
    t1 = time.perf_counter()
    if mode == "serial":
        restored = [work(m) for m in range(grid.M)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            restored = list(pool.map(work, range(grid.M)))
    t2 = time.perf_counter()
    out = tangent_to_erp(TangentViewSet(np.array(restored), grid, views.valid_mask),
                         erp.shape[1] * scale, pre_upsample)
    if timings is not None:
        timings.update(project_s=t1 - t0, views_s=t2 - t1, fuse_s=time.perf_counter() - t2, mode=mode)
    return np.clip(out, 0.0, 1.0)
