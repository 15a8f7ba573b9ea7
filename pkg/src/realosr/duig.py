"""Deep unfolding injection guidance.

Per UNet block, a domain alignment module (DAM) converts block features to an
LR-resolution RGB image (L2P) and RGB images back to block features (P2L). A
latent unfolding module then takes one simulated gradient step

    f_hat = f_x + PhiT(f_y) - PhiT(Phi(f_x))

where ``Phi`` and ``PhiT`` are separate 3x3 convolutions whose kernels are
softmax mixtures of a kernel bank, mixed by an MLP of ``d = [d_n, d_b]``.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import ValidationError

__all__ = [
    "channel_shuffle",
    "pixel_shuffle",
    "pixel_unshuffle",
    "DynamicKernelBank",
    "dynamic_conv",
    "DamBlock",
    "dam_l2p",
    "dam_p2l",
    "latent_unfold",
    "duig_apply",
    "DuigBlock",
    "VARIANTS",
]

VARIANTS = ("tp_baseline", "latent_add", "pixel_unfold", "full")


def _batched(f):
    if f.dim() == 3:
        return f.unsqueeze(0), True
    if f.dim() != 4:
        raise ValidationError(f"expected a (C, H, W) or (B, C, H, W) tensor, got shape {tuple(f.shape)}")
    return f, False


def channel_shuffle(f, groups):
    """Interleave channels across ``groups``: (g, C/g) -> (C/g, g)."""
    x, single = _batched(f)
    b, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ValidationError(f"channel count {c} is not divisible by groups={groups}")
    out = x.reshape(b, groups, c // groups, h, w).transpose(1, 2).reshape(b, c, h, w)
    return out[0] if single else out


def pixel_shuffle(f, r):
    x, single = _batched(f)
    if r < 1 or x.shape[1] % (r * r):
        raise ValidationError(f"channel count {x.shape[1]} is not divisible by r^2 = {r * r}")
    out = F.pixel_shuffle(x, r)
    return out[0] if single else out


def pixel_unshuffle(f, r):
    x, single = _batched(f)
    if r < 1 or x.shape[-1] % r or x.shape[-2] % r:
        raise ValidationError(f"spatial size {tuple(x.shape[-2:])} is not divisible by r = {r}")
    out = F.pixel_unshuffle(x, r)
    return out[0] if single else out


def _as_d(d, batch, like):
    d = torch.as_tensor(d, dtype=like.dtype, device=like.device)
    if d.dim() == 1:
        d = d.unsqueeze(0)
    if d.shape[-1] != 2:
        raise ValidationError(f"degradation params must have 2 components, got shape {tuple(d.shape)}")
    return d.expand(batch, 2) if d.shape[0] == 1 else d


class DynamicKernelBank(nn.Module):
    """K candidate 3x3 kernels (plus biases) mixed by ``softmax(MLP(d))``."""

    def __init__(self, in_channels, out_channels=None, n_kernels=4, hidden=32, init="identity",
                 init_scale=1e-2):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        self.in_channels, self.out_channels, self.n_kernels = in_channels, out_channels, n_kernels
        self.weight = nn.Parameter(torch.empty(n_kernels, out_channels, in_channels, 3, 3))
        self.bias = nn.Parameter(torch.zeros(n_kernels, out_channels))
        self.mlp = nn.Sequential(nn.Linear(2, hidden), nn.SiLU(), nn.Linear(hidden, n_kernels))
        with torch.no_grad():
            self.weight.normal_(0.0, init_scale / math.sqrt(in_channels * 9))
            if init == "identity":
                self.weight.add_(_delta_kernel(out_channels, in_channels, self.weight.dtype))
            elif init != "small":
                raise ValidationError(f"unknown bank init {init!r}")

    def mixing_weights(self, d):
        d = torch.as_tensor(d, dtype=self.weight.dtype, device=self.weight.device)
        return torch.softmax(self.mlp(d), dim=-1)

    def assemble(self, d):
        """Kernels (B, out, in, 3, 3) and biases (B, out) for each row of ``d``."""
        d = torch.as_tensor(d, dtype=self.weight.dtype, device=self.weight.device)
        w = self.mixing_weights(d[None] if d.dim() == 1 else d)
        kernel = torch.einsum("bk,koihw->boihw", w, self.weight)
        bias = w @ self.bias
        return kernel, bias

    def set_identity(self):
        with torch.no_grad():
            self.weight.copy_(_delta_kernel(self.out_channels, self.in_channels, self.weight.dtype)
                              .expand_as(self.weight))
            self.bias.zero_()
        return self

    def forward(self, f, d):
        return dynamic_conv(f, d, self)


def _delta_kernel(out_c, in_c, dtype):
    k = torch.zeros(out_c, in_c, 3, 3, dtype=dtype)
    for i in range(min(out_c, in_c)):
        k[i, i, 1, 1] = 1.0
    return k


def dynamic_conv(f, d, bank):
    """3x3 convolution (padding 1) with the kernel assembled from ``bank`` for ``d``."""
    x, single = _batched(f)
    b, c, h, w = x.shape
    if c != bank.in_channels:
        raise ValidationError(f"feature has {c} channels, kernel bank expects {bank.in_channels}")
    kernel, bias = bank.assemble(_as_d(d, b, bank.weight))
    out = F.conv2d(x.reshape(1, b * c, h, w), kernel.reshape(b * bank.out_channels, c, 3, 3),
                   bias.reshape(-1), padding=1, groups=b)
    out = out.reshape(b, bank.out_channels, h, w)
    return out[0] if single else out


class DamBlock(nn.Module):
    """Latent <-> pixel converters for one UNet block.

    L2P: grouped 1x1 conv to ``3 r^2`` channels, channel shuffle, pixel shuffle by ``r``.
    P2L: pixel unshuffle, inverse channel shuffle, grouped 1x1 conv back to ``channels``.
    """

    def __init__(self, channels, feature_size, pixel_size, groups=None):
        super().__init__()
        if pixel_size % feature_size:
            raise ValidationError(f"pixel size {pixel_size} is not a multiple of feature size {feature_size}")
        r = pixel_size // feature_size
        wide = 3 * r * r
        g = math.gcd(math.gcd(channels, 8), wide) if groups is None else groups
        if channels % g or wide % g:
            raise ValidationError(f"groups={g} must divide both {channels} and {wide}")
        self.channels, self.feature_size, self.pixel_size = channels, feature_size, pixel_size
        self.r, self.groups, self.wide = r, g, wide
        self.l2p = nn.Conv2d(channels, wide, 1, groups=g)
        self.p2l = nn.Conv2d(wide, channels, 1, groups=g)
        self.calibrate()

    @torch.no_grad()
    def calibrate(self):
        """Set P2L to the per-group pseudo-inverse of L2P so ``P2L(L2P(f)) = f`` when ``3 r^2 >= C``."""
        g = self.groups
        w = self.l2p.weight[:, :, 0, 0].reshape(g, self.wide // g, self.channels // g)
        inv = torch.linalg.pinv(w.double()).to(w.dtype)  # (g, C/g, wide/g)
        self.p2l.weight.copy_(inv.reshape(self.channels, self.wide // g, 1, 1))
        b = self.l2p.bias.reshape(g, self.wide // g, 1)
        self.p2l.bias.copy_(-(inv @ b).reshape(self.channels))
        return self

    def to_pixels(self, f):
        x, single = _batched(f)
        if tuple(x.shape[1:]) != (self.channels, self.feature_size, self.feature_size):
            raise ValidationError(
                f"DAM expects features of shape {(self.channels, self.feature_size, self.feature_size)}, "
                f"got {tuple(x.shape[1:])}")
        out = pixel_shuffle(channel_shuffle(self.l2p(x), self.groups), self.r)
        return out[0] if single else out

    def to_latent(self, img):
        x, single = _batched(img)
        if tuple(x.shape[1:]) != (3, self.pixel_size, self.pixel_size):
            raise ValidationError(
                f"DAM expects images of shape {(3, self.pixel_size, self.pixel_size)}, got {tuple(x.shape[1:])}")
        out = self.p2l(channel_shuffle(pixel_unshuffle(x, self.r), self.wide // self.groups))
        return out[0] if single else out


def dam_l2p(f, block):
    return block.to_pixels(f)


def dam_p2l(img, block):
    return block.to_latent(img)


def latent_unfold(f_x, f_y, phi, phi_t, d):
    """One simulated gradient step in feature space."""
    if f_x.shape != f_y.shape:
        raise ValidationError(f"f_x and f_y differ in shape: {tuple(f_x.shape)} vs {tuple(f_y.shape)}")
    return f_x + phi_t(f_y, d) - phi_t(phi(f_x, d), d)


def duig_apply(f_block_out, x_lr_view, d, dam, phi, phi_t):
    """L2P, P2L on both streams, then :func:`latent_unfold`."""
    x_b = dam.to_pixels(f_block_out)
    f_x = dam.to_latent(x_b)
    f_y = dam.to_latent(x_lr_view)
    return latent_unfold(f_x, f_y, phi, phi_t, d)


class DuigBlock(nn.Module):
    """Guidance for one UNet block under an ablation ``variant``.

    ``latent_add`` replaces the unfolding step with ``f_x + f_y``; ``pixel_unfold``
    runs the unfolding step on the L2P image with 3-channel dynamic convolutions
    and maps the result back with P2L.
    """

    def __init__(self, channels, feature_size, pixel_size, variant="full", n_kernels=4, hidden=32):
        super().__init__()
        if variant not in VARIANTS or variant == "tp_baseline":
            raise ValidationError(f"DuigBlock variant must be one of {VARIANTS[1:]}, got {variant!r}")
        self.variant = variant
        self.dam = DamBlock(channels, feature_size, pixel_size)
        if variant == "full":
            self.phi = DynamicKernelBank(channels, n_kernels=n_kernels, hidden=hidden, init="identity")
            self.phi_t = DynamicKernelBank(channels, n_kernels=n_kernels, hidden=hidden, init="small")
        elif variant == "pixel_unfold":
            self.phi_pix = DynamicKernelBank(3, n_kernels=n_kernels, hidden=hidden, init="identity")
            self.phi_t_pix = DynamicKernelBank(3, n_kernels=n_kernels, hidden=hidden, init="small")
        self.calls = 0

    def forward(self, f, x_lr, d):
        self.calls += 1
        if self.variant == "full":
            return duig_apply(f, x_lr, d, self.dam, self.phi, self.phi_t)
        x_b = self.dam.to_pixels(f)
        if self.variant == "latent_add":
            return self.dam.to_latent(x_b) + self.dam.to_latent(x_lr)
        x_hat = latent_unfold(x_b, x_lr, self.phi_pix, self.phi_t_pix, d)
        return self.dam.to_latent(x_hat)
