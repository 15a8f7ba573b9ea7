"""Interpolation primitives shared by the projection, degradation and operator code.

Pixel-center convention used everywhere: integer coordinate ``k`` is the center
of pixel ``k``, so an axis of ``n`` pixels spans ``[-0.5, n - 0.5]``. Resizing
maps output center ``o`` to input coordinate ``(o + 0.5) / scale - 0.5``.
"""

from functools import lru_cache

import numpy as np

from ._validation import ValidationError, check_image

CUBIC_A = -0.5  # Catmull-Rom

_BOUNDARIES = ("clamp", "wrap", "reflect")


def cubic_kernel(t, a=CUBIC_A):
    """Keys cubic convolution kernel (support [-2, 2])."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def linear_kernel(t):
    t = np.abs(np.asarray(t, dtype=np.float64))
    return np.clip(1.0 - t, 0.0, None)


def box_kernel(t):
    t = np.asarray(t, dtype=np.float64)
    return ((t >= -0.5) & (t < 0.5)).astype(np.float64)


_KERNELS = {
    "bicubic": (cubic_kernel, 2.0),
    "bilinear": (linear_kernel, 1.0),
    "area": (box_kernel, 0.5),
}


def _fold(idx, n, boundary):
    if boundary == "clamp":
        return np.clip(idx, 0, n - 1)
    if boundary == "wrap":
        return np.mod(idx, n)
    if boundary == "reflect":
        period = 2 * n
        idx = np.mod(idx, period)
        return np.where(idx >= n, period - 1 - idx, idx)
    raise ValidationError(f"unknown boundary policy {boundary!r}; expected one of {_BOUNDARIES}")


def _taps(coord, n, boundary):
    """Four cubic taps (indices, weights) for fractional coordinates along one axis."""
    coord = np.asarray(coord, dtype=np.float64)
    base = np.floor(coord)
    frac = coord - base
    offsets = np.arange(-1, 3).reshape((4,) + (1,) * coord.ndim)
    idx = base.astype(np.int64)[None] + offsets
    weights = cubic_kernel(frac[None] - offsets)
    return _fold(idx, n, boundary), weights


def sample_bicubic(image, rows, cols, row_boundary="clamp", col_boundary="clamp"):
    """Sample a (C, H, W) raster at fractional ``(rows, cols)`` with separable cubic convolution.

    ``rows`` and ``cols`` broadcast to a common shape S; the result has shape (C, *S).
    For ERP rasters use ``col_boundary="wrap"`` so sampling crosses the antimeridian.
    """
    img = check_image(image, finite=False)
    rows, cols = np.broadcast_arrays(np.asarray(rows, np.float64), np.asarray(cols, np.float64))
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(cols))):
        raise ValidationError("sample coordinates must be finite")
    _, h, w = img.shape
    ri, rw = _taps(rows, h, row_boundary)
    ci, cw = _taps(cols, w, col_boundary)
    out = np.zeros((img.shape[0],) + rows.shape)
    for a in range(4):
        acc = np.zeros_like(out)
        for b in range(4):
            acc += cw[b] * img[:, ri[a], ci[b]]
        out += rw[a] * acc
    return out


@lru_cache(maxsize=256)
def _resize_matrix_cached(n_in, n_out, mode, boundary, antialias):
    kernel, support = _KERNELS[mode]
    scale = n_out / n_in
    stretch = 1.0 / scale if (antialias and scale < 1.0) else 1.0
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    radius = support * stretch
    lo = np.floor(centers - radius).astype(np.int64)
    width = int(np.ceil(2 * radius)) + 2
    idx = lo[:, None] + np.arange(width)[None, :]
    weights = kernel((centers[:, None] - idx) / stretch)
    weights /= weights.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.repeat(np.arange(n_out), width), _fold(idx, n_in, boundary).ravel()),
              weights.ravel())
    mat.setflags(write=False)
    return mat


def resize_matrix(n_in, n_out, mode="bicubic", boundary="clamp", antialias=True):
    """Dense 1-D resampling matrix of shape (n_out, n_in); rows sum to one."""
    if mode not in _KERNELS:
        raise ValidationError(f"unknown resize mode {mode!r}; expected one of {sorted(_KERNELS)}")
    if boundary not in _BOUNDARIES:
        raise ValidationError(f"unknown boundary policy {boundary!r}")
    if n_in < 1 or n_out < 1:
        raise ValidationError(f"resize dimensions must be >= 1, got {n_in} -> {n_out}")
    return _resize_matrix_cached(int(n_in), int(n_out), mode, boundary, bool(antialias))


def resize_to(image, size, mode="bicubic", row_boundary="clamp", col_boundary="clamp",
              antialias=True):
    """Resize a (C, H, W) raster to ``size = (H', W')`` with a separable kernel."""
    img = check_image(image, finite=False)
    h_out, w_out = (int(s) for s in size)
    _, h, w = img.shape
    if h_out < 1 or w_out < 1:
        raise ValidationError(f"output size must be >= 1, got {size}")
    out = img
    if h_out != h:
        rh = resize_matrix(h, h_out, mode, row_boundary, antialias)
        out = np.matmul(rh, out)
    if w_out != w:
        rw = resize_matrix(w, w_out, mode, col_boundary, antialias)
        out = np.matmul(out, rw.T)
    return out
