"""Spherical geometry: gnomonic tangent views, equidistant fisheye and ERP rasters.

Angles are radians. ERP pixel ``(i, j)`` of an ``H x 2H`` raster has its center at
latitude ``pi/2 - (i + 0.5) / H * pi`` and longitude ``(j + 0.5) / W * 2*pi - pi``.
Tangent-plane coordinates ``(u, v)`` point east and north respectively.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    ConfigurationError,
    CoverageError,
    OutOfHemisphereError,
    ValidationError,
    check_erp,
    check_image,
    check_positive_int,
)
from .resample import resize_to, sample_bicubic

__all__ = [
    "TangentGrid",
    "TangentViewSet",
    "FisheyePair",
    "TangentProjector",
    "gnomonic_forward",
    "gnomonic_inverse",
    "erp_to_tangent",
    "tangent_to_erp",
    "fusion_weights",
    "erp_to_fisheye",
    "fisheye_to_erp",
    "erp_latlon",
    "latlon_to_erp_coords",
]


# --------------------------------------------------------------------------- coordinates

def erp_latlon(h):
    """Latitude (h, 1) and longitude (1, 2h) of ERP pixel centers."""
    w = 2 * h
    lat = np.pi / 2 - (np.arange(h) + 0.5) / h * np.pi
    lon = (np.arange(w) + 0.5) / w * 2 * np.pi - np.pi
    return lat[:, None], lon[None, :]


def latlon_to_erp_coords(lat, lon, h):
    """Fractional (row, col) pixel coordinates in an ``h x 2h`` ERP raster."""
    w = 2 * h
    rows = (np.pi / 2 - lat) / np.pi * h - 0.5
    cols = (np.mod(lon + np.pi, 2 * np.pi)) / (2 * np.pi) * w - 0.5
    return rows, cols


def _unit_vectors(lat, lon):
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat) * np.ones_like(lon)], axis=-1)


def _local_frame(lat0, lon0):
    """(center, east, north) unit vectors of the tangent plane at (lat0, lon0)."""
    center = np.array([np.cos(lat0) * np.cos(lon0), np.cos(lat0) * np.sin(lon0), np.sin(lat0)])
    east = np.array([-np.sin(lon0), np.cos(lon0), 0.0])
    north = np.array([-np.sin(lat0) * np.cos(lon0), -np.sin(lat0) * np.sin(lon0), np.cos(lat0)])
    return center, east, north


def _to_latlon(vec):
    x, y, z = vec[..., 0], vec[..., 1], vec[..., 2]
    return np.arctan2(z, np.hypot(x, y)), np.arctan2(y, x)


HORIZON_EPS = 1e-12


def _cos_c(lat, lon, lat0, lon0):
    return np.sin(lat0) * np.sin(lat) + np.cos(lat0) * np.cos(lat) * np.cos(lon - lon0)


def gnomonic_forward(point, center):
    """Project ``point = (lat, lon)`` onto the plane tangent at ``center``.

    Accepts scalars or broadcastable arrays. Raises :class:`OutOfHemisphereError`
    for any point at or beyond 90 degrees from the center.
    """
    lat, lon = (np.asarray(p, dtype=np.float64) for p in point)
    lat0, lon0 = center
    cos_c = _cos_c(lat, lon, lat0, lon0)
    # tolerance absorbs rounding for points exactly on the horizon
    if np.any(cos_c <= HORIZON_EPS):
        raise OutOfHemisphereError("point lies on or beyond the horizon of the tangent plane")
    u = np.cos(lat) * np.sin(lon - lon0) / cos_c
    v = (np.cos(lat0) * np.sin(lat) - np.sin(lat0) * np.cos(lat) * np.cos(lon - lon0)) / cos_c
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def gnomonic_inverse(u, v, center):
    """Map tangent-plane coordinates back to ``(lat, lon)``; longitude in [-pi, pi]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValidationError("tangent-plane coordinates must be finite")
    c0, east, north = _local_frame(*center)
    vec = c0 + u[..., None] * east + v[..., None] * north
    vec /= np.linalg.norm(vec, axis=-1, keepdims=True)
    lat, lon = _to_latlon(vec)
    if u.ndim == 0:
        return float(lat), float(lon)
    return lat, lon


# --------------------------------------------------------------------------- grid

def _default_centers():
    centers = [(np.pi / 2, 0.0), (-np.pi / 2, 0.0)]
    for k in range(8):
        centers.append((np.deg2rad(25.0), np.deg2rad(-180.0 + 45.0 * k)))
    for k in range(8):
        centers.append((np.deg2rad(-25.0), np.deg2rad(-157.5 + 45.0 * k)))
    return np.array(centers)


@dataclass
class TangentGrid:
    """Tangent-view layout: ``centers`` is an (M, 2) array of (lat, lon) radians."""

    centers: np.ndarray = field(default_factory=_default_centers)
    fov: float = np.deg2rad(80.0)
    patch_size: int = 128

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if self.centers.ndim != 2 or self.centers.shape[1] != 2 or len(self.centers) < 1:
            raise ConfigurationError("centers must be a non-empty (M, 2) array of (lat, lon)")
        fov = np.broadcast_to(np.asarray(self.fov, dtype=np.float64), (len(self.centers),))
        if np.any(fov <= 0) or np.any(fov >= np.pi):
            raise ConfigurationError("fov must lie in (0, pi)")
        self.fov = float(fov[0]) if np.all(fov == fov[0]) else fov.copy()
        self.patch_size = check_positive_int(self.patch_size, "patch_size")

    @property
    def M(self):
        return len(self.centers)

    def fovs(self):
        return np.broadcast_to(np.asarray(self.fov, dtype=np.float64), (self.M,))

    def half_extents(self):
        """Tangent-plane half width ``tan(fov / 2)`` per view."""
        return np.tan(self.fovs() / 2)

    def pixel_uv(self, m):
        """(u, v) of the N x N pixel centers of view ``m``; row 0 is the northern edge."""
        n, t = self.patch_size, self.half_extents()[m]
        axis = ((np.arange(n) + 0.5) / n * 2 - 1) * t
        return np.meshgrid(axis, -axis)

    def uv_to_pixel(self, u, v, m, n=None):
        n = self.patch_size if n is None else n
        t = self.half_extents()[m]
        return (1 - v / t) / 2 * n - 0.5, (u / t + 1) / 2 * n - 0.5

    def claims(self, lat, lon):
        """Boolean (M, ...) array: which views contain each sphere point inside their square."""
        out = []
        for m, (lat0, lon0) in enumerate(self.centers):
            t = self.half_extents()[m]
            cos_c = _cos_c(lat, lon, lat0, lon0)
            safe = np.where(cos_c > 0, cos_c, 1.0)
            u = np.cos(lat) * np.sin(lon - lon0) / safe
            v = (np.cos(lat0) * np.sin(lat) - np.sin(lat0) * np.cos(lat) * np.cos(lon - lon0)) / safe
            out.append((cos_c > 0) & (np.abs(u) < t) & (np.abs(v) < t))
        return np.array(out)

    def check_coverage(self, h=90):
        """Raise :class:`ConfigurationError` unless every pixel of an ``h x 2h`` ERP is claimed."""
        lat, lon = erp_latlon(h)
        lat, lon = np.broadcast_arrays(lat, lon)
        covered = self.claims(lat, lon).any(axis=0)
        if not covered.all():
            raise ConfigurationError(
                f"tangent grid leaves {int((~covered).sum())} of {covered.size} sample points uncovered")
        return True

    # plain-text config: one "lat lon" line per view in degrees, plus fov / patch_size lines
    def to_text(self):
        lines = [f"fov {np.rad2deg(float(np.mean(self.fovs()))):.10g}",
                 f"patch_size {self.patch_size}"]
        lines += [f"center {np.rad2deg(a):.10g} {np.rad2deg(b):.10g}" for a, b in self.centers]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Parse the grid format written by :meth:`to_text`.

        Lines are ``fov <degrees>``, ``patch_size <N>`` and ``center <lat_deg> <lon_deg>``;
        blank lines and ``#`` comments are ignored.
        """
        fov, size, centers = 80.0, 128, []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, *vals = line.split()
            try:
                if key == "fov":
                    fov = float(vals[0])
                elif key == "patch_size":
                    size = int(vals[0])
                elif key == "center":
                    centers.append((float(vals[0]), float(vals[1])))
                else:
                    raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
            except (IndexError, ValueError) as exc:
                raise ConfigurationError(f"line {lineno}: malformed entry {raw!r}") from exc
        if not centers:
            raise ConfigurationError("grid config defines no centers")
        return cls(np.deg2rad(np.array(centers)), np.deg2rad(fov), size)


@dataclass
class TangentViewSet:
    views: np.ndarray  # (M, C, N, N)
    grid: TangentGrid
    valid_mask: np.ndarray  # (M, N, N) bool

    def __post_init__(self):
        self.views = np.asarray(self.views, dtype=np.float64)
        if self.views.ndim != 4 or len(self.views) != self.grid.M:
            raise ValidationError(
                f"expected {self.grid.M} views of shape (C, N, N), got array of shape {self.views.shape}")
        if self.views.shape[-1] != self.views.shape[-2]:
            raise ValidationError("tangent views must be square")
        self.valid_mask = np.broadcast_to(np.asarray(self.valid_mask, dtype=bool),
                                          (len(self.views),) + self.views.shape[-2:])

    def __len__(self):
        return len(self.views)


# --------------------------------------------------------------------------- ERP <-> TP

def erp_to_tangent(erp, grid=None, pre_upsample=2):
    """Resample an ERP raster into the tangent views of ``grid``.

    The ERP is bicubic-upsampled by ``pre_upsample`` first to limit interpolation loss.
    """
    grid = TangentGrid() if grid is None else grid
    erp = check_erp(erp)
    k = check_positive_int(pre_upsample, "pre_upsample")
    grid.check_coverage()
    _, h, w = erp.shape
    up = resize_to(erp, (h * k, w * k), "bicubic", col_boundary="wrap") if k > 1 else erp
    views = []
    for m, center in enumerate(grid.centers):
        u, v = grid.pixel_uv(m)
        lat, lon = gnomonic_inverse(u, v, center)
        rows, cols = latlon_to_erp_coords(lat, lon, h * k)
        views.append(sample_bicubic(up, rows, cols, "clamp", "wrap"))
    n = grid.patch_size
    return TangentViewSet(np.array(views), grid, np.ones((grid.M, n, n), dtype=bool))


def _raw_fusion(grid, erp_h, n_view):
    """Per-view ERP-space cosine weights and view pixel coordinates (sparse per view)."""
    lat, lon = erp_latlon(erp_h)
    lat, lon = np.broadcast_arrays(lat, lon)
    entries = []
    for m, (lat0, lon0) in enumerate(grid.centers):
        t = grid.half_extents()[m]
        cos_c = _cos_c(lat, lon, lat0, lon0)
        front = cos_c > 1e-12
        la, lo, cc = lat[front], lon[front], cos_c[front]
        u = np.cos(la) * np.sin(lo - lon0) / cc
        v = (np.cos(lat0) * np.sin(la) - np.sin(lat0) * np.cos(la) * np.cos(lo - lon0)) / cc
        inside = (np.abs(u) <= t) & (np.abs(v) <= t)
        flat = np.flatnonzero(front)[inside]
        u, v = u[inside], v[inside]
        weight = np.cos(np.pi / 2 * np.hypot(u, v) / (np.sqrt(2) * t))
        rows, cols = grid.uv_to_pixel(u, v, m, n_view)
        entries.append((flat, weight, rows, cols))
    return entries


def fusion_weights(grid, erp_h, valid_mask=None):
    """Normalized (M, H, W) blending weights used by :func:`tangent_to_erp`."""
    n = grid.patch_size
    entries = _raw_fusion(grid, erp_h, n)
    raw = np.zeros((grid.M, erp_h * 2 * erp_h))
    for m, (flat, weight, rows, cols) in enumerate(entries):
        if valid_mask is not None:
            weight = weight * _mask_at(valid_mask[m], rows, cols)
        raw[m, flat] = weight
    total = raw.sum(axis=0)
    if np.any(total <= 0):
        raise CoverageError(f"{int((total <= 0).sum())} ERP pixels are covered by no tangent view")
    return (raw / total).reshape(grid.M, erp_h, 2 * erp_h)


def _mask_at(mask, rows, cols):
    n = mask.shape[-1]
    ri = np.clip(np.rint(rows).astype(int), 0, mask.shape[0] - 1)
    ci = np.clip(np.rint(cols).astype(int), 0, n - 1)
    return mask[ri, ci].astype(np.float64)


def tangent_to_erp(views, erp_h, pre_upsample=2):
    """Fuse tangent views back into an ``erp_h x 2*erp_h`` ERP raster.

    Each view is bicubic-upsampled by ``pre_upsample`` and sampled at the ERP pixel
    centers it contains. Overlaps are blended with a cosine falloff in tangent-plane
    radius, normalized so the weights at every ERP pixel sum to one.
    """
    if not isinstance(views, TangentViewSet):
        raise ValidationError("views must be a TangentViewSet")
    erp_h = check_positive_int(erp_h, "erp_h")
    k = check_positive_int(pre_upsample, "pre_upsample")
    grid = views.grid
    n = views.views.shape[-1]
    n_up = n * k
    c = views.views.shape[1]
    acc = np.zeros((c, erp_h * 2 * erp_h))
    total = np.zeros(erp_h * 2 * erp_h)
    for m, (flat, weight, rows, cols) in enumerate(_raw_fusion(grid, erp_h, n_up)):
        view = views.views[m]
        if k > 1:
            view = resize_to(view, (n_up, n_up), "bicubic")
        mask = views.valid_mask[m]
        if not mask.all():
            weight = weight * _mask_at(mask, (rows + 0.5) / k - 0.5, (cols + 0.5) / k - 0.5)
        acc[:, flat] += weight * sample_bicubic(view, rows, cols)
        total[flat] += weight
    if np.any(total <= 0):
        raise CoverageError(f"{int((total <= 0).sum())} ERP pixels are covered by no tangent view")
    return (acc / total).reshape(c, erp_h, 2 * erp_h)


# --------------------------------------------------------------------------- fisheye

_FISHEYE_CENTERS = ((0.0, 0.0), (0.0, np.pi))


@dataclass
class FisheyePair:
    """Front (lon 0) and back (lon pi) equidistant fisheye rasters, each (C, S, S)."""

    front: np.ndarray
    back: np.ndarray
    focal: float
    mask: np.ndarray  # (S, S): True inside the image circle

    @property
    def side(self):
        return self.front.shape[-1]

    def hemispheres(self):
        return (self.front, self.back)

    def replace(self, front, back):
        return FisheyePair(np.asarray(front), np.asarray(back), self.focal, self.mask)


def _fisheye_directions(s, center):
    """Unit direction per fisheye pixel (equidistant ``r = f * theta``, f = S / pi)."""
    f = s / np.pi
    y, x = np.meshgrid(s / 2 - (np.arange(s) + 0.5), (np.arange(s) + 0.5) - s / 2, indexing="ij")
    theta = np.hypot(x, y) / f
    psi = np.arctan2(y, x)
    c0, east, north = _local_frame(*center)
    vec = (np.cos(theta)[..., None] * c0
           + (np.sin(theta) * np.cos(psi))[..., None] * east
           + (np.sin(theta) * np.sin(psi))[..., None] * north)
    return vec, np.hypot(x, y) <= s / 2


def erp_to_fisheye(erp, side):
    """Split an ERP raster into two ``side x side`` equidistant fisheye hemispheres.

    Pixels outside the image circle carry the continued projection (a guard band so
    later filtering does not pull in black corners) and are flagged in ``mask``.
    """
    erp = check_erp(erp)
    side = check_positive_int(side, "side")
    h = erp.shape[1]
    out = []
    for center in _FISHEYE_CENTERS:
        vec, mask = _fisheye_directions(side, center)
        lat, lon = _to_latlon(vec)
        rows, cols = latlon_to_erp_coords(lat, lon, h)
        out.append(sample_bicubic(erp, rows, cols, "clamp", "wrap"))
    return FisheyePair(out[0], out[1], side / np.pi, mask)


def fisheye_to_erp(pair, erp_h):
    """Reassemble an ``erp_h x 2*erp_h`` ERP raster from a fisheye pair."""
    erp_h = check_positive_int(erp_h, "erp_h")
    front = check_image(pair.front, "front")
    back = check_image(pair.back, "back")
    s = front.shape[-1]
    f = s / np.pi
    lat, lon = erp_latlon(erp_h)
    vec = _unit_vectors(*np.broadcast_arrays(lat, lon))
    out = np.zeros((front.shape[0], erp_h, 2 * erp_h))
    use_front = vec[..., 0] >= 0
    for img, center, sel in ((front, _FISHEYE_CENTERS[0], use_front),
                             (back, _FISHEYE_CENTERS[1], ~use_front)):
        c0, east, north = _local_frame(*center)
        p = vec[sel]
        along = p @ c0
        x, y = p @ east, p @ north
        theta = np.arctan2(np.hypot(x, y), along)
        psi = np.arctan2(y, x)
        r = f * theta
        cols = s / 2 + r * np.cos(psi) - 0.5
        rows = s / 2 - r * np.sin(psi) - 0.5
        out[:, sel] = sample_bicubic(img, rows, cols)
    return out


# --------------------------------------------------------------------------- estimator

class TangentProjector(TransformerMixin, BaseEstimator):
    """ERP <-> tangent-view transformer.

    ``transform`` maps an ERP raster (or a list of them) to :class:`TangentViewSet`;
    ``inverse_transform`` fuses views back to the ERP height seen during ``fit``
    times ``output_scale``.
    """

    def __init__(self, grid=None, pre_upsample=2, output_scale=1):
        self.grid = grid
        self.pre_upsample = pre_upsample
        self.output_scale = output_scale

    def fit(self, X, y=None):
        first = X[0] if isinstance(X, (list, tuple)) else X
        self.erp_h_ = check_erp(first).shape[1]
        self.grid_ = TangentGrid() if self.grid is None else self.grid
        self.grid_.check_coverage()
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        if isinstance(X, (list, tuple)):
            return [erp_to_tangent(x, self.grid_, self.pre_upsample) for x in X]
        return erp_to_tangent(X, self.grid_, self.pre_upsample)

    def inverse_transform(self, X):
        check_is_fitted(self, "grid_")
        h = self.erp_h_ * self.output_scale
        if isinstance(X, (list, tuple)):
            return [tangent_to_erp(v, h, self.pre_upsample) for v in X]
        return tangent_to_erp(X, h, self.pre_upsample)
