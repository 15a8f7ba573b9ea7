"""Input validation helpers and the package's exception types."""

import numpy as np


class RealOSRError(Exception):
    """Base class for domain errors raised by this package."""


class ValidationError(RealOSRError, ValueError):
    """An input violates a documented precondition."""


class ConfigurationError(RealOSRError, ValueError):
    """A configuration object is inconsistent (e.g. a tangent grid that misses part of the sphere)."""


class CoverageError(RealOSRError, ValueError):
    """Some ERP pixel receives no contribution from any tangent view."""


class OutOfHemisphereError(RealOSRError, ValueError):
    """A point lies on or beyond the horizon of a gnomonic projection."""


def check_image(img, name="image", ndim=3, finite=True):
    """Return ``img`` as a float64 array of shape (C, H, W).

    2-D inputs are promoted to a single channel.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2 and ndim == 3:
        arr = arr[None]
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} is empty")
    if finite and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_erp(img, name="erp"):
    arr = check_image(img, name)
    _, h, w = arr.shape
    if w != 2 * h:
        raise ValidationError(f"{name} must satisfy W == 2*H, got H={h}, W={w}")
    return arr


def check_same_shape(a, b, names=("ref", "test")):
    if np.shape(a) != np.shape(b):
        raise ValidationError(
            f"{names[0]} and {names[1]} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def check_positive_int(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_unit_interval(value, name):
    v = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")
    return v
