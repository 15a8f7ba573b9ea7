"""Inverse-problem steps for ``y = A x + n``: data-fidelity gradient descent,
the range-space (pseudo-inverse) approximation, and the x0 estimate from a
noisy sample.

The regularizer of the underlying objective is left implicit: the learned
denoiser acts as the prior, so nothing here evaluates it.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._validation import ValidationError
from .resample import resize_to

logger = logging.getLogger(__name__)

__all__ = [
    "LinearOperator",
    "InverseProblem",
    "GuidanceConfig",
    "identity_operator",
    "selection_operator",
    "bicubic_operator",
    "grad_step",
    "ddnm_step",
    "dps_estimate_x0",
    "dps_guided_x0",
    "probe_operator",
]


@dataclass
class LinearOperator:
    """A linear map with a (possibly approximate) pseudo-inverse.

    ``adjoint`` is optional; when absent, :func:`grad_step` falls back to
    ``pinv_apply`` as the adjoint surrogate.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    pinv_apply: Callable[[np.ndarray], np.ndarray]
    input_shape: tuple
    output_shape: tuple
    adjoint: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "operator"

    def __call__(self, x):
        return self.apply(x)

    def check_input(self, x):
        if np.shape(x) != tuple(self.input_shape):
            raise ValidationError(f"{self.name}: expected input shape {self.input_shape}, got {np.shape(x)}")

    def check_output(self, y):
        if np.shape(y) != tuple(self.output_shape):
            raise ValidationError(f"{self.name}: expected output shape {self.output_shape}, got {np.shape(y)}")


@dataclass
class InverseProblem:
    """Observation ``y`` of an unknown ``x`` through ``A``.

    ``lam`` and ``noise`` are descriptive metadata only.
    """

    y: np.ndarray
    A: LinearOperator
    lam: float = 0.0
    noise: str = "gaussian"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.A.check_output(self.y)

    def residual(self, x):
        return self.y - self.A.apply(x)

    def data_fidelity(self, x):
        r = self.residual(x)
        return float(np.sum(r * r))


@dataclass(frozen=True)
class GuidanceConfig:
    alpha: float = 1.0
    zeta: float = 0.0
    alpha_bar: float = 0.25
    conventional_eps_scale: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError("alpha must lie in (0, 1]")
        if self.zeta < 0:
            raise ValidationError("zeta must be >= 0")
        if not 0.0 < self.alpha_bar <= 1.0:
            raise ValidationError("alpha_bar must lie in (0, 1]")


def identity_operator(shape):
    shape = tuple(shape)
    return LinearOperator(lambda x: np.array(x, dtype=np.float64), lambda y: np.array(y, dtype=np.float64),
                          shape, shape, adjoint=lambda y: np.array(y, dtype=np.float64), name="identity")


def selection_operator(shape, keep):
    """Keep the entries where the boolean mask ``keep`` is set (a surjective map).

    The pseudo-inverse scatters back with zeros, so ``A A_pinv = I`` exactly.
    """
    shape = tuple(shape)
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), shape)
    n = int(keep.sum())

    def pinv(y):
        out = np.zeros(shape)
        out[keep] = y
        return out

    return LinearOperator(lambda x: np.asarray(x, dtype=np.float64)[keep], pinv, shape, (n,),
                          adjoint=pinv, name="selection")


def bicubic_operator(scale, shape):
    """Bicubic ``scale``-fold downsampler with bicubic upsampling as pseudo-inverse.

    The downsampler interpolates at the low-resolution pixel centers without an
    antialiasing prefilter, so those centers coincide with the nodes the
    upsampler interpolates and ``A A_pinv`` stays close to the identity.
    """
    if int(scale) != scale or scale < 2:
        raise ValidationError("scale must be an integer >= 2")
    shape = tuple(shape)
    if len(shape) == 2:
        shape = (1,) + shape
    c, h, w = shape
    if h % scale or w % scale:
        raise ValidationError(f"shape {shape[-2:]} is not divisible by scale {scale}")
    low = (c, h // scale, w // scale)

    def down(x):
        return resize_to(np.reshape(x, shape), low[1:], "bicubic", antialias=False)

    def up(y):
        return resize_to(np.reshape(y, low), shape[1:], "bicubic")

    return LinearOperator(down, up, shape, low, name=f"bicubic_x{scale}")


def _check_x(x, problem):
    x = np.asarray(x, dtype=np.float64)
    problem.A.check_input(x)
    return x


def grad_step(x, problem, alpha):
    """One descent step on ``||y - A x||^2``: ``x - 2 alpha A^T (A x - y)``."""
    x = _check_x(x, problem)
    A = problem.A
    adjoint = A.adjoint
    if adjoint is None:
        logger.debug("%s has no adjoint; using its pseudo-inverse as surrogate", A.name)
        adjoint = A.pinv_apply
    return x - 2.0 * alpha * adjoint(A.apply(x) - problem.y)


def ddnm_step(x0t, problem, alpha):
    """Range-space correction ``x - alpha (A_pinv A x - A_pinv y)``."""
    x = _check_x(x0t, problem)
    A = problem.A
    return x - alpha * (A.pinv_apply(A.apply(x)) - A.pinv_apply(problem.y))


def dps_estimate_x0(x_t, eps, alpha_bar, conventional=False):
    """Clean-sample estimate ``(x_t + (1 - alpha_bar) eps) / sqrt(alpha_bar)``.

    ``conventional=True`` scales the noise by ``sqrt(1 - alpha_bar)`` and
    subtracts it, the usual DDPM form.
    """
    if not 0.0 < alpha_bar <= 1.0:
        raise ValidationError("alpha_bar must lie in (0, 1]")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if conventional:
        return (x_t - np.sqrt(1.0 - alpha_bar) * eps) / np.sqrt(alpha_bar)
    return (x_t + (1.0 - alpha_bar) * eps) / np.sqrt(alpha_bar)


def dps_guided_x0(x_t, eps, problem, config):
    """x0 estimate followed by a ``zeta``-sized data-fidelity gradient step."""
    x0 = dps_estimate_x0(x_t, eps, config.alpha_bar, config.conventional_eps_scale)
    if config.zeta == 0:
        return x0
    return grad_step(x0, problem, config.zeta)


def probe_operator(A, n_probes=100, seed=0):
    """Numerical diagnostics: linearity error and ``max |A A_pinv A x - A x|`` on random probes."""
    rng = np.random.default_rng(seed)
    lin, pinv = 0.0, 0.0
    for _ in range(n_probes):
        x = rng.random(A.input_shape)
        z = rng.random(A.input_shape)
        lin = max(lin, float(np.abs(A.apply(0.3 * x + 0.7 * z) - 0.3 * A.apply(x) - 0.7 * A.apply(z)).max()))
        ax = A.apply(x)
        pinv = max(pinv, float(np.abs(A.apply(A.pinv_apply(ax)) - ax).max()))
    return {"operator": A.name, "probes": n_probes, "linearity_max_abs": lin, "pinv_max_abs": pinv}
