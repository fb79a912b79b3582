"""Discrete spatial and temporal kernels and the convolution engines that apply them.

Temporal kernels are sampled at ``t = k * dt`` (tap ``k`` weights the frame
``k`` steps in the past), truncated once the continuous kernel has released
``MASS_CUTOFF`` of its mass, and renormalised to unit sum.  Spatial kernels
are square, odd-sized and point symmetric, so correlation and convolution
coincide.

Spatial kernels may carry an exact decomposition into separable Gaussian
(or box) terms plus a small dense core.  ``convolve_spatial`` uses it when
present; ``method="direct"`` always uses the full weight matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import gammaincinv

MASS_CUTOFF = 0.999
BOUNDARY_MODE = "nearest"  # replicate-edge


class InvalidParameterError(ValueError):
    """A kernel or model parameter lies outside its valid domain."""


class InvalidInputError(ValueError):
    """A frame has the wrong shape, is empty, or contains non-finite values."""


def _require_positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise InvalidParameterError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class GammaSpec:
    order_n: int
    tau: float

    def __post_init__(self):
        if int(self.order_n) != self.order_n or self.order_n < 1:
            raise InvalidParameterError(f"order_n must be an integer >= 1, got {self.order_n!r}")
        _require_positive("tau", self.tau)


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float

    def __post_init__(self):
        _require_positive("sigma", self.sigma)


@dataclass(frozen=True)
class W2Params:
    """Gains and shape of the medulla lateral-inhibition kernel."""

    A: float = 1.0
    B: float = 3.0
    e: float = 1.0
    rho: float = 0.0
    sigma4: float = 1.5
    sigma5: float = 3.0

    def __post_init__(self):
        _require_positive("sigma4", self.sigma4)
        _require_positive("sigma5", self.sigma5)
        for name in ("A", "B", "e", "rho"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")


@dataclass(frozen=True, eq=False)
class DiscreteTemporalKernel:
    taps: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64).ravel()
        if taps.size == 0:
            raise InvalidParameterError("temporal kernel needs at least one tap")
        if not np.all(np.isfinite(taps)):
            raise InvalidParameterError("temporal kernel taps must be finite")
        _require_positive("dt", self.dt)
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    def __len__(self):
        return self.taps.size

    @property
    def horizon(self):
        """Time span covered by the taps, in the units of ``dt``."""
        return self.taps.size * self.dt


@dataclass(frozen=True)
class SeparableTerm:
    """``scale * outer(profile, profile)`` for a symmetric 1-D profile."""

    scale: float
    profile: np.ndarray = field(compare=False)


@dataclass(frozen=True, eq=False)
class DiscreteSpatialKernel:
    weights: np.ndarray
    separable: tuple = ()
    core: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 != 1:
            raise InvalidParameterError(f"spatial kernel must be square with odd side, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidParameterError("spatial kernel weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def radius(self):
        return self.weights.shape[0] // 2

    @property
    def decomposed(self):
        return bool(self.separable) or self.core is not None


def identity_spatial_kernel():
    return DiscreteSpatialKernel(np.ones((1, 1)))


# ---------------------------------------------------------------------------
# temporal kernels
# ---------------------------------------------------------------------------


def gamma_density(t, order_n, tau):
    """Continuous Gamma kernel ``(n t)^n exp(-n t / tau) / ((n-1)! tau^(n+1))``.

    This is a Gamma distribution of shape ``n + 1`` and scale ``tau / n``:
    it integrates to one and peaks at ``t = tau``.
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 0
    n = order_n
    logv = (n * np.log(n * t[pos]) - n * t[pos] / tau
            - math.lgamma(n) - (n + 1) * math.log(tau))
    out[pos] = np.exp(logv)
    return out


def gamma_horizon(spec):
    """Time at which the continuous Gamma kernel reaches ``MASS_CUTOFF``."""
    return float(gammaincinv(spec.order_n + 1, MASS_CUTOFF)) * spec.tau / spec.order_n


def _tap_count(horizon, dt):
    return max(2, math.ceil(horizon / dt - 1e-12))


def _normalised(raw, dt, what):
    total = raw.sum()
    if not total > 0:
        raise InvalidParameterError(f"{what} has no mass on a dt={dt} grid")
    return DiscreteTemporalKernel(raw / total, dt)


def gamma_raw_taps(spec, dt=1.0):
    """Truncated but unnormalised Gamma samples (useful for checking mass loss)."""
    _require_positive("dt", dt)
    n_taps = _tap_count(gamma_horizon(spec), dt)
    return gamma_density(np.arange(n_taps) * dt, spec.order_n, spec.tau)


def gamma_kernel(spec, dt=1.0):
    return _normalised(gamma_raw_taps(spec, dt), dt, f"gamma kernel {spec}")


def exp_kernel(lam, dt=1.0):
    """Sampled ``exp(-t / lam) / lam``, truncated at the mass cutoff and normalised."""
    _require_positive("lambda", lam)
    _require_positive("dt", dt)
    horizon = -lam * math.log(1.0 - MASS_CUTOFF)
    t = np.arange(_tap_count(horizon, dt)) * dt
    return _normalised(np.exp(-t / lam) / lam, dt, f"exponential kernel lambda={lam}")


def highpass_kernel(g1, g2, dt=1.0):
    """Difference of two unit-gain Gamma kernels, zero padded to a common length."""
    a = gamma_kernel(g1, dt).taps
    b = gamma_kernel(g2, dt).taps
    n = max(a.size, b.size)
    taps = np.zeros(n)
    taps[:a.size] += a
    taps[:b.size] -= b
    if g1 == g2:
        warnings.warn("identical Gamma specs give an all-zero high-pass kernel", RuntimeWarning,
                      stacklevel=2)
    return DiscreteTemporalKernel(taps, dt)


def shift_kernel(kernel, lag=1):
    """Drop the first ``lag`` taps: weights for a history that starts ``lag`` steps back."""
    taps = kernel.taps[lag:]
    if taps.size == 0:
        taps = np.zeros(1)
    return DiscreteTemporalKernel(taps, kernel.dt)


# ---------------------------------------------------------------------------
# spatial kernels
# ---------------------------------------------------------------------------


def gaussian_1d(radius, sigma):
    """1-D factor of the 2-D Gaussian: ``outer(g, g)`` is ``G_sigma`` on the grid."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-x * x / (2.0 * sigma * sigma)) / (math.sqrt(2.0 * math.pi) * sigma)


def gaussian_2d(radius, sigma):
    """Unnormalised samples of ``G_sigma(x, y) = exp(-(x^2+y^2) / 2 sigma^2) / (2 pi sigma^2)``."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    r2 = x[:, None] ** 2 + x[None, :] ** 2
    return np.exp(-r2 / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


def gaussian_radius(sigma):
    return math.ceil(3.0 * sigma)


def _crop(weights):
    """Smallest centred odd square holding every nonzero entry, or None if all zero."""
    nz = np.argwhere(weights != 0)
    if nz.size == 0:
        return None
    r = weights.shape[0] // 2
    reach = int(np.abs(nz - r).max())
    return weights[r - reach:r + reach + 1, r - reach:r + reach + 1].copy()


def gaussian_kernel(spec):
    radius = gaussian_radius(spec.sigma)
    raw = gaussian_2d(radius, spec.sigma)
    profile = gaussian_1d(radius, spec.sigma)
    return DiscreteSpatialKernel(raw / raw.sum(),
                                 separable=(SeparableTerm(1.0, profile / profile.sum()),))


def dog_split(sigma2):
    """Positive and negative parts of ``G_sigma2 - G_(2 sigma2)``, left unnormalised.

    Both live on the grid of the wider Gaussian.  The positive lobe is a
    small dense core; the negative part is the separable difference minus
    that core.
    """
    _require_positive("sigma2", sigma2)
    sigma3 = 2.0 * sigma2
    radius = gaussian_radius(sigma3)
    dog = gaussian_2d(radius, sigma2) - gaussian_2d(radius, sigma3)
    pos = np.maximum(dog, 0.0)
    neg = np.minimum(dog, 0.0)
    core = _crop(pos)
    pos_k = DiscreteSpatialKernel(pos, core=core)
    neg_k = DiscreteSpatialKernel(
        neg,
        separable=(SeparableTerm(1.0, gaussian_1d(radius, sigma2)),
                   SeparableTerm(-1.0, gaussian_1d(radius, sigma3))),
        core=None if core is None else -core,
    )
    return pos_k, neg_k


def w2_kernel(p):
    """``A [g]^+ + B [g]^-`` with ``g = G_sigma4 - e G_sigma5 - rho``.

    Decomposed as ``B g + (A - B) [g]^+``: ``g`` is a sum of separable
    terms and ``[g]^+`` is usually a small core.
    """
    radius = gaussian_radius(max(p.sigma4, p.sigma5))
    g = gaussian_2d(radius, p.sigma4) - p.e * gaussian_2d(radius, p.sigma5) - p.rho
    gpos = np.maximum(g, 0.0)
    weights = p.A * gpos + p.B * np.minimum(g, 0.0)

    terms = [SeparableTerm(p.B, gaussian_1d(radius, p.sigma4)),
             SeparableTerm(-p.B * p.e, gaussian_1d(radius, p.sigma5)),
             SeparableTerm(-p.B * p.rho, np.ones(2 * radius + 1))]
    terms = tuple(t for t in terms if t.scale != 0)
    core = _crop((p.A - p.B) * gpos)
    return DiscreteSpatialKernel(weights, separable=terms, core=core)


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------


def _check_frame(frame):
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise InvalidInputError(f"expected a non-empty 2-D frame, got shape {f.shape}")
    return f


def convolve_spatial(frame, kernel, method="auto"):
    """Same-size 2-D convolution with replicate-edge boundaries.

    ``method="direct"`` convolves with ``kernel.weights``; ``"auto"`` uses the
    kernel's separable decomposition when it has one.
    """
    f = _check_frame(frame)
    if method not in ("auto", "direct"):
        raise ValueError(f"unknown method {method!r}")
    if method == "direct" or not kernel.decomposed:
        return ndimage.convolve(f, kernel.weights, mode=BOUNDARY_MODE)

    out = np.zeros_like(f)
    for term in kernel.separable:
        tmp = ndimage.correlate1d(f, term.profile, axis=0, mode=BOUNDARY_MODE)
        tmp = ndimage.correlate1d(tmp, term.profile, axis=1, mode=BOUNDARY_MODE)
        if term.scale != 1.0:
            tmp *= term.scale
        out += tmp
    if kernel.core is not None:
        out += ndimage.convolve(f, kernel.core, mode=BOUNDARY_MODE)
    return out


class TemporalConvolver:
    """Causal FIR filter applied independently at every pixel of a frame stream.

    History before the first pushed frame counts as zero.  The ring buffer
    holds exactly ``len(kernel)`` frames.
    """

    def __init__(self, kernel, shape):
        self.kernel = kernel
        self.shape = tuple(shape)
        self._taps = kernel.taps
        self._buf = np.zeros((len(kernel),) + self.shape)
        self._head = -1
        self._lags = np.arange(len(kernel))

    def push(self, sample_frame):
        f = np.asarray(sample_frame, dtype=np.float64)
        if f.shape != self.shape:
            raise InvalidInputError(f"frame shape {f.shape} does not match {self.shape}")
        n = self._taps.size
        self._head = (self._head + 1) % n
        self._buf[self._head] = f
        if n == 1:
            return self._taps[0] * f
        w = np.empty(n)
        w[(self._head - self._lags) % n] = self._taps
        return np.tensordot(w, self._buf, axes=1)

    def reset(self):
        self._buf[:] = 0.0
        self._head = -1
