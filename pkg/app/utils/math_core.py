"""Numerical kernels shared by the channel models, detectors and estimators."""

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import special

from app.utils.errors import (
    DegenerateProductError,
    InvalidArgumentError,
    SingularCovarianceError,
)

ArrayLike = Union[float, complex, np.ndarray]

TWO_PI = 2.0 * math.pi

# Variance used for messages that carry no information ("flat" messages).
UNINFORMATIVE_VARIANCE = 1e12

# Wrapped-Gaussian evaluation: image sum up to this variance, Fourier series above
WRAP_SERIES_SWITCH = 1.0
WRAP_SERIES_TERMS = 12


@dataclass(frozen=True)
class GaussianMessage:
    """Real Gaussian SPA message (mean, variance) on a phase edge"""

    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise InvalidArgumentError(
                f"Gaussian message must be finite, got ({self.mean}, {self.variance})"
            )
        if self.variance < 0:
            raise InvalidArgumentError(f"Negative message variance {self.variance}")

    @classmethod
    def uninformative(cls) -> "GaussianMessage":
        return cls(0.0, UNINFORMATIVE_VARIANCE)

    @property
    def is_uninformative(self) -> bool:
        return self.variance >= UNINFORMATIVE_VARIANCE


@dataclass(frozen=True)
class ComplexGaussianMoments:
    """Mean, variance and pseudo-variance of a complex Gaussian.

    Fields may be numpy arrays of equal shape, one entry per symbol.
    """

    mean: ArrayLike
    variance: ArrayLike
    pseudo_variance: ArrayLike = 0.0

    def __post_init__(self):
        variance = np.asarray(self.variance, dtype=float)
        if np.any(variance < 0):
            raise InvalidArgumentError("Complex Gaussian variance must be non-negative")
        # small slack for round-off in moment formulas that subtract |mu|^2
        if np.any(np.abs(self.pseudo_variance) > variance * (1 + 1e-9) + 1e-300):
            raise InvalidArgumentError("|pseudo_variance| exceeds variance")

    @property
    def is_circular(self) -> bool:
        return bool(np.all(np.asarray(self.pseudo_variance) == 0))


def _require_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} must be finite")


def wrap_phase(x: ArrayLike) -> ArrayLike:
    """Map angles to [-pi, pi)."""
    arr = np.asarray(x, dtype=float)
    _require_finite(arr, "phase")
    wrapped = np.mod(arr + math.pi, TWO_PI) - math.pi
    # np.mod may return the divisor itself for tiny negative inputs
    wrapped = np.where(wrapped >= math.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(x) == 0:
        return float(wrapped)
    return wrapped


def gaussian_product_moments(mean1: float, var1: float, mean2: float, var2: float) -> Tuple[float, float]:
    """(mean, variance) of the normalized product of two Gaussians given as floats."""
    total = var1 + var2
    if total <= 0.0:
        if mean1 != mean2:
            raise DegenerateProductError(f"Point masses at {mean1} and {mean2} have an empty product")
        return mean1, 0.0
    return (mean1 * var2 + mean2 * var1) / total, var1 * var2 / total


def gaussian_product(m1: GaussianMessage, m2: GaussianMessage) -> GaussianMessage:
    """Mean and variance of the (normalized) product of two Gaussians."""
    return GaussianMessage(*gaussian_product_moments(m1.mean, m1.variance, m2.mean, m2.variance))


def log_bessel_i0(x: ArrayLike) -> ArrayLike:
    """log I0(x), stable for arbitrarily large arguments.

    Uses the exponentially scaled Bessel function: log I0(x) = x + log i0e(x).
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise InvalidArgumentError("log_bessel_i0 requires x >= 0")
    out = arr + np.log(special.i0e(arr))
    if np.ndim(x) == 0:
        return float(out)
    return out


def rice_log_pdf(a: ArrayLike, b: ArrayLike, sigma2: float) -> ArrayLike:
    """log of (2a/s2) exp(-(a^2+b^2)/s2) I0(2ab/s2); -inf at a = 0."""
    if not sigma2 > 0:
        raise InvalidArgumentError(f"Rice variance must be positive, got {sigma2}")
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr < 0) or np.any(b_arr < 0):
        raise InvalidArgumentError("Rice arguments must be non-negative")

    with np.errstate(divide="ignore"):
        log_a = np.log(a_arr)
    out = (
        math.log(2.0 / sigma2)
        + log_a
        - (a_arr**2 + b_arr**2) / sigma2
        + log_bessel_i0(2.0 * a_arr * b_arr / sigma2)
    )
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        return float(out)
    return out


def complex_gaussian_log_pdf(x: ArrayLike, m: ComplexGaussianMoments) -> ArrayLike:
    """Log-density of an improper complex Gaussian.

    With z = x - mean, s2 = variance and p2 = pseudo-variance:
        log p = -log(pi) - 0.5 log(s2^2 - |p2|^2)
                - (s2 |z|^2 - Re(conj(p2) z^2)) / (s2^2 - |p2|^2)
    which reduces to -log(pi s2) - |z|^2 / s2 when p2 = 0.
    """
    s2 = np.asarray(m.variance, dtype=float)
    p2 = np.asarray(m.pseudo_variance, dtype=complex)
    det = s2**2 - np.abs(p2) ** 2
    if np.any(s2 <= 0) or np.any(det <= 0):
        raise SingularCovarianceError(
            "Complex Gaussian covariance is singular (variance <= |pseudo_variance|)"
        )
    z = np.asarray(x, dtype=complex) - np.asarray(m.mean, dtype=complex)

    if not np.any(p2):
        out = -np.log(math.pi * s2) - np.abs(z) ** 2 / s2
    else:
        quad = (s2 * np.abs(z) ** 2 - np.real(np.conj(p2) * z**2)) / det
        out = -math.log(math.pi) - 0.5 * np.log(det) - quad
    if np.ndim(out) == 0:
        return float(out)
    return out


def real_gaussian_log_pdf(x: ArrayLike, mean: ArrayLike, variance: ArrayLike) -> ArrayLike:
    """log N(x; mean, variance) for real arguments."""
    variance = np.asarray(variance, dtype=float)
    out = -0.5 * np.log(TWO_PI * variance) - (np.asarray(x) - mean) ** 2 / (2.0 * variance)
    if np.ndim(out) == 0:
        return float(out)
    return out


def wrapped_gaussian_log_pdf(x: ArrayLike, mean: ArrayLike, variance: ArrayLike) -> ArrayLike:
    """log of the Gaussian N(mean, variance) wrapped onto one 2 pi period.

    Sums the nearest images for small variances and the Fourier series
    1 + 2 sum exp(-k^2 v / 2) cos(k t) otherwise; both are exact to double
    precision on their side of the switch.
    """
    t, v = np.broadcast_arrays(wrap_phase(np.asarray(x, dtype=float) - mean), np.asarray(variance, dtype=float))
    shape = t.shape
    t, v = t.ravel(), v.ravel()
    if np.any(v <= 0):
        raise InvalidArgumentError("Wrapped Gaussian variance must be positive")
    out = np.empty(t.size)

    narrow = v <= WRAP_SERIES_SWITCH
    shifts = TWO_PI * np.arange(-2, 3)[:, np.newaxis]
    tn, vn = t[narrow], v[narrow]
    out[narrow] = special.logsumexp(real_gaussian_log_pdf(tn + shifts, 0.0, vn), axis=0)

    k = np.arange(1, WRAP_SERIES_TERMS + 1)[:, np.newaxis]
    tw, vw = t[~narrow], v[~narrow]
    series = 1.0 + 2.0 * np.sum(np.exp(-(k**2) * vw / 2.0) * np.cos(k * tw), axis=0)
    out[~narrow] = np.log(series) - math.log(TWO_PI)

    if not shape:
        return float(out[0])
    return out.reshape(shape)


def nats_to_bits(value: ArrayLike) -> ArrayLike:
    return value / math.log(2.0)
