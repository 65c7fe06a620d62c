"""CSCG inputs and uniform-ring Rayleigh-weighted (URR) constellations."""

import logging
import math
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize, special

from app.utils.errors import InvalidArgumentError, NumericalFailureError

logger = logging.getLogger(__name__)

POWER_TOLERANCE = 1e-10


class RingConstellation(BaseModel):
    """Equidistant rings r_l = l * delta_r with probabilities w_l"""

    model_config = ConfigDict(frozen=True)

    n_r: int = Field(ge=1)
    delta_r: float = Field(gt=0)
    weights: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_weights(self):
        if len(self.weights) != self.n_r:
            raise ValueError(f"Expected {self.n_r} ring weights, got {len(self.weights)}")
        if any(w <= 0 for w in self.weights):
            raise ValueError("Ring weights must be strictly positive")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError("Ring weights must sum to 1")
        return self

    @property
    def radii(self) -> np.ndarray:
        return self.delta_r * np.arange(1, self.n_r + 1, dtype=float)

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def power(self) -> float:
        return float(np.sum(self.weight_array * self.radii**2))

    def to_text(self) -> str:
        """Reproducibility manifest: n_r, delta_r, then one weight per line."""
        lines = [f"n_r {self.n_r}", f"delta_r {self.delta_r!r}"]
        lines.extend(repr(float(w)) for w in self.weights)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RingConstellation":
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        try:
            n_r = int(lines[0].split()[1])
            delta_r = float(lines[1].split()[1])
            weights = tuple(float(v) for v in lines[2:])
        except (IndexError, ValueError) as e:
            raise InvalidArgumentError(f"Malformed ring constellation text: {e}")
        return cls(n_r=n_r, delta_r=delta_r, weights=weights)


class ConstellationSpec(BaseModel):
    """Input distribution with average power sigma_x^2 = power (W)"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["cscg", "urr"]
    power: float = Field(gt=0)
    rings: Optional[RingConstellation] = None

    @model_validator(mode="after")
    def _check_rings(self):
        if self.kind == "urr" and self.rings is None:
            raise ValueError("URR constellation requires rings")
        if self.kind == "cscg" and self.rings is not None:
            raise ValueError("CSCG constellation takes no rings")
        return self

    @classmethod
    def cscg(cls, power: float) -> "ConstellationSpec":
        return cls(kind="cscg", power=power)

    @classmethod
    def urr(cls, n_r: int, power: float) -> "ConstellationSpec":
        return cls(kind="urr", power=power, rings=urr_design(n_r, power))

    @property
    def n_rings(self) -> int:
        return self.rings.n_r if self.rings is not None else 0

    @property
    def label(self) -> str:
        return "CSCG" if self.kind == "cscg" else f"URR{self.n_rings}"


def _urr_log_weights(n_r: int, delta_r: float, power: float) -> np.ndarray:
    ell = np.arange(1, n_r + 1, dtype=float)
    log_w = np.log(ell * delta_r) - (ell * delta_r) ** 2 / power
    return log_w - special.logsumexp(log_w)


def _urr_power(n_r: int, delta_r: float, power: float) -> float:
    weights = np.exp(_urr_log_weights(n_r, delta_r, power))
    ell = np.arange(1, n_r + 1, dtype=float)
    return float(np.sum(weights * (ell * delta_r) ** 2))


def urr_design(n_r: int, power: float) -> RingConstellation:
    """Design an n_r-ring URR constellation with E|X|^2 = power.

    Ring weights follow w_l ~ r_l exp(-r_l^2 / power), a discretized Rayleigh
    profile. The spacing delta_r is found by bisection on the (increasing)
    map delta_r -> E|X|^2.
    """
    if n_r < 1:
        raise InvalidArgumentError(f"Number of rings must be >= 1, got {n_r}")
    if not power > 0:
        raise InvalidArgumentError(f"Power must be positive, got {power}")

    if n_r == 1:
        return RingConstellation(n_r=1, delta_r=math.sqrt(power), weights=(1.0,))

    # Work in units of sqrt(power) so the bracket is scale-free.
    def mismatch(u: float) -> float:
        return _urr_power(n_r, u, 1.0) - 1.0

    lo, hi = 1e-6, float(n_r)
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if not (f_lo < 0 < f_hi):
        raise NumericalFailureError(
            f"Ring spacing is not bracketed for n_r={n_r}",
            diagnostics={"bracket": (lo, hi), "mismatch": (f_lo, f_hi)},
        )
    try:
        u = optimize.bisect(mismatch, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    except RuntimeError as e:
        raise NumericalFailureError(
            f"Ring spacing bisection failed for n_r={n_r}: {e}",
            diagnostics={"bracket": (lo, hi), "mismatch": (f_lo, f_hi)},
        )

    delta_r = float(u) * math.sqrt(power)
    weights = np.exp(_urr_log_weights(n_r, delta_r, power))
    weights = weights / math.fsum(weights)
    rings = RingConstellation(n_r=n_r, delta_r=delta_r, weights=tuple(float(w) for w in weights))

    achieved = rings.power
    if abs(achieved - power) > POWER_TOLERANCE * power:
        raise NumericalFailureError(
            f"Ring design missed the power constraint: {achieved} vs {power}",
            diagnostics={"delta_r": delta_r, "achieved": achieved},
        )
    logger.debug(f"URR design n_r={n_r}, P={power:.4e}: delta_r={delta_r:.6e}")
    return rings


def sample_ring_indices(rings: RingConstellation, n: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-based ring index per symbol."""
    return rng.choice(rings.n_r, size=n, p=rings.weight_array)


def sample_symbols(spec: ConstellationSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. symbols from the constellation."""
    if n < 1:
        raise InvalidArgumentError(f"Number of symbols must be >= 1, got {n}")
    if spec.kind == "cscg":
        scale = math.sqrt(spec.power / 2.0)
        return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))

    ring_index = sample_ring_indices(spec.rings, n, rng)
    amplitude = spec.rings.radii[ring_index]
    phase = rng.uniform(-math.pi, math.pi, size=n)
    return amplitude * np.exp(1j * phase)


def amplitude_entropy(rings: RingConstellation) -> float:
    """Shannon entropy H(R) of the ring weights, in bits."""
    return float(np.sum(special.entr(rings.weight_array)) / math.log(2.0))


def kurtosis(spec: ConstellationSpec) -> float:
    """Fourth absolute moment Q = E|X|^4."""
    if spec.kind == "cscg":
        return 2.0 * spec.power**2
    return float(np.sum(spec.rings.weight_array * spec.rings.radii**4))
