"""Correlated phase-and-additive-noise (CPAN) surrogate channel."""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from app.models.schemas import CpanParams, FiberParams, ParamTableRow
from app.services.constellations import ConstellationSpec, kurtosis
from app.utils.errors import ConfigurationError, InvalidArgumentError, ModelInvalidError
from app.utils.rng import complex_normal

logger = logging.getLogger(__name__)


@dataclass
class ChannelOutput:
    """Received symbols, plus the true phase process when the channel knows it"""

    y: np.ndarray
    theta: Optional[np.ndarray] = None


def cpan_params_from_link(link: FiberParams, spec: ConstellationSpec) -> Tuple[float, float, float]:
    """Phase-noise parameters (sigma_theta2, mu_delta, sigma_delta2) from link physics.

    Sums the XPM contribution of every interfering channel k = -C..C, k != 0.
    Symbols carry energy P*T, so the excess kurtosis Q - sigma_x^4 (in W^2)
    is scaled by T^2.
    """
    if link.beta2 == 0:
        raise ModelInvalidError("Phase-noise model needs nonzero dispersion (beta2 = 0)")
    n_pairs = link.n_interferer_pairs
    if n_pairs < 1:
        raise InvalidArgumentError("Phase-noise model needs at least one interfering channel pair")

    period = link.symbol_period
    excess = kurtosis(spec) - spec.power**2

    k = np.concatenate([np.arange(-n_pairs, 0), np.arange(1, n_pairs + 1)]).astype(float)
    walk_off = np.abs(link.beta2 * 2.0 * math.pi * link.spacing_hz * k)
    terms = 4.0 * link.gamma**2 * link.length_m / period * excess * period**2 / walk_off

    sigma_theta2 = float(np.sum(terms))
    if sigma_theta2 <= 0.0:
        return 0.0, 0.0, 0.0

    with np.errstate(divide="ignore"):
        overlap = np.maximum(0.0, 1.0 - period / (walk_off * link.length_m))
    r = float(np.sum(terms * overlap))

    mu_delta = r / sigma_theta2
    sigma_delta2 = sigma_theta2 * (1.0 - mu_delta**2)
    logger.debug(
        f"CPAN params from link: sigma_theta2={sigma_theta2:.4e}, "
        f"mu_delta={mu_delta:.6f}, sigma_delta2={sigma_delta2:.4e}"
    )
    return sigma_theta2, mu_delta, sigma_delta2


def simulate_phase_process(params: CpanParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) phase sequence of length n.

    theta_1 ~ N(0, sigma_theta2), theta_i = mu_delta theta_{i-1} + N(0, sigma_delta2).
    """
    innovations = np.empty(n)
    innovations[0] = math.sqrt(params.sigma_theta2) * rng.standard_normal()
    innovations[1:] = math.sqrt(params.sigma_delta2) * rng.standard_normal(n - 1)
    return signal.lfilter([1.0], [1.0, -params.mu_delta], innovations)


def simulate_cpan(
    params: CpanParams, x: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """y_i = x_i exp(j theta_i) + CN(0, sigma_n2); returns (y, theta)."""
    x = np.asarray(x, dtype=complex)
    if x.size == 0:
        raise InvalidArgumentError("simulate_cpan needs at least one symbol")

    theta = simulate_phase_process(params, x.size, rng)
    y = x * np.exp(1j * theta)
    if params.sigma_n2 > 0:
        y = y + complex_normal(rng, params.sigma_n2, x.size)
    return y, theta


class CpanChannel:
    """Simulator handle for the surrogate channel (also AWGN when sigma_theta2 = 0)"""

    def __init__(self, params: CpanParams):
        self.params = params

    def transmit(self, x: np.ndarray, rng: np.random.Generator) -> ChannelOutput:
        y, theta = simulate_cpan(self.params, x, rng)
        return ChannelOutput(y=y, theta=theta)

    def __repr__(self) -> str:
        return f"CpanChannel({self.params!r})"


def lookup_params(rows: Sequence[ParamTableRow], power_dbm: float) -> CpanParams:
    """Parameter-table row for one launch power."""
    for row in rows:
        if abs(row.power_dbm - power_dbm) < 1e-6:
            return row.to_cpan_params()
    available = ", ".join(f"{row.power_dbm:g}" for row in rows)
    raise ConfigurationError(
        f"No parameter-table entry for P = {power_dbm:g} dBm (available: {available})"
    )
