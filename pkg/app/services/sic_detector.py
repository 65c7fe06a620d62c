"""SIC-stage detectors and phase message passing for the CPAN channel."""

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Tuple, Union

import numpy as np
from scipy import special

from app.models.schemas import CpanParams
from app.services.constellations import RingConstellation
from app.utils.errors import (
    ContractViolationError,
    InvalidArgumentError,
    NumericalFailureError,
)
from app.utils.math_core import (
    TWO_PI,
    UNINFORMATIVE_VARIANCE,
    ComplexGaussianMoments,
    GaussianMessage,
    gaussian_product_moments,
    log_bessel_i0,
    wrap_phase,
    wrapped_gaussian_log_pdf,
)

logger = logging.getLogger(__name__)

PhaseBelief = Union[GaussianMessage, Tuple[np.ndarray, np.ndarray]]

AMPLITUDE_FLOOR_RATIO = 1e-12
DEFAULT_APPROXIMATION_THRESHOLD = 0.1
VIOLATION_WARNING_FRACTION = 0.01


@dataclass(frozen=True)
class SicSchedule:
    """Interlaced SIC stages: stage s owns indices s-1, s-1+S, s-1+2S, ..."""

    n: int
    stages: int

    def __post_init__(self):
        if self.stages < 1 or self.n < self.stages:
            raise InvalidArgumentError(f"Invalid schedule n={self.n}, S={self.stages}")
        if self.n % self.stages != 0:
            raise InvalidArgumentError(f"S={self.stages} does not divide n={self.n}")

    def _check_stage(self, s: int) -> None:
        if not 1 <= s <= self.stages:
            raise InvalidArgumentError(f"Stage {s} outside 1..{self.stages}")

    def stage_indices(self, s: int) -> np.ndarray:
        self._check_stage(s)
        return np.arange(s - 1, self.n, self.stages)

    def decoded_mask(self, s: int) -> np.ndarray:
        self._check_stage(s)
        return np.arange(self.n) % self.stages < s - 1

    def decoded_indices(self, s: int) -> np.ndarray:
        """Indices decoded before stage s (sorted)."""
        return np.flatnonzero(self.decoded_mask(s))

    def last_decoded_index(self, s: int) -> int:
        """Last index decoded before stage s, where the leftward pass starts."""
        if s < 2:
            raise InvalidArgumentError("Stage 1 has no decoded symbols")
        self._check_stage(s)
        return self.n - self.stages + s - 2

    def stage_of_index(self) -> np.ndarray:
        return np.arange(self.n) % self.stages + 1


@dataclass
class MessageCounter:
    """Number of messages computed by one stage run"""

    rightward: int = 0
    leftward: int = 0
    downward: int = 0
    posterior: int = 0
    inputs: int = 0

    @property
    def total(self) -> int:
        return self.rightward + self.leftward + self.downward + self.posterior + self.inputs


def stage_message_budget(n: int, stages: int, s: int) -> int:
    """Worst-case message count of stage s: both passes over the whole chain,
    n/S downward messages and posteriors, (s-1)n/S observations and the two
    boundary messages."""
    per_stage = n // stages
    return 2 * (2 * n - 2) + 2 * per_stage + (s - 1) * per_stage + 2


@dataclass
class ApproximationStats:
    """Validity of the Gaussian approximation of phase observations"""

    threshold: float = DEFAULT_APPROXIMATION_THRESHOLD
    observations: int = 0
    violations: int = 0
    excluded: int = 0

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.observations if self.observations else 0.0

    def merge(self, other: "ApproximationStats") -> "ApproximationStats":
        return ApproximationStats(
            threshold=self.threshold,
            observations=self.observations + other.observations,
            violations=self.violations + other.violations,
            excluded=self.excluded + other.excluded,
        )


@dataclass
class PhaseMessageBuffers:
    """Message parameters of one stage run; entries are NaN where no message exists"""

    fwd_mean: np.ndarray
    fwd_var: np.ndarray
    fwd_pp_mean: np.ndarray
    fwd_pp_var: np.ndarray
    bwd_pp_mean: np.ndarray
    bwd_pp_var: np.ndarray
    bwd_mean: np.ndarray
    bwd_var: np.ndarray
    obs_mean: np.ndarray
    obs_var: np.ndarray
    down_mean: np.ndarray
    down_var: np.ndarray


@dataclass
class StageResult:
    """Downward phase messages for the indices of one stage"""

    indices: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    counter: MessageCounter
    stats: ApproximationStats = field(default_factory=ApproximationStats)
    buffers: Optional[PhaseMessageBuffers] = None

    @property
    def messages(self):
        return [GaussianMessage(float(m), float(v)) for m, v in zip(self.mean, self.variance)]


@dataclass
class AmplitudePosterior:
    """Ring probabilities per received symbol (last axis = ring index)"""

    probs: np.ndarray
    log_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.allclose(np.sum(self.probs, axis=-1), 1.0, rtol=0, atol=1e-12):
            raise InvalidArgumentError("Amplitude posterior does not sum to 1")
        if self.log_probs is None:
            with np.errstate(divide="ignore"):
                self.log_probs = np.log(self.probs)


@dataclass
class WrappedPhasePosterior:
    """Wrapped-Gaussian density over the transmitted phase gamma.

    mean_offset is the mode wrap(angle(y) - phase mean) of the density.
    """

    mean_offset: Union[float, np.ndarray]
    variance: Union[float, np.ndarray]

    def __post_init__(self):
        if np.any(np.asarray(self.variance) <= 0):
            raise InvalidArgumentError("Phase posterior variance must be positive")

    def log_density(self, gamma):
        """log of the wrapped density at gamma; integrates to 1 over a period."""
        return wrapped_gaussian_log_pdf(gamma, self.mean_offset, self.variance)


def _split_belief(fwd: PhaseBelief):
    if isinstance(fwd, GaussianMessage):
        return fwd.mean, fwd.variance
    mean, variance = fwd
    return np.asarray(mean, dtype=float), np.asarray(variance, dtype=float)


def _squeeze(value):
    return value.item() if isinstance(value, np.ndarray) and value.ndim == 0 else value


def posterior_cscg(
    y,
    fwd: PhaseBelief,
    sigma_x2: float,
    sigma_n2: float,
    include_pseudo: bool = False,
) -> ComplexGaussianMoments:
    """Posterior moments of a CSCG symbol given y and a Gaussian phase belief.

    With a_k = exp(-j k mu - k^2 var / 2) the characteristic function of the
    phase belief and rho = sigma_x^2 / (sigma_x^2 + sigma_n^2):
        mean      = y rho a_1
        variance  = rho (sigma_n^2 + |y|^2 rho) - |mean|^2
        pseudo    = y^2 rho^2 a_2 - mean^2        (only with include_pseudo)
    """
    if not sigma_n2 > 0:
        raise InvalidArgumentError(f"sigma_n2 must be positive, got {sigma_n2}")
    mu, var = _split_belief(fwd)
    if np.any(np.asarray(var) < 0):
        raise InvalidArgumentError("Phase belief variance must be non-negative")

    y = np.asarray(y, dtype=complex)
    rho = sigma_x2 / (sigma_x2 + sigma_n2)
    a1 = np.exp(-1j * mu - 0.5 * var)
    mean = y * rho * a1
    # rho (sigma_n^2 + |y|^2 rho) - |mean|^2 without cancellation
    variance = rho * sigma_n2 - rho**2 * np.abs(y) ** 2 * np.expm1(-var)
    if include_pseudo:
        # y^2 rho^2 (a_2 - a_1^2)
        pseudo = y**2 * rho**2 * np.exp(-2j * mu - var) * np.expm1(-var)
    else:
        pseudo = np.zeros_like(mean) if np.ndim(mean) else 0.0
    return ComplexGaussianMoments(_squeeze(mean), _squeeze(variance), _squeeze(pseudo))


def detect_stage1_cscg(y, sigma_x2: float, sigma_theta2: float, sigma_n2: float) -> ComplexGaussianMoments:
    """Memoryless detector: phase belief equals the stationary prior N(0, sigma_theta2)."""
    return posterior_cscg(y, GaussianMessage(0.0, sigma_theta2), sigma_x2, sigma_n2, include_pseudo=True)


def detect_memoryless_awgn(y, sigma_x2: float, sigma_eff2: float) -> ComplexGaussianMoments:
    """Linear MMSE posterior of a CSCG symbol in AWGN of variance sigma_eff2."""
    if not sigma_eff2 > 0:
        raise InvalidArgumentError(f"Effective noise variance must be positive, got {sigma_eff2}")
    y = np.asarray(y, dtype=complex)
    rho = sigma_x2 / (sigma_x2 + sigma_eff2)
    variance = np.full(y.shape, sigma_x2 * sigma_eff2 / (sigma_x2 + sigma_eff2))
    return ComplexGaussianMoments(_squeeze(y * rho), _squeeze(variance), 0.0)


def observation_messages(
    y: np.ndarray, x: np.ndarray, sigma_n2: float, amplitude_floor: float = 0.0
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian phase messages from decoded symbols; returns (mean, var, excluded)."""
    y = np.asarray(y, dtype=complex)
    x = np.asarray(x, dtype=complex)
    mag = np.abs(y) * np.abs(x)
    excluded = (np.abs(y) <= amplitude_floor) | (np.abs(x) <= amplitude_floor)
    safe = np.where(excluded, 1.0, mag)
    mean = np.where(excluded, 0.0, wrap_phase(np.angle(y) - np.angle(x)))
    var = np.where(excluded, UNINFORMATIVE_VARIANCE, sigma_n2 / (2.0 * safe))
    return mean, var, excluded


def observation_message(y_i: complex, x_i: complex, sigma_n2: float, amplitude_floor: float = 0.0) -> GaussianMessage:
    """Phase message of one decoded symbol; uninformative when |y_i| or |x_i| vanishes."""
    mean, var, excluded = observation_messages(np.array([y_i]), np.array([x_i]), sigma_n2, amplitude_floor)
    if excluded[0]:
        logger.debug("Zero-magnitude observation treated as uninformative")
        return GaussianMessage.uninformative()
    return GaussianMessage(float(mean[0]), float(var[0]))


def _nearest_branch(angle: float, reference: float) -> float:
    """Representative of angle (mod 2 pi) closest to reference."""
    return reference + math.remainder(angle - reference, TWO_PI)


def propagate_phase_messages(
    obs_mean: np.ndarray,
    obs_var: np.ndarray,
    decoded: np.ndarray,
    last_index: int,
    targets: np.ndarray,
    params: CpanParams,
) -> Tuple[PhaseMessageBuffers, MessageCounter]:
    """Forward-backward Gaussian message passing on the AR(1) phase chain.

    decoded marks indices carrying an observation message (obs_mean/obs_var).
    The leftward pass starts at last_index; messages to its right are flat.
    Downward messages are produced for `targets`.
    """
    n = len(decoded)
    mu_d = params.mu_delta
    sd2 = params.sigma_delta2
    counter = MessageCounter()

    is_obs = np.asarray(decoded, dtype=bool).tolist()
    om = np.asarray(obs_mean, dtype=float).tolist()
    ov = np.asarray(obs_var, dtype=float).tolist()

    # Rightward pass
    fwd_m = [0.0] * n
    fwd_v = [0.0] * n
    fpp_m = [0.0] * n
    fpp_v = [0.0] * n
    m, v = 0.0, params.sigma_theta2
    counter.inputs += 1
    for i in range(n):
        fwd_m[i], fwd_v[i] = m, v
        if is_obs[i]:
            m, v = gaussian_product_moments(m, v, _nearest_branch(om[i], m), ov[i])
        fpp_m[i], fpp_v[i] = m, v
        if i < n - 1:
            m, v = mu_d * m, mu_d * mu_d * v + sd2
            counter.rightward += 2

    # Leftward pass
    flat = UNINFORMATIVE_VARIANCE
    bwd_m = [0.0] * n
    bwd_v = [flat] * n
    bpp_m = [0.0] * n
    bpp_v = [flat] * n

    def backward_step(m: float, v: float) -> Tuple[float, float]:
        if mu_d <= 0.0 or v >= flat:
            return 0.0, flat
        v_new = (v + sd2) / (mu_d * mu_d)
        if v_new >= flat:
            return 0.0, flat
        return m / mu_d, v_new

    counter.inputs += sum(is_obs)
    if 0 <= last_index < n and is_obs[last_index]:
        bwd_m[last_index], bwd_v[last_index] = om[last_index], ov[last_index]
        if last_index >= 1:
            m, v = backward_step(om[last_index], ov[last_index])
            bpp_m[last_index - 1], bpp_v[last_index - 1] = m, v
            counter.inputs += 1
            for i in range(last_index - 1, 0, -1):
                if is_obs[i]:
                    m, v = gaussian_product_moments(m, v, _nearest_branch(om[i], m), ov[i])
                bwd_m[i], bwd_v[i] = m, v
                m, v = backward_step(m, v)
                bpp_m[i - 1], bpp_v[i - 1] = m, v
                counter.leftward += 2

    # Downward messages on the target indices
    nan = np.full(n, np.nan)
    down_m = nan.copy()
    down_v = nan.copy()
    for i in np.asarray(targets).tolist():
        back = _nearest_branch(bpp_m[i], fwd_m[i])
        down_m[i], down_v[i] = gaussian_product_moments(fwd_m[i], fwd_v[i], back, bpp_v[i])
        counter.downward += 1

    targets = np.asarray(targets, dtype=int)
    invalid = ~np.isfinite(down_m[targets]) | ~(down_v[targets] >= 0)
    if np.any(invalid):
        bad = int(targets[invalid][0])
        raise NumericalFailureError(f"Invalid downward phase message at index {bad}", index=bad)

    buffers = PhaseMessageBuffers(
        fwd_mean=np.array(fwd_m),
        fwd_var=np.array(fwd_v),
        fwd_pp_mean=np.array(fpp_m),
        fwd_pp_var=np.array(fpp_v),
        bwd_pp_mean=np.array(bpp_m),
        bwd_pp_var=np.array(bpp_v),
        bwd_mean=np.array(bwd_m),
        bwd_var=np.array(bwd_v),
        obs_mean=np.where(decoded, obs_mean, np.nan),
        obs_var=np.where(decoded, obs_var, np.nan),
        down_mean=down_m,
        down_var=down_v,
    )
    return buffers, counter


def _prior_stage(sched: SicSchedule, s: int, params: CpanParams) -> StageResult:
    indices = sched.stage_indices(s)
    counter = MessageCounter(downward=indices.size, inputs=1)
    return StageResult(
        indices=indices,
        mean=np.zeros(indices.size),
        variance=np.full(indices.size, params.sigma_theta2),
        counter=counter,
    )


def _run_stage(
    y: np.ndarray,
    decoded_idx: np.ndarray,
    decoded_x: np.ndarray,
    sched: SicSchedule,
    s: int,
    params: CpanParams,
    sigma_x2: Optional[float],
    threshold: float,
) -> StageResult:
    if not params.sigma_n2 > 0:
        raise InvalidArgumentError("Phase observations need sigma_n2 > 0")
    y = np.asarray(y, dtype=complex)
    if y.size != sched.n:
        raise ContractViolationError(f"Received block has {y.size} symbols, schedule expects {sched.n}")
    if s == 1 or decoded_idx.size == 0:
        return _prior_stage(sched, s, params)

    reference_power = sigma_x2 if sigma_x2 is not None else float(np.mean(np.abs(y) ** 2))
    floor = AMPLITUDE_FLOOR_RATIO * math.sqrt(reference_power)

    mean, var, excluded = observation_messages(y[decoded_idx], decoded_x, params.sigma_n2, floor)
    stats = ApproximationStats(
        threshold=threshold,
        observations=int(decoded_idx.size),
        violations=int(np.sum((var > threshold) & ~excluded)),
        excluded=int(np.sum(excluded)),
    )
    if stats.excluded:
        logger.warning(f"Stage {s}: {stats.excluded} zero-magnitude observations treated as uninformative")
    if stats.violation_fraction > VIOLATION_WARNING_FRACTION:
        logger.warning(
            f"Stage {s}: {stats.violation_fraction:.1%} of phase observations exceed "
            f"variance {threshold} (Gaussian approximation questionable)"
        )

    obs_mean = np.zeros(sched.n)
    obs_var = np.full(sched.n, UNINFORMATIVE_VARIANCE)
    obs_mean[decoded_idx] = mean
    obs_var[decoded_idx] = var

    indices = sched.stage_indices(s)
    buffers, counter = propagate_phase_messages(
        obs_mean, obs_var, sched.decoded_mask(s), sched.last_decoded_index(s), indices, params
    )
    return StageResult(
        indices=indices,
        mean=buffers.down_mean[indices],
        variance=buffers.down_var[indices],
        counter=counter,
        stats=stats,
        buffers=buffers,
    )


def run_stage(
    y: np.ndarray,
    decoded: Mapping[int, complex],
    sched: SicSchedule,
    s: int,
    params: CpanParams,
    sigma_x2: Optional[float] = None,
    threshold: float = DEFAULT_APPROXIMATION_THRESHOLD,
) -> StageResult:
    """Downward phase messages for stage s given the symbols decoded so far.

    `decoded` must map exactly the indices of stages 1..s-1 to their symbols.
    """
    expected = sched.decoded_indices(s)
    keys = np.array(sorted(decoded.keys()), dtype=int)
    if keys.shape != expected.shape or not np.array_equal(keys, expected):
        raise ContractViolationError(
            f"Stage {s} expects {expected.size} decoded symbols on stages 1..{s - 1}, "
            f"got {keys.size}"
        )
    decoded_x = np.array([decoded[int(i)] for i in expected], dtype=complex)
    return _run_stage(y, expected, decoded_x, sched, s, params, sigma_x2, threshold)


def run_stage_known(
    y: np.ndarray,
    x: np.ndarray,
    sched: SicSchedule,
    s: int,
    params: CpanParams,
    sigma_x2: Optional[float] = None,
    threshold: float = DEFAULT_APPROXIMATION_THRESHOLD,
) -> StageResult:
    """run_stage with earlier stages' symbols read from the full block x (genie-aided decoding)."""
    idx = sched.decoded_indices(s)
    return _run_stage(y, idx, np.asarray(x, dtype=complex)[idx], sched, s, params, sigma_x2, threshold)


def detect_amplitudes(y, rings: RingConstellation, sigma_n2: float) -> AmplitudePosterior:
    """Ring posterior from |y| alone: w_l exp(-r_l^2/sigma_n2) I0(2|y| r_l / sigma_n2)."""
    if not sigma_n2 > 0:
        raise InvalidArgumentError(f"sigma_n2 must be positive, got {sigma_n2}")
    mag = np.abs(np.asarray(y, dtype=complex))[..., np.newaxis]
    radii = rings.radii
    logits = (
        np.log(rings.weight_array)
        - radii**2 / sigma_n2
        + log_bessel_i0(2.0 * mag * radii / sigma_n2)
    )
    log_probs = logits - special.logsumexp(logits, axis=-1, keepdims=True)
    probs = np.exp(log_probs)
    probs = probs / np.sum(probs, axis=-1, keepdims=True)
    return AmplitudePosterior(probs=probs, log_probs=log_probs)


def posterior_phase(y, r, fwd: PhaseBelief, sigma_n2: float) -> WrappedPhasePosterior:
    """Wrapped-Gaussian posterior of the ring phase gamma given y, its ring r and a phase belief."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=complex)
    if np.any(r <= 0):
        raise InvalidArgumentError("Phase posterior needs a ring amplitude > 0")
    if np.any(np.abs(y) == 0):
        raise InvalidArgumentError("Phase posterior needs |y| > 0")
    if not sigma_n2 > 0:
        raise InvalidArgumentError(f"sigma_n2 must be positive, got {sigma_n2}")
    mu, var = _split_belief(fwd)
    mode = wrap_phase(np.angle(y) - mu)
    variance = var + sigma_n2 / (2.0 * np.abs(y) * r)
    return WrappedPhasePosterior(mean_offset=_squeeze(np.asarray(mode)), variance=_squeeze(np.asarray(variance)))
