"""Noise variance and mean phase rotation fitted from training pairs."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import optimize

from app.utils.errors import InvalidArgumentError, NumericalFailureError, UndefinedPhaseError
from app.utils.math_core import rice_log_pdf, wrap_phase

logger = logging.getLogger(__name__)

SIGMA_N2_FLOOR = 1e-15
LOG_SIGMA2_BOUNDS = (math.log(1e-12), math.log(1e2))
MIN_TRAINING_PAIRS = 1000


@dataclass
class TrainingSet:
    """Transmitted/received symbol sequences of equal length"""

    pairs: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if not self.pairs:
            raise InvalidArgumentError("Training set needs at least one sequence")
        for x, y in self.pairs:
            if np.shape(x) != np.shape(y):
                raise InvalidArgumentError(
                    f"Training pair length mismatch: {np.shape(x)} vs {np.shape(y)}"
                )

    @property
    def n_train(self) -> int:
        return len(self.pairs)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([np.asarray(x, dtype=complex) for x, _ in self.pairs])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([np.asarray(y, dtype=complex) for _, y in self.pairs])


def _rice_profile(a: np.ndarray, b: np.ndarray, log_grid: np.ndarray) -> List[float]:
    return [float(np.mean(rice_log_pdf(a, b, math.exp(v)))) for v in log_grid]


def estimate_sigma_n(t: TrainingSet, floor: float = SIGMA_N2_FLOOR) -> float:
    """Maximum-likelihood sigma_n^2 of the Rice model |y| ~ Rice(|x|, sigma_n^2 / 2).

    Golden-section search on log(sigma^2) inside [min(floor, 1e-12), 1e2],
    bracketed around the method-of-moments value. Noiseless data, or a
    likelihood that keeps rising down to the floor, returns `floor`.
    """
    a = np.abs(t.y)
    b = np.abs(t.x)
    if a.size < MIN_TRAINING_PAIRS:
        raise InvalidArgumentError(
            f"Rice MLE needs at least {MIN_TRAINING_PAIRS} pairs, got {a.size}"
        )

    moment = float(np.mean((a - b) ** 2))
    if moment <= floor:
        logger.info(f"Training data is noiseless, sigma_n2 set to floor {floor:.1e}")
        return floor

    # |y| = 0 has zero density under the model
    keep = a > 0
    a, b = a[keep], b[keep]

    def negative_loglik(log_sigma2: float) -> float:
        return -float(np.mean(rice_log_pdf(a, b, math.exp(log_sigma2))))

    lo, hi = LOG_SIGMA2_BOUNDS
    lo = min(lo, math.log(floor))
    # |y| - |x| has variance ~ sigma^2 / 2 at high SNR
    start = min(max(math.log(2.0 * moment), lo + 1.0), hi - 1.0)
    if negative_loglik(lo) <= negative_loglik(start):
        logger.info(f"Rice likelihood peaks at the floor, sigma_n2 set to {floor:.1e}")
        return floor
    try:
        result = optimize.minimize_scalar(
            negative_loglik, bracket=(lo, start, hi), method="golden", tol=1e-10
        )
    except (ValueError, RuntimeError) as e:
        grid = np.linspace(lo, hi, 29)
        logger.error(f"Rice MLE bracket failure: {e}")
        raise NumericalFailureError(
            f"Rice MLE bracket failure: {e}",
            diagnostics={
                "log_sigma2": grid.tolist(),
                "mean_loglik": _rice_profile(a, b, grid),
                "moment_estimate": moment,
            },
        )

    sigma2 = max(math.exp(result.x), floor)
    logger.debug(f"Rice MLE: sigma_n2={sigma2:.6e} (moment initializer {moment:.6e})")
    return sigma2


def estimate_mean_phase(t: TrainingSet) -> float:
    """Angle of the empirical cross-correlation mean(y x*)."""
    correlation = np.mean(t.y * np.conj(t.x))
    if correlation == 0:
        raise UndefinedPhaseError("Cross-correlation of training data is zero")
    return wrap_phase(float(np.angle(correlation)))
