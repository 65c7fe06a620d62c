import math

import numpy as np
import pytest

from app.services.constellations import ConstellationSpec, sample_symbols
from app.services.estimation import SIGMA_N2_FLOOR, TrainingSet, estimate_mean_phase, estimate_sigma_n
from app.utils.errors import InvalidArgumentError, UndefinedPhaseError
from app.utils.rng import complex_normal


def _training(rng, sigma_n2, rotation=0.0, n=100_000, n_seq=4, spec=None):
    spec = spec or ConstellationSpec.cscg(1.0)
    pairs = []
    for _ in range(n_seq):
        x = sample_symbols(spec, n // n_seq, rng)
        y = x * np.exp(1j * rotation)
        if sigma_n2 > 0:
            y = y + complex_normal(rng, sigma_n2, x.size)
        pairs.append((x, y))
    return TrainingSet(pairs)


class TestSigmaN:
    @pytest.mark.parametrize("sigma_n2", [0.01, 0.05, 0.3])
    def test_recovers_known_variance(self, rng, sigma_n2):
        estimate = estimate_sigma_n(_training(rng, sigma_n2))
        assert estimate == pytest.approx(sigma_n2, rel=0.03)

    def test_ring_inputs(self, rng):
        training = _training(rng, 0.02, spec=ConstellationSpec.urr(8, 1.0))
        assert estimate_sigma_n(training) == pytest.approx(0.02, rel=0.03)

    def test_phase_rotation_does_not_matter(self, rng):
        training = _training(rng, 0.05, rotation=1.1)
        assert estimate_sigma_n(training) == pytest.approx(0.05, rel=0.03)

    def test_fiber_scale_powers(self, rng):
        training = _training(rng, 2.951e-7, spec=ConstellationSpec.cscg(1e-4))
        assert estimate_sigma_n(training) == pytest.approx(2.951e-7, rel=0.03)

    def test_noiseless_returns_floor(self, rng):
        assert estimate_sigma_n(_training(rng, 0.0, n=2000)) == SIGMA_N2_FLOOR

    @pytest.mark.parametrize("sigma_n2", [2e-13, 5e-14])
    def test_variance_below_search_window(self, rng, sigma_n2):
        training = _training(rng, sigma_n2, n=8000, spec=ConstellationSpec.cscg(1e-4))
        assert estimate_sigma_n(training) == pytest.approx(sigma_n2, rel=0.1)

    def test_variance_just_above_floor(self, rng):
        training = _training(rng, 2.2e-15, n=8000, spec=ConstellationSpec.cscg(1e-4))
        estimate = estimate_sigma_n(training)
        assert SIGMA_N2_FLOOR <= estimate <= 1e-14

    def test_needs_enough_pairs(self, rng):
        with pytest.raises(InvalidArgumentError):
            estimate_sigma_n(_training(rng, 0.1, n=400))


class TestMeanPhase:
    def test_recovers_rotation_exactly_without_noise(self, rng):
        training = _training(rng, 0.0, rotation=0.7, n=4000)
        assert estimate_mean_phase(training) == pytest.approx(0.7, abs=1e-12)

    def test_wraps_to_principal_range(self, rng):
        training = _training(rng, 0.0, rotation=3.5, n=4000)
        assert estimate_mean_phase(training) == pytest.approx(3.5 - 2 * math.pi, abs=1e-12)

    def test_noisy_rotation(self, rng):
        training = _training(rng, 0.1, rotation=-0.4)
        assert estimate_mean_phase(training) == pytest.approx(-0.4, abs=0.01)

    @pytest.mark.parametrize("phi", [0.5, 2.9, -3.0, 7.0])
    def test_extra_rotation_shifts_estimate_modulo_two_pi(self, rng, phi):
        training = _training(rng, 0.1, rotation=2.0, n=4000)
        turned = TrainingSet([(x, y * np.exp(1j * phi)) for x, y in training.pairs])
        base = estimate_mean_phase(training)
        shifted = estimate_mean_phase(turned)
        assert -math.pi <= shifted < math.pi
        assert math.remainder(shifted - base - phi, 2 * math.pi) == pytest.approx(0.0, abs=1e-12)

    def test_zero_correlation(self):
        training = TrainingSet([(np.ones(10, dtype=complex), np.zeros(10, dtype=complex))])
        with pytest.raises(UndefinedPhaseError):
            estimate_mean_phase(training)


class TestTrainingSet:
    def test_needs_pairs(self):
        with pytest.raises(InvalidArgumentError):
            TrainingSet([])

    def test_lengths_must_match(self):
        with pytest.raises(InvalidArgumentError):
            TrainingSet([(np.ones(3), np.ones(4))])

    def test_concatenation(self):
        t = TrainingSet([(np.ones(3), 2 * np.ones(3)), (np.zeros(2), np.zeros(2))])
        assert t.n_train == 2
        assert t.x.shape == (5,)
        assert t.y[0] == 2
