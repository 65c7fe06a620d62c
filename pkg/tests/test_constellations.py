import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from app.services.constellations import (
    ConstellationSpec,
    RingConstellation,
    amplitude_entropy,
    kurtosis,
    sample_symbols,
    urr_design,
)
from app.utils.errors import InvalidArgumentError


class TestUrrDesign:
    @pytest.mark.parametrize("n_r", [1, 2, 4, 8, 32, 64])
    @pytest.mark.parametrize("power", [1.0, 1e-4])
    def test_meets_power_constraint(self, n_r, power):
        rings = urr_design(n_r, power)
        assert rings.n_r == n_r
        assert rings.power == pytest.approx(power, rel=1e-10)
        assert math.fsum(rings.weights) == pytest.approx(1.0, abs=1e-12)

    def test_single_ring(self):
        rings = urr_design(1, 2.0)
        assert rings.delta_r == pytest.approx(math.sqrt(2.0))
        assert rings.weights == (1.0,)

    def test_weights_follow_rayleigh_profile(self):
        rings = urr_design(16, 1.0)
        r = rings.radii
        profile = r * np.exp(-(r**2))
        np.testing.assert_allclose(rings.weight_array, profile / profile.sum(), rtol=1e-9)

    def test_spacing_scales_with_amplitude(self):
        assert urr_design(8, 4.0).delta_r == pytest.approx(2.0 * urr_design(8, 1.0).delta_r, rel=1e-9)

    def test_more_rings_raise_entropy(self):
        entropies = [amplitude_entropy(urr_design(n, 1.0)) for n in (1, 2, 4, 8, 16)]
        assert entropies[0] == 0.0
        assert all(b > a for a, b in zip(entropies, entropies[1:]))

    @pytest.mark.parametrize("n_r,power", [(0, 1.0), (4, 0.0), (4, -1.0)])
    def test_invalid(self, n_r, power):
        with pytest.raises(InvalidArgumentError):
            urr_design(n_r, power)


class TestRingConstellation:
    def test_text_format(self):
        rings = urr_design(4, 1e-3)
        text = rings.to_text()
        assert text.splitlines()[0] == "n_r 4"
        assert len(text.splitlines()) == 6
        assert RingConstellation.from_text(text) == rings

    def test_malformed_text(self):
        with pytest.raises(InvalidArgumentError):
            RingConstellation.from_text("n_r\n")

    def test_weights_must_match_ring_count(self):
        with pytest.raises(ValidationError):
            RingConstellation(n_r=2, delta_r=1.0, weights=(1.0,))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            RingConstellation(n_r=2, delta_r=1.0, weights=(0.5, 0.4))


class TestSampling:
    def test_cscg_moments(self, rng):
        x = sample_symbols(ConstellationSpec.cscg(2.0), 200_000, rng)
        assert np.mean(np.abs(x) ** 2) == pytest.approx(2.0, rel=0.02)
        assert abs(np.mean(x**2)) < 0.02

    def test_ring_symbols_lie_on_rings(self, rng):
        spec = ConstellationSpec.urr(8, 1.0)
        x = sample_symbols(spec, 10_000, rng)
        ring = np.abs(x) / spec.rings.delta_r
        np.testing.assert_allclose(ring, np.round(ring), atol=1e-9)
        assert np.mean(np.abs(x) ** 2) == pytest.approx(1.0, rel=0.05)

    def test_ring_phases_are_uniform(self, rng):
        x = sample_symbols(ConstellationSpec.urr(16, 1.0), 100_000, rng)
        result = stats.kstest(np.angle(x), stats.uniform(loc=-math.pi, scale=2 * math.pi).cdf)
        assert result.pvalue > 0.01

    def test_reproducible(self):
        spec = ConstellationSpec.urr(4, 1.0)
        a = sample_symbols(spec, 100, np.random.default_rng(5))
        b = sample_symbols(spec, 100, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_needs_symbols(self, rng):
        with pytest.raises(InvalidArgumentError):
            sample_symbols(ConstellationSpec.cscg(1.0), 0, rng)


class TestSpec:
    def test_labels(self):
        assert ConstellationSpec.cscg(1.0).label == "CSCG"
        assert ConstellationSpec.urr(32, 1.0).label == "URR32"
        assert ConstellationSpec.cscg(1.0).n_rings == 0

    def test_urr_needs_rings(self):
        with pytest.raises(ValidationError):
            ConstellationSpec(kind="urr", power=1.0)

    def test_kurtosis(self):
        assert kurtosis(ConstellationSpec.cscg(3.0)) == pytest.approx(18.0)
        # a single ring has constant modulus
        assert kurtosis(ConstellationSpec.urr(1, 3.0)) == pytest.approx(9.0)
        assert kurtosis(ConstellationSpec.urr(4, 1.0)) < kurtosis(ConstellationSpec.urr(32, 1.0))

    def test_kurtosis_approaches_gaussian(self):
        values = [kurtosis(ConstellationSpec.urr(n_r, 1.0)) for n_r in (4, 8, 16, 32, 64)]
        assert all(b >= a - 1e-3 for a, b in zip(values, values[1:]))
        assert values[-1] == pytest.approx(2.0, abs=0.05)
