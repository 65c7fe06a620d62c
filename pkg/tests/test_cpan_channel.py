import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.models.schemas import CpanParams, FiberParams, ParamTableRow, dbm_to_watts
from app.services.constellations import ConstellationSpec, sample_symbols
from app.services.cpan_channel import (
    CpanChannel,
    cpan_params_from_link,
    lookup_params,
    simulate_cpan,
    simulate_phase_process,
)
from app.utils.errors import ConfigurationError, InvalidArgumentError, ModelInvalidError


class TestParamsFromLink:
    def test_scales_with_power_squared(self):
        link = FiberParams.reference_link()
        low, mu_low, _ = cpan_params_from_link(link, ConstellationSpec.cscg(1e-4))
        high, mu_high, _ = cpan_params_from_link(link, ConstellationSpec.cscg(1e-3))
        assert high / low == pytest.approx(100.0, rel=1e-9)
        assert mu_low == pytest.approx(mu_high)

    def test_reference_link_values(self):
        sigma_theta2, mu_delta, sigma_delta2 = cpan_params_from_link(
            FiberParams.reference_link(), ConstellationSpec.cscg(1e-3)
        )
        assert sigma_theta2 == pytest.approx(5.678e-2, rel=1e-3)
        assert 0.99 < mu_delta < 1.0
        assert sigma_delta2 == pytest.approx(sigma_theta2 * (1 - mu_delta**2))

    def test_no_nonlinearity(self):
        link = FiberParams(gamma=0.0)
        assert cpan_params_from_link(link, ConstellationSpec.cscg(1e-3)) == (0.0, 0.0, 0.0)

    def test_rings_with_lower_kurtosis_see_less_phase_noise(self):
        link = FiberParams.reference_link()
        power = dbm_to_watts(-5.0)
        gaussian = cpan_params_from_link(link, ConstellationSpec.cscg(power))[0]
        four_rings = cpan_params_from_link(link, ConstellationSpec.urr(4, power))[0]
        assert four_rings < gaussian

    def test_zero_dispersion(self):
        with pytest.raises(ModelInvalidError):
            cpan_params_from_link(FiberParams(beta2=0.0), ConstellationSpec.cscg(1e-3))

    def test_single_channel(self):
        with pytest.raises(InvalidArgumentError):
            cpan_params_from_link(FiberParams(n_wdm=1), ConstellationSpec.cscg(1e-3))


class TestPhaseProcess:
    def test_stationary_statistics(self, rng):
        params = CpanParams.from_stationary(sigma_theta2=0.04, mu_delta=0.9, sigma_n2=0.0)
        theta = simulate_phase_process(params, 200_000, rng)
        assert np.var(theta) == pytest.approx(0.04, rel=0.05)
        lag1 = np.corrcoef(theta[:-1], theta[1:])[0, 1]
        assert lag1 == pytest.approx(0.9, abs=0.01)

    def test_memoryless_when_mu_is_zero(self, rng):
        params = CpanParams.from_stationary(sigma_theta2=0.1, mu_delta=0.0, sigma_n2=0.0)
        theta = simulate_phase_process(params, 100_000, rng)
        assert abs(np.corrcoef(theta[:-1], theta[1:])[0, 1]) < 0.02


class TestSimulate:
    def test_noiseless_preserves_modulus(self, rng):
        params = CpanParams.from_stationary(sigma_theta2=0.5, mu_delta=0.99, sigma_n2=0.0)
        x = sample_symbols(ConstellationSpec.cscg(1.0), 1000, rng)
        y, theta = simulate_cpan(params, x, rng)
        np.testing.assert_allclose(np.abs(y), np.abs(x), rtol=1e-12)
        np.testing.assert_allclose(y, x * np.exp(1j * theta), rtol=1e-12)

    def test_additive_noise_variance(self, rng):
        params = CpanParams.awgn(0.25)
        x = np.ones(100_000, dtype=complex)
        y, theta = simulate_cpan(params, x, rng)
        assert np.all(theta == 0.0)
        assert np.mean(np.abs(y - x) ** 2) == pytest.approx(0.25, rel=0.02)

    def test_empty_input(self, rng):
        with pytest.raises(InvalidArgumentError):
            simulate_cpan(CpanParams.awgn(1.0), np.array([], dtype=complex), rng)

    def test_channel_reports_phase(self, rng, cpan_params):
        out = CpanChannel(cpan_params).transmit(np.ones(64, dtype=complex), rng)
        assert out.theta is not None and out.theta.shape == (64,)


class TestParams:
    def test_stationarity_enforced(self):
        with pytest.raises(ValidationError):
            CpanParams(mu_delta=0.9, sigma_delta2=0.5, sigma_theta2=1.0, sigma_n2=0.1)

    def test_mu_delta_below_one(self):
        with pytest.raises(ValidationError):
            CpanParams.from_stationary(sigma_theta2=0.1, mu_delta=1.0, sigma_n2=0.1)

    def test_lookup(self):
        rows = [
            ParamTableRow(power_dbm=p, sigma_theta2=1e-3 * (k + 1), sigma_delta2=1e-3 * (k + 1) * (1 - 0.9**2),
                          mu_delta=0.9, sigma_n2=3e-7, sigma_ase2=2.951e-7)
            for k, p in enumerate([-6.0, -5.0])
        ]
        assert lookup_params(rows, -5.0).sigma_theta2 == pytest.approx(2e-3)
        with pytest.raises(ConfigurationError, match="-4"):
            lookup_params(rows, -4.0)
