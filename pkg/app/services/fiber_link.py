"""WDM transmitter, split-step fiber propagation and single-channel receiver."""

import logging
import math
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft

from app.models.schemas import FiberParams, NumericsConfig
from app.services.constellations import ConstellationSpec, sample_symbols
from app.services.cpan_channel import ChannelOutput
from app.utils.errors import (
    ConfigurationError,
    FramingError,
    InvalidArgumentError,
    NumericalFailureError,
)
from app.utils.rng import complex_normal, step_generator

logger = logging.getLogger(__name__)


def _fft_workers() -> int:
    return int(os.getenv("SIC_FFT_WORKERS", "1"))


@dataclass
class Waveform:
    """Complex baseband samples of the whole simulated band"""

    samples: np.ndarray
    sample_rate_hz: float
    center_freq_offset_hz: float = 0.0

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) / self.sample_rate_hz)

    def angular_frequencies(self) -> np.ndarray:
        return 2.0 * math.pi * fft.fftfreq(self.samples.size, d=1.0 / self.sample_rate_hz)


def dispersion_filter(omega: np.ndarray, beta2: float, z: float) -> np.ndarray:
    """All-pass transfer function of chromatic dispersion over distance z."""
    return np.exp(0.5j * beta2 * omega**2 * z)


def _channel_offsets(n_wdm: int) -> List[int]:
    half = (n_wdm - 1) // 2
    return [k for k in range(-half, half + 1) if k != 0]


def _sinc_upsample(symbols: np.ndarray, n_samples: int) -> np.ndarray:
    """Periodic sinc interpolation by DFT zero-padding.

    The band is [-n/2, n/2) symbol-rate bins; for even n the Nyquist bin sits
    at -n/2 only, matching the receiver passband.
    """
    n = symbols.size
    spectrum = fft.fft(symbols, workers=_fft_workers())
    bins = np.rint(fft.fftfreq(n) * n).astype(np.int64)
    padded = np.zeros(n_samples, dtype=complex)
    padded[bins % n_samples] = spectrum
    return fft.ifft(padded, workers=_fft_workers()) * (n_samples / n)


def modulate_wdm(
    coi: np.ndarray, interferers: Sequence[np.ndarray], p: FiberParams, osf: int
) -> Waveform:
    """Sinc-pulse WDM waveform with the channel of interest at zero offset.

    Interferers are placed at k * spacing for k = -C..-1, 1..C in that order.
    Pulses are ideal (periodic) sincs, so each channel's average power equals
    the mean symbol power.
    """
    coi = np.asarray(coi, dtype=complex)
    n = coi.size
    if len(interferers) != p.n_wdm - 1:
        raise InvalidArgumentError(
            f"Expected {p.n_wdm - 1} interfering sequences, got {len(interferers)}"
        )
    if any(np.asarray(seq).size != n for seq in interferers):
        raise InvalidArgumentError("All WDM symbol sequences must have the same length")

    sample_rate = osf * p.baud_hz
    if sample_rate < p.n_wdm * p.spacing_hz:
        raise ConfigurationError(
            f"Simulation band {sample_rate:.3e} Hz does not cover {p.n_wdm} channels "
            f"at {p.spacing_hz:.3e} Hz spacing; increase osf"
        )

    n_samples = n * osf
    t = np.arange(n_samples) / sample_rate
    samples = _sinc_upsample(coi, n_samples)

    for k, symbols in zip(_channel_offsets(p.n_wdm), interferers):
        shift_bins = k * p.spacing_hz * n / p.baud_hz
        if abs(shift_bins - round(shift_bins)) > 1e-9:
            raise ConfigurationError(
                f"Channel offset {k * p.spacing_hz:.3e} Hz is not on the FFT grid for n={n}"
            )
        baseband = _sinc_upsample(np.asarray(symbols, dtype=complex), n_samples)
        samples = samples + baseband * np.exp(2j * math.pi * k * p.spacing_hz * t)

    return Waveform(samples=samples, sample_rate_hz=sample_rate)


def ssfm_propagate(
    w: Waveform,
    p: FiberParams,
    n_steps: int,
    rng: Optional[np.random.Generator] = None,
    noise_on: bool = False,
) -> Waveform:
    """Symmetric split-step integration over the whole link.

    Attenuation is fully compensated (ideal distributed Raman amplification).
    With noise_on, every step adds white circular Gaussian noise of spectral
    density n_ase / n_steps over the simulation band. Step noise comes from a
    sub-stream keyed by the step index.
    """
    if n_steps < 1:
        raise InvalidArgumentError(f"n_steps must be >= 1, got {n_steps}")
    if noise_on and rng is None:
        raise InvalidArgumentError("Noise injection needs a random generator")

    workers = _fft_workers()
    n_samples = w.samples.size
    dz = p.length_m / n_steps
    half_step = dispersion_filter(w.angular_frequencies(), p.beta2, dz / 2.0)
    kerr = 1j * p.gamma * dz
    # unnormalized FFT: white noise of per-sample variance v has per-bin variance N v
    bin_noise_var = n_samples * p.n_ase / n_steps * w.sample_rate_hz

    spectrum = fft.fft(w.samples, workers=workers)
    report_every = max(1, n_steps // 10)
    for step in range(n_steps):
        spectrum *= half_step
        field = fft.ifft(spectrum, workers=workers)
        field *= np.exp(kerr * (field.real**2 + field.imag**2))
        spectrum = fft.fft(field, workers=workers)
        spectrum *= half_step
        if noise_on:
            spectrum += complex_normal(step_generator(rng, step), bin_noise_var, n_samples)

        if not np.isfinite(np.vdot(spectrum, spectrum).real):
            raise NumericalFailureError(f"Non-finite field at SSFM step {step}", step=step)
        if (step + 1) % report_every == 0:
            logger.debug(f"SSFM step {step + 1}/{n_steps}")

    return Waveform(
        samples=fft.ifft(spectrum, workers=workers),
        sample_rate_hz=w.sample_rate_hz,
        center_freq_offset_hz=w.center_freq_offset_hz,
    )


def dbp_single_channel(w: Waveform, p: FiberParams, n_steps: int) -> Waveform:
    """Digital backpropagation: noiseless propagation with (-beta2, -gamma)."""
    inverse = p.model_copy(update={"beta2": -p.beta2, "gamma": -p.gamma})
    return ssfm_propagate(w, inverse, n_steps, noise_on=False)


def _lowpass_mask(w: Waveform, bandwidth_hz: float) -> np.ndarray:
    freqs = fft.fftfreq(w.samples.size, d=1.0 / w.sample_rate_hz)
    # half-open [-B/2, B/2): adjacent channels at spacing B never share a bin
    edge = bandwidth_hz / 2.0
    return (freqs >= -edge * (1.0 + 1e-12)) & (freqs < edge * (1.0 - 1e-12))


def brickwall_filter(w: Waveform, bandwidth_hz: float) -> Waveform:
    """Ideal lowpass of total width bandwidth_hz around zero offset."""
    workers = _fft_workers()
    spectrum = fft.fft(w.samples, workers=workers)
    spectrum[~_lowpass_mask(w, bandwidth_hz)] = 0.0
    return Waveform(
        samples=fft.ifft(spectrum, workers=workers),
        sample_rate_hz=w.sample_rate_hz,
        center_freq_offset_hz=w.center_freq_offset_hz,
    )


def receiver_frontend(w: Waveform, p: FiberParams, theta_hat: float, n_steps: int) -> np.ndarray:
    """Symbol-rate samples of the channel of interest.

    n_steps = 0 skips backpropagation (back-to-back operation).
    """
    ratio = w.sample_rate_hz / p.baud_hz
    osf = int(round(ratio))
    if osf < 1 or abs(ratio - osf) > 1e-9:
        raise FramingError(f"Sample rate {w.sample_rate_hz:.6e} Hz is not a multiple of the baud rate")
    if w.samples.size % osf != 0:
        raise FramingError(f"{w.samples.size} samples do not split into whole symbols at osf={osf}")

    # Step 1: select the channel of interest
    filtered = brickwall_filter(w, p.baud_hz)

    # Step 2: undo deterministic single-channel propagation
    if n_steps > 0:
        filtered = dbp_single_channel(filtered, p, n_steps)

    # Step 3: sinc matched filter and downsampling
    matched = brickwall_filter(filtered, p.baud_hz)
    y = matched.samples[::osf]
    if y.size * osf != w.samples.size:
        raise FramingError(f"Downsampled length {y.size} does not match {w.samples.size} samples")

    # Step 4: remove the mean phase rotation
    return y * np.exp(-1j * theta_hat)


class FiberChannel:
    """Simulator handle for the full WDM fiber path"""

    def __init__(
        self,
        link: FiberParams,
        spec: ConstellationSpec,
        numerics: NumericsConfig,
        theta_hat: float = 0.0,
    ):
        self.link = link
        self.spec = spec
        self.numerics = numerics
        self.theta_hat = theta_hat

    def propagate(self, x: np.ndarray, rng: np.random.Generator) -> Tuple[ChannelOutput, Waveform]:
        """Channel output together with the transmitted WDM waveform."""
        interferers = [sample_symbols(self.spec, x.size, rng) for _ in range(self.link.n_wdm - 1)]
        tx = modulate_wdm(x, interferers, self.link, self.numerics.osf)
        rx = ssfm_propagate(tx, self.link, self.numerics.n_steps, rng=rng, noise_on=True)
        y = receiver_frontend(rx, self.link, self.theta_hat, self.numerics.n_steps)
        return ChannelOutput(y=y), tx

    def transmit(self, x: np.ndarray, rng: np.random.Generator) -> ChannelOutput:
        return self.propagate(x, rng)[0]

    def with_phase_correction(self, theta_hat: float) -> "FiberChannel":
        return FiberChannel(self.link, self.spec, self.numerics, theta_hat)
