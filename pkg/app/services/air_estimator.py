"""Monte-Carlo AIR estimates h(X) - E[-log q(X | Y, decoded)], in nats until reported in bits."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, TypeVar

import numpy as np

from app.models.schemas import AirReport, CpanParams
from app.services.constellations import (
    ConstellationSpec,
    RingConstellation,
    amplitude_entropy,
    sample_ring_indices,
    sample_symbols,
)
from app.services.cpan_channel import ChannelOutput
from app.services.sic_detector import (
    ApproximationStats,
    SicSchedule,
    detect_amplitudes,
    detect_memoryless_awgn,
    detect_stage1_cscg,
    posterior_cscg,
    posterior_phase,
    run_stage_known,
)
from app.utils.errors import InvalidArgumentError, NumericalFailureError, SingularCovarianceError
from app.utils.math_core import GaussianMessage, complex_gaussian_log_pdf, nats_to_bits
from app.utils.rng import RngStreams

logger = logging.getLogger(__name__)

CI_QUANTILE = 1.96
LOG_TWO_PI = math.log(2.0 * math.pi)

T = TypeVar("T")


class ChannelSimulator(Protocol):
    def transmit(self, x: np.ndarray, rng: np.random.Generator) -> ChannelOutput: ...


@dataclass
class SequenceScore:
    """Information sums (nats) of one sequence over its evaluated symbols"""

    stage_nats: List[float]
    n_eval: int
    amplitude_nats: float = 0.0
    stats: ApproximationStats = field(default_factory=ApproximationStats)
    # sufficient statistics of the memoryless AWGN receiver
    moments: Dict[str, float] = field(default_factory=dict)


def evaluation_mask(n: int, edge: int) -> np.ndarray:
    """Symbols that enter the AIR statistics (edge symbols dropped on both sides)."""
    if 2 * edge >= n:
        raise InvalidArgumentError(f"Edge exclusion {edge} leaves no symbols of {n}")
    mask = np.ones(n, dtype=bool)
    if edge:
        mask[:edge] = False
        mask[n - edge:] = False
    return mask


def jackknife_halfwidth(values: Sequence[float]) -> float:
    """Jackknife confidence half-width of the mean of per-sequence values."""
    values = np.asarray(values, dtype=float)
    count = values.size
    if count < 2:
        return 0.0
    total = math.fsum(values)
    leave_one_out = (total - values) / (count - 1)
    centre = math.fsum(leave_one_out) / count
    variance = (count - 1) / count * math.fsum((leave_one_out - centre) ** 2)
    return CI_QUANTILE * math.sqrt(variance)


def map_sequences(job: Callable[[int], T], n_seq: int, workers: int) -> List[T]:
    """Run job(k) for k = 0..n_seq-1, in a process pool when workers > 1."""
    if workers <= 1 or n_seq == 1:
        return [job(k) for k in range(n_seq)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(n_seq)))


def _masked_fsum(values: np.ndarray, mask: np.ndarray) -> float:
    return math.fsum(values[mask].tolist())


def _log_q_cscg(x: np.ndarray, moments, offset: int, indices: np.ndarray) -> np.ndarray:
    try:
        return complex_gaussian_log_pdf(x, moments)
    except SingularCovarianceError as e:
        variance = np.atleast_1d(moments.variance)
        pseudo = np.abs(np.atleast_1d(moments.pseudo_variance))
        bad = np.flatnonzero((variance <= 0) | (variance ** 2 - pseudo ** 2 <= 0))
        index = int(indices[bad[0]]) if bad.size else offset
        raise NumericalFailureError(f"Degenerate symbol posterior: {e}", index=index)


def _cscg_sequence(
    seq_index: int,
    channel: ChannelSimulator,
    params: CpanParams,
    sched: SicSchedule,
    power: float,
    streams: RngStreams,
    key: Tuple[int, ...],
    edge: int,
    threshold: float,
) -> SequenceScore:
    rng = streams.generator("test", *key, seq_index)
    x = sample_symbols(ConstellationSpec.cscg(power), sched.n, rng)
    y = channel.transmit(x, rng).y
    mask = evaluation_mask(sched.n, edge)
    entropy = math.log(math.pi * math.e * power)

    stage_nats = []
    stats = ApproximationStats(threshold=threshold)
    for s in range(1, sched.stages + 1):
        idx = sched.stage_indices(s)
        if s == 1:
            moments = detect_stage1_cscg(y[idx], power, params.sigma_theta2, params.sigma_n2)
        else:
            stage = run_stage_known(y, x, sched, s, params, sigma_x2=power, threshold=threshold)
            stats = stats.merge(stage.stats)
            moments = posterior_cscg(y[idx], (stage.mean, stage.variance), power, params.sigma_n2)
        info = entropy + _log_q_cscg(x[idx], moments, int(idx[0]), idx)
        stage_nats.append(_masked_fsum(np.atleast_1d(info), mask[idx]))
    logger.debug(f"CSCG sequence {seq_index}: {math.fsum(stage_nats):.2f} nats")
    return SequenceScore(stage_nats=stage_nats, n_eval=int(mask.sum()), stats=stats)


def _ring_sequence(
    seq_index: int,
    channel: ChannelSimulator,
    params: CpanParams,
    rings: RingConstellation,
    sched: SicSchedule,
    streams: RngStreams,
    key: Tuple[int, ...],
    edge: int,
    threshold: float,
) -> SequenceScore:
    rng = streams.generator("test", *key, seq_index)
    ring_index = sample_ring_indices(rings, sched.n, rng)
    r = rings.radii[ring_index]
    gamma = rng.uniform(-math.pi, math.pi, size=sched.n)
    x = r * np.exp(1j * gamma)
    y = channel.transmit(x, rng).y
    mask = evaluation_mask(sched.n, edge)

    # Amplitudes: H(R) - H_q(R | Y), no SIC gain
    amplitude_entropy_nats = amplitude_entropy(rings) * math.log(2.0)
    posterior = detect_amplitudes(y, rings, params.sigma_n2)
    log_q_amp = posterior.log_probs[np.arange(sched.n), ring_index]
    amplitude_nats = _masked_fsum(amplitude_entropy_nats + log_q_amp, mask)

    # Phases: log(2 pi) - h_q(gamma | Y, R, decoded), per stage
    stage_nats = []
    stats = ApproximationStats(threshold=threshold)
    for s in range(1, sched.stages + 1):
        idx = sched.stage_indices(s)
        if s == 1:
            belief = GaussianMessage(0.0, params.sigma_theta2)
        else:
            stage = run_stage_known(y, x, sched, s, params, sigma_x2=rings.power, threshold=threshold)
            stats = stats.merge(stage.stats)
            belief = (stage.mean, stage.variance)
        phase_post = posterior_phase(y[idx], r[idx], belief, params.sigma_n2)
        info = LOG_TWO_PI + np.atleast_1d(phase_post.log_density(gamma[idx]))
        stage_nats.append(_masked_fsum(info, mask[idx]))
    return SequenceScore(
        stage_nats=stage_nats, n_eval=int(mask.sum()), amplitude_nats=amplitude_nats, stats=stats
    )


def _genie_sequence(
    seq_index: int,
    channel: ChannelSimulator,
    params: CpanParams,
    n: int,
    power: float,
    streams: RngStreams,
    key: Tuple[int, ...],
    edge: int,
) -> SequenceScore:
    rng = streams.generator("test", *key, seq_index)
    x = sample_symbols(ConstellationSpec.cscg(power), n, rng)
    out = channel.transmit(x, rng)
    if out.theta is None:
        raise InvalidArgumentError("Genie-aided receiver needs a channel that reports its phase")
    derotated = out.y * np.exp(-1j * out.theta)
    moments = detect_memoryless_awgn(derotated, power, params.sigma_n2)
    mask = evaluation_mask(n, edge)
    info = math.log(math.pi * math.e * power) + complex_gaussian_log_pdf(x, moments)
    return SequenceScore(stage_nats=[_masked_fsum(info, mask)], n_eval=int(mask.sum()))


def _awgn_moments_sequence(
    seq_index: int,
    channel: ChannelSimulator,
    n: int,
    power: float,
    streams: RngStreams,
    key: Tuple[int, ...],
    edge: int,
) -> SequenceScore:
    rng = streams.generator("test", *key, seq_index)
    x = sample_symbols(ConstellationSpec.cscg(power), n, rng)
    y = channel.transmit(x, rng).y
    mask = evaluation_mask(n, edge)
    xm, ym = x[mask], y[mask]
    moments = {
        "xx": math.fsum((np.abs(xm) ** 2).tolist()),
        "yy": math.fsum((np.abs(ym) ** 2).tolist()),
        "xy": math.fsum(np.real(np.conj(xm) * ym).tolist()),
        "err": math.fsum((np.abs(ym - xm) ** 2).tolist()),
    }
    return SequenceScore(stage_nats=[0.0], n_eval=int(mask.sum()), moments=moments)


def _build_report(
    scores: List[SequenceScore],
    receiver: str,
    constellation: str,
    n_rings: int,
    stages: int,
    n: int,
) -> AirReport:
    count = len(scores)
    stage_rates = np.array([[v / sc.n_eval for v in sc.stage_nats] for sc in scores])
    amp_rates = np.array([sc.amplitude_nats / sc.n_eval for sc in scores])
    totals = amp_rates + stage_rates.sum(axis=1)

    per_stage = [nats_to_bits(math.fsum(stage_rates[:, j]) / count) for j in range(stage_rates.shape[1])]
    per_stage_ci = [nats_to_bits(jackknife_halfwidth(stage_rates[:, j])) for j in range(stage_rates.shape[1])]
    amplitude = nats_to_bits(math.fsum(amp_rates) / count)
    if count < 2:
        logger.warning("Single sequence: confidence interval not available, reported as 0")

    stats = scores[0].stats
    for sc in scores[1:]:
        stats = stats.merge(sc.stats)
    if stats.observations:
        logger.info(
            f"Phase observations: {stats.observations}, approximation violations "
            f"{stats.violation_fraction:.2%}, excluded {stats.excluded}"
        )

    return AirReport(
        receiver=receiver,
        constellation=constellation,
        n_rings=n_rings,
        stages=stages,
        per_stage_bits=per_stage,
        per_stage_ci=per_stage_ci,
        amplitude_bits=amplitude,
        amplitude_ci=nats_to_bits(jackknife_halfwidth(amp_rates)),
        total_bpcu=amplitude + math.fsum(per_stage),
        ci_halfwidth=nats_to_bits(jackknife_halfwidth(totals)),
        n_sequences=count,
        n_symbols=n,
    )


def air_cscg(
    channel: ChannelSimulator,
    params: CpanParams,
    sched: SicSchedule,
    n_seq: int,
    n: int,
    rng: RngStreams,
    power: float,
    edge: int = 0,
    key: Tuple[int, ...] = (),
    workers: int = 1,
    threshold: float = 0.1,
) -> AirReport:
    """SIC AIR of CSCG inputs with S = sched.stages stages."""
    if sched.n != n:
        raise InvalidArgumentError(f"Schedule block length {sched.n} differs from n={n}")
    job = partial(
        _cscg_sequence,
        channel=channel,
        params=params,
        sched=sched,
        power=power,
        streams=rng,
        key=key,
        edge=edge,
        threshold=threshold,
    )
    scores = map_sequences(job, n_seq, workers)
    report = _build_report(scores, "sic", "CSCG", 0, sched.stages, n)
    logger.info(f"SIC-{sched.stages} CSCG AIR: {report.total_bpcu:.4f} +/- {report.ci_halfwidth:.4f} bpcu")
    return report


def air_memoryless_phase_noise(
    channel: ChannelSimulator,
    params: CpanParams,
    n_seq: int,
    n: int,
    rng: RngStreams,
    power: float,
    edge: int = 0,
    key: Tuple[int, ...] = (),
    workers: int = 1,
) -> AirReport:
    """i.i.d. phase-noise receiver, i.e. SIC with a single stage."""
    return air_cscg(channel, params, SicSchedule(n, 1), n_seq, n, rng, power, edge, key, workers)


def air_rings(
    channel: ChannelSimulator,
    params: CpanParams,
    rings: RingConstellation,
    sched: SicSchedule,
    n_seq: int,
    n: int,
    rng: RngStreams,
    edge: int = 0,
    key: Tuple[int, ...] = (),
    workers: int = 1,
    threshold: float = 0.1,
) -> AirReport:
    """SIC AIR of a ring constellation: amplitude term plus per-stage phase terms."""
    if sched.n != n:
        raise InvalidArgumentError(f"Schedule block length {sched.n} differs from n={n}")
    job = partial(
        _ring_sequence,
        channel=channel,
        params=params,
        rings=rings,
        sched=sched,
        streams=rng,
        key=key,
        edge=edge,
        threshold=threshold,
    )
    scores = map_sequences(job, n_seq, workers)
    report = _build_report(scores, "sic", f"URR{rings.n_r}", rings.n_r, sched.stages, n)
    logger.info(
        f"SIC-{sched.stages} URR{rings.n_r} AIR: {report.total_bpcu:.4f} bpcu "
        f"(amplitude {report.amplitude_bits:.4f}, phase {report.phase_bits:.4f})"
    )
    return report


def air_genie(
    channel: ChannelSimulator,
    params: CpanParams,
    n_seq: int,
    n: int,
    rng: RngStreams,
    power: float,
    edge: int = 0,
    key: Tuple[int, ...] = (),
    workers: int = 1,
) -> AirReport:
    """AWGN detector applied after removing the true phase noise."""
    job = partial(
        _genie_sequence,
        channel=channel,
        params=params,
        n=n,
        power=power,
        streams=rng,
        key=key,
        edge=edge,
    )
    report = _build_report(map_sequences(job, n_seq, workers), "genie", "CSCG", 0, 1, n)
    logger.info(f"Genie AIR: {report.total_bpcu:.4f} +/- {report.ci_halfwidth:.4f} bpcu")
    return report


def air_memoryless_awgn(
    channel: ChannelSimulator,
    n_seq: int,
    n: int,
    rng: RngStreams,
    power: float,
    sigma_eff2: Optional[float] = None,
    edge: int = 0,
    key: Tuple[int, ...] = (),
    workers: int = 1,
) -> AirReport:
    """Memoryless AWGN receiver with effective noise variance fitted as mean |y - x|^2.

    Without an explicit sigma_eff2 the variance is fitted on the test data.
    """
    job = partial(_awgn_moments_sequence, channel=channel, n=n, power=power, streams=rng, key=key, edge=edge)
    scores = map_sequences(job, n_seq, workers)

    if sigma_eff2 is None:
        total_eval = sum(sc.n_eval for sc in scores)
        sigma_eff2 = math.fsum(sc.moments["err"] for sc in scores) / total_eval
    if not sigma_eff2 > 0:
        raise InvalidArgumentError(f"Effective noise variance must be positive, got {sigma_eff2}")

    rho = power / (power + sigma_eff2)
    variance = power * sigma_eff2 / (power + sigma_eff2)
    entropy = math.log(math.pi * math.e * power)
    for sc in scores:
        m = sc.moments
        # sum_i |x_i - rho y_i|^2 from the sufficient statistics
        residual = m["xx"] - 2.0 * rho * m["xy"] + rho**2 * m["yy"]
        sc.stage_nats = [sc.n_eval * (entropy - math.log(math.pi * variance)) - residual / variance]

    report = _build_report(scores, "awgn", "CSCG", 0, 1, n)
    logger.info(
        f"Memoryless AWGN receiver (sigma_eff2={sigma_eff2:.4e}): "
        f"{report.total_bpcu:.4f} +/- {report.ci_halfwidth:.4f} bpcu"
    )
    return report


def awgn_capacity_bound(power: float, sigma_ase2: float) -> float:
    """log2(1 + P / sigma^2)."""
    if power < 0 or not sigma_ase2 > 0:
        raise InvalidArgumentError(f"Invalid AWGN bound arguments P={power}, sigma2={sigma_ase2}")
    return math.log2(1.0 + power / sigma_ase2)


def summarize_peak(reports: Sequence[AirReport]) -> List[AirReport]:
    """Best report over power for every (receiver, constellation, rings, stages)."""
    best: Dict[Tuple[str, str, int, int], AirReport] = {}
    for report in reports:
        key = (report.receiver, report.constellation, report.n_rings, report.stages)
        if key not in best or report.total_bpcu > best[key].total_bpcu:
            best[key] = report
    return [best[k] for k in sorted(best)]
