import asyncio
import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sqlalchemy import select, update
from sqlalchemy.exc import OperationalError
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from app.models.database import ExperimentTask
from app.models.schemas import (
    AirReport,
    CpanParams,
    ExperimentConfig,
    ParamTableRow,
    TaskStatus,
    dbm_to_watts,
)
from app.services.air_estimator import (
    ChannelSimulator,
    air_cscg,
    air_genie,
    air_memoryless_awgn,
    air_rings,
    evaluation_mask,
    map_sequences,
    summarize_peak,
)
from app.services.constellations import ConstellationSpec, sample_symbols
from app.services.cpan_channel import ChannelOutput, CpanChannel, cpan_params_from_link, lookup_params
from app.services.database import async_session_maker
from app.services.estimation import TrainingSet, estimate_mean_phase, estimate_sigma_n
from app.services.fiber_link import FiberChannel, Waveform
from app.services.sic_detector import SicSchedule
from app.utils.config_loader import ConfigLoader
from app.utils.file_formats import read_param_table, write_air_tsv, write_param_table
from app.utils.rng import RngStreams

logger = logging.getLogger(__name__)


def default_workers() -> int:
    return int(os.getenv("SIC_WORKERS", "1"))


def output_dir() -> str:
    return os.getenv("SIC_OUTPUT_DIR", "results")


def param_table_path(cfg: ExperimentConfig) -> str:
    return os.path.splitext(cfg.output_path)[0] + "_params.tsv"


def peak_table_path(cfg: ExperimentConfig) -> str:
    return os.path.splitext(cfg.output_path)[0] + "_peak.tsv"


@dataclass
class PowerSetup:
    """Channel and receiver parameters for one launch power"""

    power_dbm: float
    spec: ConstellationSpec
    channel: ChannelSimulator
    params: CpanParams
    sigma_eff2: Optional[float] = None
    row: Optional[ParamTableRow] = None


@dataclass
class ExperimentOutcome:
    reports: List[AirReport] = field(default_factory=list)
    param_rows: List[ParamTableRow] = field(default_factory=list)
    peaks: List[AirReport] = field(default_factory=list)


class CachedChannel:
    """Replays precomputed outputs for transmit blocks it has already seen"""

    def __init__(self, channel: ChannelSimulator, outputs: Optional[Dict[str, ChannelOutput]] = None):
        self.channel = channel
        self.outputs = outputs or {}

    @staticmethod
    def digest(x: np.ndarray) -> str:
        return hashlib.sha1(np.ascontiguousarray(x, dtype=complex).tobytes()).hexdigest()

    def transmit(self, x: np.ndarray, rng: np.random.Generator) -> ChannelOutput:
        key = self.digest(x)
        if key not in self.outputs:
            self.outputs[key] = self.channel.transmit(x, rng)
        return self.outputs[key]


def build_constellation(cfg: ExperimentConfig, power_w: float) -> ConstellationSpec:
    if cfg.constellation.kind == "cscg":
        return ConstellationSpec.cscg(power_w)
    return ConstellationSpec.urr(cfg.constellation.n_rings, power_w)


def _transmit_job(
    seq_index: int,
    channel: ChannelSimulator,
    spec: ConstellationSpec,
    n: int,
    streams: RngStreams,
    role: str,
    key: Tuple[int, ...],
) -> Tuple[np.ndarray, ChannelOutput]:
    # draws x exactly as the AIR estimators do for the same stream
    rng = streams.generator(role, *key, seq_index)
    x = sample_symbols(spec, n, rng)
    return x, channel.transmit(x, rng)


def fit_fiber_parameters(
    cfg: ExperimentConfig,
    spec: ConstellationSpec,
    power_index: int,
    power_dbm: float,
    streams: RngStreams,
    workers: int = 1,
) -> Tuple[ParamTableRow, float, float]:
    """Training run on the fiber path.

    Returns the parameter-table row, the mean phase rotation and the
    effective noise variance of the memoryless AWGN receiver.
    """
    link = cfg.fiber
    logger.info(f"P={power_dbm:g} dBm - Step 1: propagating {cfg.n_train} training sequences")
    channel = FiberChannel(link, spec, cfg.numerics, theta_hat=0.0)
    job = partial(
        _transmit_job, channel=channel, spec=spec, n=cfg.n, streams=streams, role="train", key=(power_index,)
    )
    results = map_sequences(job, cfg.n_train, workers)

    mask = evaluation_mask(cfg.n, cfg.numerics.edge_exclusion)
    training = TrainingSet([(x[mask], out.y[mask]) for x, out in results])

    logger.info(f"P={power_dbm:g} dBm - Step 2: fitting noise variance and mean phase")
    theta_hat = estimate_mean_phase(training)
    rotation = np.exp(-1j * theta_hat)
    derotated = TrainingSet([(x, y * rotation) for x, y in training.pairs])
    sigma_n2 = estimate_sigma_n(derotated)
    sigma_eff2 = float(np.mean(np.abs(derotated.y - derotated.x) ** 2))

    logger.info(f"P={power_dbm:g} dBm - Step 3: phase-noise parameters from link physics")
    if link.n_wdm > 1:
        sigma_theta2, mu_delta, sigma_delta2 = cpan_params_from_link(link, spec)
    else:
        logger.info("Single-channel link: no inter-channel phase noise")
        sigma_theta2, mu_delta, sigma_delta2 = 0.0, 0.0, 0.0

    row = ParamTableRow(
        power_dbm=power_dbm,
        sigma_theta2=sigma_theta2,
        sigma_delta2=sigma_delta2,
        mu_delta=mu_delta,
        sigma_n2=sigma_n2,
        sigma_ase2=link.sigma_ase2,
    )
    logger.info(
        f"P={power_dbm:g} dBm fitted: theta_hat={theta_hat:.4f} rad, sigma_n2={sigma_n2:.4e}, "
        f"sigma_theta2={sigma_theta2:.4e}, mu_delta={mu_delta:.5f}"
    )
    return row, theta_hat, sigma_eff2


def _surrogate_params(
    cfg: ExperimentConfig, power_dbm: float, table_rows: Optional[Sequence[ParamTableRow]]
) -> CpanParams:
    if cfg.channel == "awgn":
        return CpanParams.awgn(cfg.cpan.sigma_n2)
    if table_rows is not None:
        return lookup_params(table_rows, power_dbm)
    return CpanParams.from_stationary(cfg.cpan.sigma_theta2, cfg.cpan.mu_delta, cfg.cpan.sigma_n2)


def prepare_power(
    cfg: ExperimentConfig,
    power_index: int,
    power_dbm: float,
    streams: RngStreams,
    table_rows: Optional[Sequence[ParamTableRow]] = None,
    workers: int = 1,
) -> PowerSetup:
    spec = build_constellation(cfg, dbm_to_watts(power_dbm))
    if cfg.channel != "fiber":
        params = _surrogate_params(cfg, power_dbm, table_rows)
        return PowerSetup(power_dbm=power_dbm, spec=spec, channel=CpanChannel(params), params=params)

    row, theta_hat, sigma_eff2 = fit_fiber_parameters(cfg, spec, power_index, power_dbm, streams, workers)
    fiber = FiberChannel(cfg.fiber, spec, cfg.numerics, theta_hat=theta_hat)

    # Test sequences are propagated once and replayed for every receiver.
    logger.info(f"P={power_dbm:g} dBm - Step 4: propagating {cfg.n_seq} test sequences")
    job = partial(
        _transmit_job, channel=fiber, spec=spec, n=cfg.n, streams=streams, role="test", key=(power_index,)
    )
    outputs = {CachedChannel.digest(x): out for x, out in map_sequences(job, cfg.n_seq, workers)}
    return PowerSetup(
        power_dbm=power_dbm,
        spec=spec,
        channel=CachedChannel(fiber, outputs),
        params=row.to_cpan_params(),
        sigma_eff2=sigma_eff2,
        row=row,
    )


def run_power_point(
    cfg: ExperimentConfig,
    power_index: int,
    power_dbm: float,
    table_rows: Optional[Sequence[ParamTableRow]] = None,
    workers: int = 1,
) -> Tuple[List[AirReport], Optional[ParamTableRow]]:
    """All requested receivers at one launch power."""
    streams = RngStreams(cfg.seed)
    setup = prepare_power(cfg, power_index, power_dbm, streams, table_rows, workers)
    spec, params, channel = setup.spec, setup.params, setup.channel
    common = dict(edge=cfg.numerics.edge_exclusion, key=(power_index,), workers=workers)

    reports: List[AirReport] = []
    for receiver in cfg.receivers:
        if receiver == "sic":
            for stages in cfg.stages:
                sched = SicSchedule(cfg.n, stages)
                if spec.kind == "cscg":
                    reports.append(
                        air_cscg(
                            channel, params, sched, cfg.n_seq, cfg.n, streams, spec.power,
                            threshold=cfg.cpan.approximation_threshold, **common,
                        )
                    )
                else:
                    reports.append(
                        air_rings(
                            channel, params, spec.rings, sched, cfg.n_seq, cfg.n, streams,
                            threshold=cfg.cpan.approximation_threshold, **common,
                        )
                    )
        elif receiver == "awgn":
            reports.append(
                air_memoryless_awgn(
                    channel, cfg.n_seq, cfg.n, streams, spec.power, sigma_eff2=setup.sigma_eff2, **common
                )
            )
        elif receiver == "genie":
            reports.append(air_genie(channel, params, cfg.n_seq, cfg.n, streams, spec.power, **common))

    reports = [r.model_copy(update={"power_dbm": power_dbm, "seed": cfg.seed}) for r in reports]
    return reports, setup.row


def _load_table(cfg: ExperimentConfig) -> Optional[List[ParamTableRow]]:
    if cfg.channel == "cpan" and cfg.cpan.param_table:
        return read_param_table(cfg.cpan.param_table)
    return None


def _finish(cfg: ExperimentConfig, outcome: ExperimentOutcome, write: bool) -> ExperimentOutcome:
    outcome.peaks = summarize_peak(outcome.reports)
    if write:
        write_air_tsv(cfg.output_path, outcome.reports)
        write_air_tsv(peak_table_path(cfg), outcome.peaks)
        if outcome.param_rows:
            write_param_table(param_table_path(cfg), outcome.param_rows)
    return outcome


def run_experiment_full(
    cfg: ExperimentConfig, workers: Optional[int] = None, write: bool = True
) -> ExperimentOutcome:
    """Power points in order; sequences of each point go to the worker pool."""
    workers = workers or default_workers()
    table_rows = _load_table(cfg)
    outcome = ExperimentOutcome()
    for power_index, power_dbm in enumerate(cfg.powers_dbm):
        logger.info(f"Power point {power_index + 1}/{len(cfg.powers_dbm)}: {power_dbm:g} dBm")
        reports, row = run_power_point(cfg, power_index, power_dbm, table_rows, workers)
        outcome.reports.extend(reports)
        if row is not None:
            outcome.param_rows.append(row)
    return _finish(cfg, outcome, write)


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> List[AirReport]:
    """Run every power point and receiver of the config; writes the AIR TSV."""
    return run_experiment_full(cfg, workers).reports


def run_sweep(cfg: ExperimentConfig, workers: Optional[int] = None, write: bool = True) -> ExperimentOutcome:
    """Power points dispatched to the worker pool; each point runs its sequences serially."""
    workers = workers or default_workers()
    table_rows = _load_table(cfg)
    job = partial(run_power_point, cfg, table_rows=table_rows, workers=1)
    indices = list(range(len(cfg.powers_dbm)))
    if workers <= 1 or len(indices) == 1:
        results = [job(i, p) for i, p in zip(indices, cfg.powers_dbm)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, indices, cfg.powers_dbm))

    outcome = ExperimentOutcome()
    for reports, row in results:
        outcome.reports.extend(reports)
        if row is not None:
            outcome.param_rows.append(row)
    return _finish(cfg, outcome, write)


def emit_param_table(cfg: ExperimentConfig, workers: Optional[int] = None, write: bool = True) -> List[ParamTableRow]:
    """Surrogate parameters per power: fitted on the fiber path, looked up or fixed otherwise."""
    workers = workers or default_workers()
    streams = RngStreams(cfg.seed)
    table_rows = _load_table(cfg)
    rows = []
    for power_index, power_dbm in enumerate(cfg.powers_dbm):
        if cfg.channel == "fiber":
            spec = build_constellation(cfg, dbm_to_watts(power_dbm))
            row = fit_fiber_parameters(cfg, spec, power_index, power_dbm, streams, workers)[0]
        else:
            params = _surrogate_params(cfg, power_dbm, table_rows)
            row = ParamTableRow(power_dbm=power_dbm, sigma_ase2=cfg.fiber.sigma_ase2, **params.model_dump())
        rows.append(row)
    if write:
        write_param_table(param_table_path(cfg), rows)
    return rows


def simulate_block(
    cfg: ExperimentConfig,
    power_index: int = 0,
    table_rows: Optional[Sequence[ParamTableRow]] = None,
) -> Tuple[np.ndarray, np.ndarray, Optional[Waveform]]:
    """One transmitted/received block at the given power (no phase correction)."""
    power_dbm = cfg.powers_dbm[power_index]
    spec = build_constellation(cfg, dbm_to_watts(power_dbm))
    rng = RngStreams(cfg.seed).generator("test", power_index, 0)
    x = sample_symbols(spec, cfg.n, rng)
    if cfg.channel == "fiber":
        out, tx = FiberChannel(cfg.fiber, spec, cfg.numerics).propagate(x, rng)
        return x, out.y, tx
    if table_rows is None:
        table_rows = _load_table(cfg)
    params = _surrogate_params(cfg, power_dbm, table_rows)
    return x, CpanChannel(params).transmit(x, rng).y, None


class ExperimentPipeline:
    """Runs queued experiment tasks and stores their reports"""

    def __init__(self, workers: Optional[int] = None):
        self.workers = workers or default_workers()

    async def run_experiment_task(self, task_id: str) -> None:
        """Run the experiment of one queued task"""
        async with async_session_maker() as session:
            try:
                await self._store(session, task_id, status=TaskStatus.PROCESSING)

                result = await session.execute(select(ExperimentTask).where(ExperimentTask.id == task_id))
                task = result.scalar_one_or_none()
                if not task:
                    raise ValueError(f"Task {task_id} not found")

                cfg = ConfigLoader.parse_ini(task.config)
                cfg = cfg.model_copy(update={"output_path": os.path.join(output_dir(), f"{task_id}.tsv")})
                loop = asyncio.get_running_loop()
                outcome = await loop.run_in_executor(None, partial(run_experiment_full, cfg, self.workers))

                await self._store(
                    session,
                    task_id,
                    status=TaskStatus.COMPLETED,
                    result=[r.model_dump() for r in outcome.reports],
                    param_table=[row.model_dump() for row in outcome.param_rows],
                )
                logger.info(f"Experiment completed for task {task_id}: {len(outcome.reports)} reports")

            except Exception as e:
                logger.error(f"Experiment failed for task {task_id}: {str(e)}")
                await self._store(session, task_id, status=TaskStatus.FAILED, error_message=str(e))

    @retry(
        stop=stop_after_attempt(3),
        wait=wait_exponential(multiplier=1, min=4, max=10),
        retry=retry_if_exception_type(OperationalError),
        reraise=True,
    )
    async def _store(self, session, task_id: str, **values) -> None:
        """Update a task row, retrying when SQLite reports a locked database"""
        try:
            await session.execute(update(ExperimentTask).where(ExperimentTask.id == task_id).values(**values))
            await session.commit()
        except OperationalError as e:
            logger.warning(f"Database write for task {task_id} failed, retrying: {e}")
            await session.rollback()
            raise


# Global pipeline instance
experiment_pipeline = None


async def get_experiment_pipeline() -> ExperimentPipeline:
    """Get or create experiment pipeline instance"""
    global experiment_pipeline
    if experiment_pipeline is None:
        experiment_pipeline = ExperimentPipeline()
    return experiment_pipeline
