"""
On-disk formats: parameter tables and AIR reports (TSV), raw waveform dumps.

TSV files start with one header line naming the columns, tab separated.
"""

import io
import logging
import os
from typing import List, Sequence

import numpy as np

from app.models.schemas import AirReport, ParamTableRow
from app.utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

PARAM_TABLE_COLUMNS = ("power_dbm", "sigma_theta2", "sigma_delta2", "mu_delta", "sigma_n2", "sigma_ase2")
AIR_COLUMNS = (
    "power_dbm", "constellation", "n_rings", "S", "stage", "air_bpcu",
    "ci", "n_seq", "n_sym", "seed", "receiver",
)
SIMULATION_COLUMNS = ("index", "x_re", "x_im", "y_re", "y_im")


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def format_param_table(rows: Sequence[ParamTableRow]) -> str:
    lines = ["\t".join(PARAM_TABLE_COLUMNS)]
    for row in rows:
        lines.append("\t".join(repr(float(getattr(row, c))) for c in PARAM_TABLE_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_param_table(text: str) -> List[ParamTableRow]:
    lines = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not lines:
        raise ConfigurationError("Parameter table is empty")
    header = tuple(lines[0].split("\t"))
    if header != PARAM_TABLE_COLUMNS:
        raise ConfigurationError(f"Unexpected parameter-table header, expected: {', '.join(PARAM_TABLE_COLUMNS)}")
    rows = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(PARAM_TABLE_COLUMNS):
            raise ConfigurationError(f"Parameter table line {number}: expected {len(PARAM_TABLE_COLUMNS)} fields")
        try:
            rows.append(ParamTableRow(**{c: float(v) for c, v in zip(PARAM_TABLE_COLUMNS, fields)}))
        except ValueError:
            raise ConfigurationError(f"Parameter table line {number}: invalid numeric value")
    return rows


def read_param_table(path: str) -> List[ParamTableRow]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_param_table(f.read())
    except FileNotFoundError:
        raise ConfigurationError(f"Parameter table not found: {path}")
    except UnicodeDecodeError:
        raise ConfigurationError(f"Parameter table is not UTF-8 text: {path}")


def write_param_table(path: str, rows: Sequence[ParamTableRow]) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_param_table(rows))
    logger.info(f"Parameter table written to {path} ({len(rows)} rows)")


def air_report_rows(report: AirReport) -> List[List[str]]:
    """One row per stage, an amplitude row for rings, and a total row."""
    power = "" if report.power_dbm is None else f"{report.power_dbm:g}"
    seed = "" if report.seed is None else str(report.seed)

    def row(stage: str, value: float, ci: float) -> List[str]:
        return [
            power, report.constellation, str(report.n_rings), str(report.stages), stage,
            f"{value:.6f}", f"{ci:.6f}", str(report.n_sequences), str(report.n_symbols), seed,
            report.receiver,
        ]

    rows = []
    if report.n_rings:
        rows.append(row("amplitude", report.amplitude_bits, report.amplitude_ci))
    cis = report.per_stage_ci or [0.0] * len(report.per_stage_bits)
    for s, (value, ci) in enumerate(zip(report.per_stage_bits, cis), start=1):
        rows.append(row(str(s), value, ci))
    rows.append(row("total", report.total_bpcu, report.ci_halfwidth))
    return rows


def format_air_tsv(reports: Sequence[AirReport]) -> str:
    lines = ["\t".join(AIR_COLUMNS)]
    for report in reports:
        lines.extend("\t".join(r) for r in air_report_rows(report))
    return "\n".join(lines) + "\n"


def write_air_tsv(path: str, reports: Sequence[AirReport]) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_air_tsv(reports))
    logger.info(f"AIR table written to {path} ({len(reports)} reports)")


def format_simulation_tsv(x: np.ndarray, y: np.ndarray) -> str:
    buffer = io.StringIO()
    buffer.write("\t".join(SIMULATION_COLUMNS) + "\n")
    for i, (xi, yi) in enumerate(zip(x, y)):
        buffer.write(f"{i}\t{float(xi.real)!r}\t{float(xi.imag)!r}\t{float(yi.real)!r}\t{float(yi.imag)!r}\n")
    return buffer.getvalue()


def dump_waveform(samples: np.ndarray, sample_rate_hz: float, path: str) -> None:
    """Header: sample rate (float64), length (uint64); payload: interleaved re/im float64."""
    _ensure_parent(path)
    samples = np.asarray(samples, dtype=np.complex128)
    with open(path, "wb") as f:
        f.write(np.array([sample_rate_hz], dtype="<f8").tobytes())
        f.write(np.array([samples.size], dtype="<u8").tobytes())
        f.write(samples.view(np.float64).astype("<f8").tobytes())


def load_waveform(path: str):
    """Returns (samples, sample_rate_hz)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or (len(raw) - 16) % 16:
        raise ConfigurationError(f"Waveform file {path} is truncated")
    sample_rate = float(np.frombuffer(raw[:8], dtype="<f8")[0])
    length = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    payload = np.frombuffer(raw[16:], dtype="<f8")
    if payload.size != 2 * length:
        raise ConfigurationError(f"Waveform file {path}: expected {length} samples, found {payload.size // 2}")
    return payload.astype(np.float64).view(np.complex128).copy(), sample_rate
