from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, List, Literal
from datetime import datetime
from enum import Enum
import math

from scipy import constants


class TaskStatus(str, Enum):
    QUEUED = "queued"
    PROCESSING = "processing"
    COMPLETED = "completed"
    FAILED = "failed"


def dbm_to_watts(power_dbm: float) -> float:
    return 1e-3 * 10.0 ** (power_dbm / 10.0)


class FiberParams(BaseModel):
    """Physical link parameters in SI units (m, s, W)"""

    model_config = ConfigDict(frozen=True)

    length_m: float = Field(default=1000e3, ge=0)
    beta2: float = Field(default=-21.7e-27, description="Group-velocity dispersion [s^2/m]")
    gamma: float = Field(default=1.27e-3, description="Kerr nonlinearity [1/(W m)]")
    alpha_db_per_km: float = Field(default=0.2, ge=0)
    center_freq_hz: float = Field(default=193.414e12, gt=0)
    eta: float = Field(default=1.0, ge=0, description="Phonon occupancy factor")
    n_wdm: int = Field(default=5, ge=1)
    baud_hz: float = Field(default=50e9, gt=0)
    spacing_hz: float = Field(default=50e9, gt=0)

    @field_validator("n_wdm")
    @classmethod
    def _odd_channel_count(cls, v: int) -> int:
        if v % 2 != 1:
            raise ValueError(f"n_wdm must be odd, got {v}")
        return v

    @classmethod
    def reference_link(cls) -> "FiberParams":
        """1000 km IDRA link, 5 x 50 GBd channels on a 50 GHz grid"""
        return cls()

    @property
    def n_interferer_pairs(self) -> int:
        return (self.n_wdm - 1) // 2

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.baud_hz

    @property
    def alpha_per_m(self) -> float:
        # dB/km -> 1/m (power attenuation coefficient)
        return self.alpha_db_per_km / (10.0 * math.log10(math.e)) / 1e3

    @property
    def n_ase(self) -> float:
        """ASE noise spectral density of ideal distributed Raman amplification [W/Hz]"""
        return self.alpha_per_m * self.length_m * constants.h * self.center_freq_hz * self.eta

    @property
    def sigma_ase2(self) -> float:
        """ASE noise variance in one channel bandwidth [W]"""
        return self.n_ase * self.baud_hz


class CpanParams(BaseModel):
    """Surrogate channel: AR(1) phase noise plus CSCG additive noise"""

    model_config = ConfigDict(frozen=True)

    mu_delta: float = Field(ge=0, lt=1)
    sigma_delta2: float = Field(ge=0)
    sigma_theta2: float = Field(ge=0)
    sigma_n2: float = Field(ge=0)

    @model_validator(mode="after")
    def _check_stationary(self):
        expected = self.sigma_theta2 * (1.0 - self.mu_delta**2)
        if not math.isclose(expected, self.sigma_delta2, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(
                f"Phase process is not stationary: sigma_theta2 (1 - mu_delta^2) = {expected}, "
                f"sigma_delta2 = {self.sigma_delta2}"
            )
        return self

    @classmethod
    def from_stationary(cls, sigma_theta2: float, mu_delta: float, sigma_n2: float) -> "CpanParams":
        return cls(
            mu_delta=mu_delta,
            sigma_delta2=sigma_theta2 * (1.0 - mu_delta**2),
            sigma_theta2=sigma_theta2,
            sigma_n2=sigma_n2,
        )

    @classmethod
    def awgn(cls, sigma_n2: float) -> "CpanParams":
        return cls(mu_delta=0.0, sigma_delta2=0.0, sigma_theta2=0.0, sigma_n2=sigma_n2)


class ParamTableRow(BaseModel):
    """One power point of the fitted surrogate parameter table"""

    power_dbm: float
    sigma_theta2: float = Field(ge=0)
    sigma_delta2: float = Field(ge=0)
    mu_delta: float = Field(ge=0, lt=1)
    sigma_n2: float = Field(ge=0)
    sigma_ase2: float = Field(ge=0)

    def to_cpan_params(self) -> CpanParams:
        return CpanParams(
            mu_delta=self.mu_delta,
            sigma_delta2=self.sigma_delta2,
            sigma_theta2=self.sigma_theta2,
            sigma_n2=self.sigma_n2,
        )


class AirReport(BaseModel):
    """Achievable information rate estimate for one receiver at one power.

    per_stage_bits holds each stage's contribution to the per-channel-use rate,
    so total_bpcu = amplitude_bits + sum(per_stage_bits).
    """

    receiver: Literal["sic", "awgn", "genie"] = "sic"
    constellation: str = "CSCG"
    n_rings: int = Field(default=0, ge=0)
    power_dbm: Optional[float] = None
    stages: int = Field(default=1, ge=1)
    per_stage_bits: List[float]
    per_stage_ci: List[float] = Field(default_factory=list)
    amplitude_bits: float = 0.0
    amplitude_ci: float = 0.0
    total_bpcu: float
    ci_halfwidth: float = Field(ge=0)
    n_sequences: int = Field(ge=1)
    n_symbols: int = Field(ge=1)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _check_total(self):
        values = [self.total_bpcu, self.amplitude_bits, self.ci_halfwidth, *self.per_stage_bits]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("AIR report components must be finite")
        expected = self.amplitude_bits + math.fsum(self.per_stage_bits)
        if not math.isclose(self.total_bpcu, expected, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"Total AIR {self.total_bpcu} differs from component sum {expected}")
        return self

    @property
    def phase_bits(self) -> float:
        return math.fsum(self.per_stage_bits)


class ConstellationConfig(BaseModel):
    kind: Literal["cscg", "urr"] = "cscg"
    n_rings: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_rings(self):
        if self.kind == "urr" and self.n_rings < 1:
            raise ValueError("URR constellation needs n_rings >= 1")
        return self


class NumericsConfig(BaseModel):
    osf: int = Field(default=16, ge=1, description="Samples per symbol in the SSFM band")
    n_steps: int = Field(default=1000, ge=1, description="Split-step count over the full link")
    edge_exclusion: int = Field(default=100, ge=0, description="Symbols dropped at each sequence edge")


class CpanConfig(BaseModel):
    """Surrogate parameters: a power-indexed table, or fixed values for every power"""

    param_table: Optional[str] = None
    sigma_theta2: Optional[float] = Field(default=None, ge=0)
    mu_delta: Optional[float] = Field(default=None, ge=0, lt=1)
    sigma_n2: Optional[float] = Field(default=None, gt=0)
    approximation_threshold: float = Field(default=0.1, gt=0)


class ExperimentConfig(BaseModel):
    channel: Literal["cpan", "fiber", "awgn"]
    receivers: List[Literal["sic", "awgn", "genie"]] = Field(default_factory=lambda: ["sic"])
    powers_dbm: List[float] = Field(min_length=1)
    stages: List[int] = Field(default_factory=lambda: [1])
    n: int = Field(default=8192, ge=1)
    n_seq: int = Field(default=120, ge=1)
    n_train: int = Field(default=24, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output_path: str = "results/air.tsv"
    constellation: ConstellationConfig = Field(default_factory=ConstellationConfig)
    fiber: FiberParams = Field(default_factory=FiberParams)
    numerics: NumericsConfig = Field(default_factory=NumericsConfig)
    cpan: CpanConfig = Field(default_factory=CpanConfig)

    @model_validator(mode="after")
    def _check_consistency(self):
        for s in self.stages:
            if s < 1 or self.n % s != 0:
                raise ValueError(f"Stage count {s} does not divide block length {self.n}")
        if 2 * self.numerics.edge_exclusion >= self.n:
            raise ValueError("Edge exclusion removes the whole sequence")
        if "genie" in self.receivers and self.channel == "fiber":
            raise ValueError("Genie receiver needs the true phase, which the fiber path lacks")
        if self.constellation.kind != "cscg" and set(self.receivers) - {"sic"}:
            raise ValueError("Genie and memoryless AWGN receivers are defined for CSCG inputs only")
        if self.channel == "awgn" and self.cpan.sigma_n2 is None:
            raise ValueError("AWGN channel needs cpan.sigma_n2")
        if self.channel == "cpan" and self.cpan.param_table is None:
            if self.cpan.sigma_theta2 is None or self.cpan.mu_delta is None or self.cpan.sigma_n2 is None:
                raise ValueError("CPAN channel needs a param_table or sigma_theta2, mu_delta and sigma_n2")
        return self

    def to_ini(self) -> str:
        from app.utils.config_loader import config_to_ini

        return config_to_ini(self)


class TaskResponse(BaseModel):
    id: str
    status: TaskStatus


class ExperimentResultResponse(BaseModel):
    id: str
    status: TaskStatus
    result: Optional[List[AirReport]] = None
    param_table: Optional[List[ParamTableRow]] = None
    error: Optional[str] = None
    created_at: datetime
    updated_at: datetime


class AwgnBoundRequest(BaseModel):
    power_dbm: float
    sigma_ase2: float = Field(gt=0)


class AwgnBoundResponse(BaseModel):
    power_dbm: float
    sigma_ase2: float
    capacity_bpcu: float
