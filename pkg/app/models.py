import math
import operator
from enum import Enum
from pathlib import Path
from typing import Annotated, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from app.config import Config


class Experiment(str, Enum):
    K0_CONVERGENCE = "k0_convergence"
    K1_CONVERGENCE = "k1_convergence"
    K1_LONGTIME = "k1_longtime"
    K2_CONVERGENCE = "k2_convergence"
    ENERGY_CONSERVATION = "energy_conservation"
    CUSTOM = "custom"


class CaseName(str, Enum):
    K0 = "k0"
    K1 = "k1"
    K2 = "k2"


class FormField(BaseModel):
    """A spatial field together with its exterior derivative."""

    value: Callable = Field(description="points (..., 2) -> values")
    derivative: Optional[Callable] = Field(
        default=None, description="points (..., 2) -> values of d(value)"
    )


class BlockState(BaseModel):
    k: int = Field(description="Form degree of the middle component")
    t: float = Field(description="Time level")
    sigma: Optional[np.ndarray] = Field(default=None, description="Coefficients in V-")
    mu: np.ndarray = Field(description="Coefficients in V")
    omega: Optional[np.ndarray] = Field(default=None, description="Coefficients in V+")

    class Config:
        arbitrary_types_allowed = True

    def components(self) -> List[np.ndarray]:
        return [c for c in (self.sigma, self.mu, self.omega) if c is not None]

    def vector(self) -> np.ndarray:
        return np.concatenate(self.components())

    def sizes(self) -> Tuple[int, int, int]:
        return tuple(0 if c is None else len(c) for c in (self.sigma, self.mu, self.omega))

    def with_vector(self, x: np.ndarray, t: float) -> "BlockState":
        n_sigma, n_mu, _ = self.sizes()
        return BlockState(
            k=self.k,
            t=t,
            sigma=None if self.sigma is None else x[:n_sigma].copy(),
            mu=x[n_sigma : n_sigma + n_mu].copy(),
            omega=None if self.omega is None else x[n_sigma + n_mu :].copy(),
        )

    def scaled(self, factor: float) -> "BlockState":
        return self.with_vector(factor * self.vector(), self.t)


class EnergyRecord(BaseModel):
    n: int
    step: int
    t: float
    E: float = Field(description="sqrt(x^T M_blk x)")
    H: float = Field(description="norm of the discrete Hodge-wave operator applied to x")


class RunResult(BaseModel):
    records: List[EnergyRecord]
    final: BlockState

    def max_drift(self, key: str) -> float:
        values = np.array([getattr(r, key) for r in self.records])
        if values[0] == 0:
            return float(np.max(np.abs(values)))
        return float(np.max(np.abs(values - values[0])) / values[0])


class ErrorRow(BaseModel):
    case: str
    n: int
    dt: float
    T: float = Field(description="Time at which the errors were measured")
    errors: Dict[str, float]
    window_max: Dict[str, float] = Field(
        default_factory=dict, description="Largest error of tracked columns since the previous report time"
    )

    def __str__(self) -> str:
        values = "  ".join(f"{name}={value:.4e}" for name, value in self.errors.items())
        return f"{self.case} n={self.n} dt={self.dt:g} t={self.T:g}  {values}"


class OrderRow(BaseModel):
    label: str = Field(description="order(n1-n2) or order(lsq)")
    orders: Dict[str, float]


class ErrorReport(BaseModel):
    case: str
    columns: List[str]
    rows: List[ErrorRow]
    orders: List[OrderRow] = Field(default_factory=list)

    @property
    def least_squares(self) -> Dict[str, float]:
        for row in self.orders:
            if row.label == "order(lsq)":
                return row.orders
        return {}

    def column(self, name: str) -> List[float]:
        return [row.errors[name] for row in self.rows]

    def __str__(self) -> str:
        lines = [f"{self.case}: " + ", ".join(self.columns)]
        lines += [str(row) for row in self.rows]
        for order in self.orders:
            values = "  ".join(f"{name}={value:.3f}" for name, value in order.orders.items())
            lines.append(f"{order.label}  {values}")
        return "\n".join(lines)


class RunConfig(BaseModel):
    experiment: Experiment = Field(description="Which experiment to run")
    case: CaseName = Field(description="Manufactured solution / source selector")
    levels: List[int] = Field(description="Mesh levels n (h = 1/n)")
    dt: float = Field(description="Time step")
    T: float = Field(description="Final time")
    tolerance: float = Field(
        default=Config.SOLVER_TOLERANCE, description="Relative residual target of linear solves"
    )
    out_dir: Path = Field(default=Path(Config.OUTPUT_DIR), description="Output directory")
    stride: int = Field(default=1, description="Energy observer stride in steps")
    seed: int = Field(default=0, description="Seed for randomized checks")
    parallel: bool = Field(default=False, description="Solve mesh levels concurrently")
    mean_correct: bool = Field(default=True, description="Remove the mean of 2-form initial data")
    strong_trace: bool = Field(
        default=False, description="Eliminate boundary DOFs in the k=2 case"
    )
    zero_source: bool = Field(default=False, description="Replace the source by f = 0")
    checkpoints: List[float] = Field(
        default_factory=list, description="Extra times at which errors are reported"
    )
    check: bool = Field(default=False, description="Self-check observed orders")
    order_tolerance: float = Field(default=0.25, description="Self-check order window")

    @field_validator("levels")
    def check_levels(cls, v):
        if not v:
            raise ValueError("levels must not be empty")
        if any(n < 1 for n in v):
            raise ValueError(f"levels must be positive integers, got {v}")
        return v

    @field_validator("dt", "T", "tolerance", "order_tolerance")
    def check_positive(cls, v, info):
        if not v > 0 or not math.isfinite(v):
            raise ValueError(f"{info.field_name} must be positive, got {v}")
        return v

    @field_validator("stride")
    def check_stride(cls, v):
        if v < 1:
            raise ValueError(f"stride must be at least 1, got {v}")
        return v

    @model_validator(mode="after")
    def check_time_grid(self):
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T = {self.T} is not an integer multiple of dt = {self.dt}")
        for t in self.checkpoints:
            ratio = t / self.dt
            if t <= 0 or t > self.T * (1 + 1e-12) or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError(f"checkpoint {t} is not a time level in (0, T]")
        return self

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


class LevelResult(BaseModel):
    n: int
    rows: List[ErrorRow]
    energies: List[EnergyRecord]


class TemporalReport(BaseModel):
    case: str
    n: int
    T: float
    dts: List[float]
    errors: List[float] = Field(description="Final-time energy-norm distance to the reference run")
    ratios: List[float]


class LevelTask(BaseModel):
    settings: RunConfig
    n: int


class ExperimentState(BaseModel):
    settings: RunConfig
    rows: Annotated[List[ErrorRow], operator.add] = Field(default_factory=list)
    energies: Annotated[List[EnergyRecord], operator.add] = Field(default_factory=list)
    report: Optional[ErrorReport] = None
    identities: Dict[str, float] = Field(
        default_factory=dict, description="Residuals of the seeded identity checks"
    )
    violations: List[str] = Field(default_factory=list)
    files: List[str] = Field(default_factory=list)
