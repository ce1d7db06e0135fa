"""
Result and report data models for ThieleKit.
"""

import math
from datetime import datetime
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .paths import HistoryContext


class Violation(BaseModel):
    """One violated standing assumption."""

    code: str = Field(..., description="Machine-readable violation code")
    assumption: str = Field(..., description="Assumption or invariant that fails")
    message: str = Field(..., description="Human-readable explanation")
    location: dict = Field(default_factory=dict, description="States, pairs or times involved")


class ValidationReport(BaseModel):
    """Outcome of validate_model; empty means valid."""

    violations: list[Violation] = Field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


class PathStatistics(BaseModel):
    """Counting matrix, occupation indicators and state of a path at time t."""

    states: list[int]
    counts: list[list[int]] = Field(..., description="N^{ij}(t), rows/columns in state order")
    indicators: list[int] = Field(..., description="I^i(t) in state order")
    state: int = Field(..., description="Z(t)")

    def count(self, i: int, j: int) -> int:
        return self.counts[self.states.index(i)][self.states.index(j)]

    def indicator(self, i: int) -> int:
        return self.indicators[self.states.index(i)]


class RateIncrement(BaseModel):
    """Increment of a cumulative rate over (s, t]."""

    continuous_increment: float
    atoms: list[tuple[float, float]] = Field(default_factory=list)
    resets_crossed: list[float] = Field(default_factory=list)


# ===== Simulation =====


class SimConfig(BaseModel):
    """Monte Carlo run configuration."""

    model_config = ConfigDict(frozen=True)

    n_paths: int = Field(..., ge=1, description="Number of simulated paths")
    seed: int = Field(..., ge=0, lt=2**64, description="64-bit seed")
    horizon: float = Field(..., gt=0, description="Simulation horizon T")
    start: Optional[HistoryContext] = Field(
        None, description="Start context; None draws the initial state from alpha"
    )
    workers: Optional[int] = Field(None, ge=1, description="Thread count override")

    @model_validator(mode="after")
    def _finite_horizon(self):
        if math.isinf(self.horizon) or math.isnan(self.horizon):
            raise ValueError("simulation horizon must be finite")
        return self


class McEstimate(BaseModel):
    """Monte Carlo estimate with its standard error."""

    value: float
    std_error: float = Field(..., ge=0)
    n: int = Field(..., ge=1)

    def within(self, reference: float, k: float = 3.0) -> bool:
        """Whether reference lies within k standard errors (exact match when SE is 0)."""
        return abs(self.value - reference) <= k * self.std_error + 1e-15


# ===== Backward Solvers =====


class ResidualInterval(BaseModel):
    """Accumulated Thiele residual on one inter-jump interval of a path."""

    state: int
    start: float
    end: float
    accumulated: float = Field(..., description="Residual measure of the whole interval")
    max_abs: float = Field(..., description="Largest absolute running residual")
    per_unit_time: float = Field(..., description="max_abs / max(end - start, 1)")


class ResidualReport(BaseModel):
    """Thiele residual of a candidate along one path."""

    intervals: list[ResidualInterval] = Field(default_factory=list)

    @property
    def max_abs(self) -> float:
        return max((iv.max_abs for iv in self.intervals), default=0.0)

    @property
    def max_per_unit_time(self) -> float:
        return max((iv.per_unit_time for iv in self.intervals), default=0.0)


class DiscreteTable(BaseModel):
    """Discrete Kolmogorov recursion table {}_{T-n}p^{ik}_n."""

    horizon: int
    target: int
    states: list[int]
    values: list[list[float]] = Field(..., description="values[n][index of i]")

    def probability(self, i: int, n: int = 0) -> float:
        return self.values[n][self.states.index(i)]


# ===== Comparisons =====


class ResetWitness(BaseModel):
    """First reset point found in one model and not in the other."""

    source: int
    target: int
    time: float
    present_in: Literal["a", "b"]


class ResetComparison(BaseModel):
    identical: bool
    witness: Optional[ResetWitness] = None


class CantelliReport(BaseModel):
    """Cell-wise comparison of both sides of the Cantelli measure equality."""

    holds: bool
    max_deviation: float
    tolerance: float
    include_interest: bool = False
    worst_state: Optional[int] = None
    worst_cell: Optional[tuple[float, float]] = None


class SignWitness(BaseModel):
    """A grid cell where a safe-side sign condition fails."""

    basis: Literal["pessimistic", "optimistic"]
    time: float = Field(..., description="Left end of the cell")
    state: int
    destination: Optional[int] = Field(None, description="None for interest conditions")
    condition: str
    delta: float


class SafeSideVerdict(BaseModel):
    """Safe-side classification of a second basis against a first one."""

    classification: Literal["pessimistic", "optimistic", "neither"]
    witnesses: list[SignWitness] = Field(default_factory=list)
    tie_break: bool = Field(
        False, description="True when both bases qualify and pessimistic was chosen"
    )


class StateDifference(BaseModel):
    """Reserve differences V_b - V_a of one state over the grid."""

    state: int
    min_difference: float
    max_difference: float
    difference_at_start: float


class ReserveComparison(BaseModel):
    states: list[StateDifference]

    def of(self, state: int) -> StateDifference:
        return next(s for s in self.states if s.state == state)


class BasisDelta(BaseModel):
    """Cell increments of Lambda_b - Lambda_a per pair and Phi_b - Phi_a per state."""

    times: list[float]
    rates: dict[str, list[float]] = Field(default_factory=dict)
    interest: dict[int, list[float]] = Field(default_factory=dict)


class ComparisonReport(BaseModel):
    """JSON comparison report of the compare command."""

    classification: str
    tie_break: bool
    identical_reset_points: bool
    cantelli: Optional[CantelliReport] = None
    witnesses: list[SignWitness] = Field(default_factory=list)
    states: list[StateDifference] = Field(default_factory=list)


# ===== Audit =====


class RunLog(BaseModel):
    """Audit record of one executed command."""

    timestamp: datetime
    command: str
    models: list[str] = Field(default_factory=list)
    result: str
    exit_code: int
    user: Optional[str] = None
