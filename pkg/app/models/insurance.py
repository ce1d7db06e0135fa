"""
Canonical insurance model data models for ThieleKit.

A model is the tuple (alpha, Lambda, Phi, B, b): initial distribution, cumulative
transition rates, state-wise interest, sojourn payments and transition payments.
"""

import math
import re
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .paths import StateSpace
from .rates import CumulativeRate, CumulativeSignedMeasure, PaymentFunction

_PAIR = re.compile(r"^\s*(\d+)\s*->\s*(\d+)\s*$")

EMPTY_MEASURE = CumulativeSignedMeasure()


def pair_key(i: int, j: int) -> str:
    """Canonical key of the ordered state pair (i, j)."""
    return f"{i}->{j}"


def parse_pair(key: str) -> tuple[int, int]:
    """Parse an "i->j" key."""
    match = _PAIR.match(key)
    if not match:
        raise ValueError(f"'{key}' is not a state pair of the form 'i->j'")
    return int(match.group(1)), int(match.group(2))


def _normalize_pairs(value: dict) -> dict:
    out = {}
    for key, item in value.items():
        i, j = parse_pair(key)
        if i == j:
            raise ValueError(f"'{key}' is not a transition between different states")
        out[pair_key(i, j)] = item
    return out


# ===== Reserve-Dependent Payments =====


class ReserveLinkedTransition(BaseModel):
    """b^{kl} = declared b^{kl} + a0 + a1 * (V^k - V^l)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    source: int = Field(..., ge=0, description="State k before the transition")
    target: int = Field(..., ge=0, description="State l after the transition")
    a0: float = Field(0.0, description="Fixed part")
    a1: float = Field(0.0, description="Share of the reserve drop paid out")


class ReserveLinkedSojourn(BaseModel):
    """B^k(dt) = declared B^k(dt) + A0(dt) + V^k(t-) A1(dt)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    state: int = Field(..., ge=0, description="State k")
    base: CumulativeSignedMeasure = Field(default_factory=CumulativeSignedMeasure)
    loading: CumulativeSignedMeasure = Field(default_factory=CumulativeSignedMeasure)


class ReserveDependence(BaseModel):
    """Reserve-dependent payment coefficients with their declared bounds c1 and c2."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    c1: float = Field(..., ge=0, lt=1, description="Upper bound of a1")
    c2: float = Field(..., ge=0, description="Upper bound of a0")
    transitions: list[ReserveLinkedTransition] = Field(default_factory=list)
    sojourns: list[ReserveLinkedSojourn] = Field(default_factory=list)


# ===== Model Components =====


class InterestCanonical(BaseModel):
    """State-wise cumulative interest Phi^i; missing states earn nothing."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rates: dict[int, CumulativeSignedMeasure] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _markov_only(self):
        for state, measure in self.rates.items():
            if measure.dependence != "markov":
                raise ValueError(f"interest of state {state} must depend on time only")
        return self

    def of(self, state: int) -> CumulativeSignedMeasure:
        return self.rates.get(state, EMPTY_MEASURE)


class CashFlowCanonical(BaseModel):
    """Sojourn payments B^i, transition payments b^{ij} and optional reserve dependence."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sojourn: dict[int, CumulativeSignedMeasure] = Field(default_factory=dict)
    transition: dict[str, PaymentFunction] = Field(default_factory=dict)
    reserve_dependence: Optional[ReserveDependence] = None

    @field_validator("transition", mode="before")
    @classmethod
    def _pairs(cls, v: dict) -> dict:
        return _normalize_pairs(v)

    @property
    def is_zero(self) -> bool:
        return (
            all(m.is_zero for m in self.sojourn.values())
            and all(b.is_zero for b in self.transition.values())
            and self.reserve_dependence is None
        )


class CanonicalInsuranceModel(BaseModel):
    """The canonical insurance model (alpha, Lambda, Phi, B, b) on a finite horizon."""

    model_config = ConfigDict(
        frozen=True,
        extra="forbid",
        populate_by_name=True,
        json_schema_extra={
            "example": {
                "states": {"states": [0, 1]},
                "alpha": [1.0, 0.0],
                "lambda": {
                    "0->1": {"segments": [{"kind": "constant", "start": 0, "end": 10, "rate": 0.1}]}
                },
                "horizon": 10.0,
            }
        },
    )

    states: StateSpace
    alpha: list[float] = Field(..., description="Initial distribution aligned with states")
    rates: dict[str, CumulativeRate] = Field(default_factory=dict, alias="lambda")
    phi: InterestCanonical = Field(default_factory=InterestCanonical)
    cashflow: CashFlowCanonical = Field(default_factory=CashFlowCanonical)
    horizon: float = Field(..., gt=0, description="Contract horizon T")

    @field_validator("rates", mode="before")
    @classmethod
    def _pairs(cls, v: dict) -> dict:
        return _normalize_pairs(v)

    @model_validator(mode="after")
    def _check_model(self):
        if math.isinf(self.horizon) or math.isnan(self.horizon):
            raise ValueError("horizon must be finite")
        if len(self.alpha) != len(self.states):
            raise ValueError("alpha must have one entry per state")
        if any(math.isnan(a) or a < 0.0 for a in self.alpha):
            raise ValueError("alpha entries must be non-negative numbers")
        known = set(self.states.states)
        for key in (*self.rates, *self.cashflow.transition):
            i, j = parse_pair(key)
            if i not in known or j not in known:
                raise ValueError(f"pair {key} refers to an unknown state")
        for state in (*self.phi.rates, *self.cashflow.sojourn):
            if state not in known:
                raise ValueError(f"state {state} is not in the state space")
        return self

    # ----- accessors -----

    @property
    def labels(self) -> list[int]:
        return self.states.states

    def rate(self, i: int, j: int) -> Optional[CumulativeRate]:
        return self.rates.get(pair_key(i, j))

    def row(self, i: int) -> dict[int, CumulativeRate]:
        """Non-zero rates out of state i, keyed by destination, in state order."""
        out = {}
        for j in self.labels:
            rate = self.rates.get(pair_key(i, j))
            if rate is not None and not rate.is_zero:
                out[j] = rate
        return out

    def pairs(self) -> list[tuple[int, int]]:
        return [parse_pair(k) for k in self.rates]

    def interest(self, i: int) -> CumulativeSignedMeasure:
        return self.phi.of(i)

    def sojourn(self, i: int) -> CumulativeSignedMeasure:
        return self.cashflow.sojourn.get(i, EMPTY_MEASURE)

    def transition(self, i: int, j: int) -> Optional[PaymentFunction]:
        return self.cashflow.transition.get(pair_key(i, j))

    def alpha_of(self, state: int) -> float:
        return self.alpha[self.states.index(state)]

    def components(self) -> list:
        """Every rate and measure of the model, for scans over breakpoints."""
        return [
            *self.rates.values(),
            *self.phi.rates.values(),
            *self.cashflow.sojourn.values(),
            *self.cashflow.transition.values(),
        ]

    def with_updates(self, **changes) -> "CanonicalInsuranceModel":
        """Copy with replaced fields, re-validated."""
        data = {
            "states": self.states,
            "alpha": self.alpha,
            "lambda": self.rates,
            "phi": self.phi,
            "cashflow": self.cashflow,
            "horizon": self.horizon,
        }
        if "rates" in changes:
            changes["lambda"] = changes.pop("rates")
        data.update(changes)
        return CanonicalInsuranceModel(**data)
