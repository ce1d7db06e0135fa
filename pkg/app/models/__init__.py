# Models package
from .grid import ReserveField, TimeGrid
from .insurance import (
    CanonicalInsuranceModel,
    CashFlowCanonical,
    InterestCanonical,
    ReserveDependence,
    ReserveLinkedSojourn,
    ReserveLinkedTransition,
    pair_key,
    parse_pair,
)
from .paths import HistoryContext, Path, StateSpace
from .rates import (
    Atom,
    ConstantDensity,
    CumulativeRate,
    CumulativeSignedMeasure,
    LinearDensity,
    MakehamDensity,
    PaymentFunction,
    PoleDensity,
    TabulatedDensity,
)
from .reports import McEstimate, SimConfig, ValidationReport

__all__ = [
    "Atom",
    "CanonicalInsuranceModel",
    "CashFlowCanonical",
    "ConstantDensity",
    "CumulativeRate",
    "CumulativeSignedMeasure",
    "HistoryContext",
    "InterestCanonical",
    "LinearDensity",
    "MakehamDensity",
    "McEstimate",
    "Path",
    "PaymentFunction",
    "PoleDensity",
    "ReserveDependence",
    "ReserveField",
    "ReserveLinkedSojourn",
    "ReserveLinkedTransition",
    "SimConfig",
    "StateSpace",
    "TabulatedDensity",
    "TimeGrid",
    "ValidationReport",
    "pair_key",
    "parse_pair",
]
