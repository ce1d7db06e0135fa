"""
Builders of small canonical models with known closed-form reserves.
"""

from typing import Optional

from app.models.insurance import (
    CanonicalInsuranceModel,
    CashFlowCanonical,
    InterestCanonical,
)
from app.models.paths import StateSpace
from app.models.rates import (
    INF,
    Atom,
    ConstantDensity,
    CumulativeRate,
    CumulativeSignedMeasure,
    PaymentFunction,
)


def constant_rate(rate: float, end: float = 10.0, dependence: str = "markov") -> CumulativeRate:
    return CumulativeRate(
        segments=[ConstantDensity(start=0.0, end=end, rate=rate)], dependence=dependence
    )


def measure(rate: float = 0.0, end: float = 10.0, atoms: Optional[dict] = None) -> CumulativeSignedMeasure:
    segments = [ConstantDensity(start=0.0, end=end, rate=rate)] if rate else []
    return CumulativeSignedMeasure(
        segments=segments,
        atoms=[Atom(time=t, mass=m) for t, m in sorted((atoms or {}).items())],
    )


def payment(value: float, end: float = INF) -> PaymentFunction:
    return PaymentFunction(segments=[ConstantDensity(start=0.0, end=end, rate=value)])


def build_model(
    states: list[int],
    rates: dict,
    horizon: float = 10.0,
    phi: Optional[dict] = None,
    sojourn: Optional[dict] = None,
    transition: Optional[dict] = None,
    alpha: Optional[list[float]] = None,
    absorbing: Optional[list[int]] = None,
) -> CanonicalInsuranceModel:
    if alpha is None:
        alpha = [1.0] + [0.0] * (len(states) - 1)
    return CanonicalInsuranceModel(
        states=StateSpace(states=states, absorbing_hint=absorbing or []),
        alpha=alpha,
        rates=rates,
        phi=InterestCanonical(rates=phi or {}),
        cashflow=CashFlowCanonical(sojourn=sojourn or {}, transition=transition or {}),
        horizon=horizon,
    )


def term_model(mu: float = 0.1, r: float = 0.05, benefit: float = 1.0) -> CanonicalInsuranceModel:
    """Term insurance over 10 years: V0(0) = mu/(mu+r) (1 - exp(-10 (mu+r)))."""
    return build_model(
        [0, 1],
        {"0->1": constant_rate(mu)},
        phi={0: measure(r), 1: measure(r)},
        transition={"0->1": payment(benefit)} if benefit else {},
        absorbing=[1],
    )


def endowment_model(mu: float = 0.1, r: float = 0.05) -> CanonicalInsuranceModel:
    """Pure endowment paid at 10 when alive: V0(0) = exp(-10 (mu+r))."""
    return build_model(
        [0, 1],
        {"0->1": constant_rate(mu)},
        phi={0: measure(r)},
        sojourn={0: measure(atoms={10.0: 1.0})},
        absorbing=[1],
    )


def discrete_model(
    q: float = 0.5, periods: int = 1, benefit: float = 1.0, interest: float = 0.0
) -> CanonicalInsuranceModel:
    """Death probability q at each integer time, benefit paid on death."""
    times = range(1, periods + 1)
    phi = {0: measure(atoms={float(t): interest for t in times})} if interest else {}
    return build_model(
        [0, 1],
        {"0->1": CumulativeRate(atoms=[Atom(time=float(t), mass=q) for t in times])},
        horizon=float(periods),
        phi=phi,
        transition={"0->1": payment(benefit)},
        absorbing=[1],
    )
