"""
Measure Service - Lebesgue-Stieltjes integrals, survival/jump kernels and the
savings account.
"""

import logging
import math
from typing import TYPE_CHECKING, Callable, Iterable, Optional, Union

from ..exceptions import DomainError
from ..models.insurance import InterestCanonical
from ..models.paths import HistoryContext, Path
from ..models.rates import CumulativeRate, CumulativeSignedMeasure, PaymentFunction
from .kernels import HazardProfile, KernelPair, Resolved, gauss_legendre, resolve

if TYPE_CHECKING:
    from ..config import Settings

logger = logging.getLogger("thielekit.measure")

Integrand = Union[Callable[[float], float], PaymentFunction, float]


class MeasureService:
    """
    Service for integrals against cumulative rates and signed measures.

    Continuous parts are integrated piece by piece with Gauss-Legendre rules split at
    every breakpoint of the measure and the integrand; atoms contribute f(u) * mass.
    """

    def __init__(self, settings: "Settings" = None):
        """Initialize the service with optional settings injection."""
        if settings is None:
            from ..config import settings as default_settings

            settings = default_settings
        self._settings = settings

    # ===== Integration =====

    def _integrand(self, f: Integrand) -> tuple[Callable[[float], float], list[float], bool]:
        if isinstance(f, PaymentFunction):
            if f.dependence != "markov":
                raise DomainError(
                    "duration-dependent payments need an entry time; pass a callable",
                    details={"dependence": f.dependence},
                )
            return (lambda u: f.value(u)), f.breakpoints(), f.is_piecewise_constant
        if isinstance(f, (int, float)):
            c = float(f)
            return (lambda u: c), [], True
        return f, [], False

    def integrate_resolved(
        self,
        fn: Callable[[float], float],
        resolved: Resolved,
        s: float,
        t: float,
        breakpoints: Iterable[float] = (),
        constant: bool = False,
    ) -> float:
        """Integral of fn over (s, t] against an already resolved measure."""
        if t <= s:
            return 0.0
        for r in resolved.resets:
            if s < r <= t:
                raise DomainError(
                    "integration interval crosses a reset point; split it first",
                    details={"interval": [s, t], "reset": r},
                )
        cuts = {s, t}
        for p in (*resolved.breakpoints(), *breakpoints):
            if s < p < t:
                cuts.add(p)
        cuts = sorted(cuts)
        x, w = gauss_legendre(self._settings.QUADRATURE_NODES)
        total = 0.0
        for a, b in zip(cuts, cuts[1:]):
            for piece in resolved.pieces:
                if piece.is_null or piece.start > a or piece.end < b:
                    continue
                if constant and piece.is_constant:
                    total += fn(a) * piece.integral(a, b)
                    continue
                span = b - a
                acc = 0.0
                for xq, wq in zip(x, w):
                    u = a + span * float(xq)
                    acc += float(wq) * fn(u) * piece.density(u)
                total += acc * span
        for time, mass in resolved.atoms_in(s, t):
            total += fn(time) * mass
        return total

    def ls_integrate(
        self,
        f: Integrand,
        m: Union[CumulativeSignedMeasure, CumulativeRate],
        s: float,
        t: float,
        ctx: Optional[HistoryContext] = None,
        breakpoints: Iterable[float] = (),
    ) -> float:
        """
        Lebesgue-Stieltjes integral of f over (s, t] against m.

        f may be a callable of time, a Markov PaymentFunction or a constant. Extra
        breakpoints mark points where a callable f is not smooth.
        """
        fn, f_points, constant = self._integrand(f)
        resolved = resolve(m, ctx)
        return self.integrate_resolved(
            fn, resolved, s, t, breakpoints=[*f_points, *breakpoints], constant=constant
        )

    # ===== Kernels =====

    def _profile(
        self, lambda_row: dict[int, CumulativeRate], s: float, ctx: Optional[HistoryContext]
    ) -> HazardProfile:
        rows = {j: resolve(rate, ctx) for j, rate in lambda_row.items()}
        return HazardProfile(
            rows,
            origin=s,
            nodes=self._settings.QUADRATURE_NODES,
            floor=self._settings.SURVIVAL_FLOOR,
            xtol=self._settings.INVERSION_XTOL,
        )

    def survival_kernel(
        self,
        lambda_row: dict[int, CumulativeRate],
        s: float,
        ctx: Optional[HistoryContext] = None,
    ) -> KernelPair:
        """Survival kernel p_s^i of the state whose outgoing rates are lambda_row."""
        if ctx is not None and s < ctx.last_jump_time:
            raise DomainError(
                "kernel origin precedes the last jump of the history",
                details={"s": s, "last_jump_time": ctx.last_jump_time},
            )
        return KernelPair(self._profile(lambda_row, s, ctx), s)

    def jump_kernel(
        self,
        lambda_row: dict[int, CumulativeRate],
        s: float,
        ctx: Optional[HistoryContext] = None,
    ) -> KernelPair:
        """Survival and jump kernels p_s^i, p_s^{ij} with defect and reset horizon."""
        return self.survival_kernel(lambda_row, s, ctx)

    # ===== Savings Account =====

    def _occupancy(
        self, path_or_ctx: Union[Path, HistoryContext], s: float, t: float
    ) -> list[tuple[int, float, float]]:
        if isinstance(path_or_ctx, HistoryContext):
            return [(path_or_ctx.current_state, s, t)]
        return [(z, a, b) for z, a, b, _ in path_or_ctx.sojourns(s, t)]

    def log_accumulation(
        self,
        phi: InterestCanonical,
        path_or_ctx: Union[Path, HistoryContext],
        s: float,
        t: float,
    ) -> float:
        """log(kappa(t) / kappa(s)) along the occupancy of the path."""
        if t <= s:
            return 0.0
        total = 0.0
        for state, a, b in self._occupancy(path_or_ctx, s, t):
            measure = phi.of(state)
            if measure.is_zero:
                continue
            resolved = resolve(measure)
            total += resolved.integral(a, b)
            for time, mass in resolved.atoms_in(a, b):
                if mass <= -1.0:
                    raise DomainError(
                        "interest atom must exceed -1",
                        details={"state": state, "time": time, "mass": mass},
                    )
                total += math.log1p(mass)
        return total

    def savings_account(
        self,
        phi: InterestCanonical,
        path_or_ctx: Union[Path, HistoryContext],
        s: float,
        t: float,
    ) -> float:
        """Accumulation factor kappa(t) / kappa(s) over (s, t]."""
        return math.exp(self.log_accumulation(phi, path_or_ctx, s, t))
