"""
Comparison Service - Cantelli checks, safe-side classification and reserve-preserving
model transforms.

Sign conditions and measure equalities are checked cell by cell on a grid holding
every atom, reset point and segment bound of both models, refined at zero crossings
of the sums at risk.
"""

import logging
import math
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np
from scipy.optimize import brentq

from ..exceptions import (
    CoefficientBoundError,
    InputError,
    PreconditionError,
    RegimeError,
    ResetMismatchError,
)
from ..models.grid import ReserveField, TimeGrid
from ..models.insurance import (
    EMPTY_MEASURE,
    CanonicalInsuranceModel,
    CashFlowCanonical,
    InterestCanonical,
    pair_key,
    parse_pair,
)
from ..models.rates import (
    Atom,
    ConstantDensity,
    CumulativeSignedMeasure,
    PaymentFunction,
    TabulatedDensity,
)
from ..models.reports import (
    BasisDelta,
    CantelliReport,
    ComparisonReport,
    ReserveComparison,
    ResetComparison,
    ResetWitness,
    SafeSideVerdict,
    SignWitness,
    StateDifference,
)
from .backward import BackwardSolverService, MarkovSystem
from .kernels import Resolved, gauss_legendre, payment_value, resolve
from .model_inspector import ModelInspectorService

if TYPE_CHECKING:
    from ..config import Settings

logger = logging.getLogger("thielekit.comparison")

MAX_WITNESSES = 20


def _subset(model: CanonicalInsuranceModel, states: Iterable[int], name: str) -> set[int]:
    chosen = set(states)
    unknown = chosen - set(model.labels)
    if unknown:
        raise InputError(f"states {sorted(unknown)} are not in the state space", field=name)
    return chosen


class ComparisonService:
    """
    Service for comparing actuarial bases and transforming models without changing
    their reserves.

    Model A is the reference basis; model B (the barred basis) is compared against it.
    """

    def __init__(self, settings: "Settings" = None):
        """Initialize the service with optional settings injection."""
        if settings is None:
            from ..config import settings as default_settings

            settings = default_settings
        self._settings = settings
        self._solver = BackwardSolverService(settings)
        self._inspector = ModelInspectorService(settings)

    # ===== Preconditions =====

    def identical_reset_points(
        self, model_a: CanonicalInsuranceModel, model_b: CanonicalInsuranceModel
    ) -> ResetComparison:
        """Whether both models declare the same reset points per pair and dependence class."""
        keys = sorted(set(model_a.rates) | set(model_b.rates), key=parse_pair)
        for key in keys:
            i, j = parse_pair(key)
            sets = []
            for model in (model_a, model_b):
                rate = model.rates.get(key)
                if rate is None or rate.is_zero:
                    sets.append(set())
                else:
                    sets.append({(rate.dependence, r) for r in rate.resets})
            only_a, only_b = sets[0] - sets[1], sets[1] - sets[0]
            if only_a or only_b:
                first = min(
                    [(t, "a") for _, t in only_a] + [(t, "b") for _, t in only_b]
                )
                return ResetComparison(
                    identical=False,
                    witness=ResetWitness(source=i, target=j, time=first[0], present_in=first[1]),
                )
        return ResetComparison(identical=True)

    def _require_resets(
        self, model_a: CanonicalInsuranceModel, model_b: CanonicalInsuranceModel, operation: str
    ) -> None:
        check = self.identical_reset_points(model_a, model_b)
        if not check.identical:
            raise ResetMismatchError(operation, check.witness.model_dump())

    def _require_markov(self, model: CanonicalInsuranceModel, operation: str) -> None:
        regime = self._inspector.detect_regime(model)
        if regime not in ("markov", "discrete"):
            raise RegimeError(regime, operation, hint="cell-wise checks need time-only rates")

    def _require_alike(
        self, model_a: CanonicalInsuranceModel, model_b: CanonicalInsuranceModel, operation: str
    ) -> None:
        if model_a.labels != model_b.labels:
            raise PreconditionError(operation, "models must share the state space")
        if model_a.horizon != model_b.horizon:
            raise PreconditionError(
                operation,
                "models must share the horizon",
                witness={"a": model_a.horizon, "b": model_b.horizon},
            )

    # ===== Grids =====

    def _shared_grid(
        self,
        model_a: CanonicalInsuranceModel,
        model_b: CanonicalInsuranceModel,
        grid: Optional[TimeGrid],
        h: Optional[float],
    ) -> TimeGrid:
        base = grid or self._solver.build_grid(model_a, h)
        return base.with_points(self._solver.build_grid(model_b, base.step).mandatory)

    def _cells(
        self, reserves: ReserveField, model_b: CanonicalInsuranceModel, extra: Iterable[float] = ()
    ) -> list[float]:
        times = [float(t) for t in reserves.times]
        lo, hi = times[0], times[-1]
        points = set(times) | {p for p in MarkovSystem(model_b).breakpoints() if lo < p < hi}
        points |= {p for p in extra if lo < p < hi}
        return sorted(points)

    # ===== Cell Measures =====

    def _nodes(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        x, w = gauss_legendre(self._settings.QUADRATURE_NODES)
        return a + (b - a) * x, w

    def _increment(self, res: Resolved, a: float, b: float, continuous_only: bool = False) -> float:
        """Increment over (a, b]; pole pieces are integrated over the open cell."""
        total = 0.0
        for p in res.pieces:
            lo, hi = max(a, p.start), min(b, p.end)
            if hi <= lo or p.is_null:
                continue
            if p.is_pole and hi >= p.end:
                u, w = self._nodes(lo, hi)
                total += (hi - lo) * float(sum(wq * p.density(float(uq)) for uq, wq in zip(u, w)))
            else:
                total += p.integral(lo, hi)
        if not continuous_only:
            total += sum(m for _, m in res.atoms_in(a, b))
        return total

    def _side(
        self,
        system: MarkovSystem,
        ii: int,
        a: float,
        b: float,
        u: np.ndarray,
        w: np.ndarray,
        vecs: list[np.ndarray],
        v_end: np.ndarray,
        v_end_left: np.ndarray,
        include_interest: bool,
    ) -> float:
        h = b - a
        total = 0.0
        for idx, res in system.sojourn:
            if idx == ii:
                total += self._increment(res, a, b)
        for src, dst, res, payment in system.rates:
            if src != ii:
                continue
            acc = 0.0
            for uq, wq, vec in zip(u, w, vecs):
                mu = res.density(float(uq))
                if mu:
                    acc += wq * (payment_value(payment, float(uq)) + vec[dst] - vec[ii]) * mu
            total += h * acc
            for t, mass in res.atoms_in(a, b):
                total += (payment_value(payment, t) + v_end[dst] - v_end[ii]) * mass
        if include_interest:
            for idx, res in system.interest:
                if idx != ii:
                    continue
                acc = sum(wq * vec[ii] * res.density(float(uq)) for uq, wq, vec in zip(u, w, vecs))
                total -= h * acc
                for _, mass in res.atoms_in(a, b):
                    total -= v_end_left[ii] * mass
        return total

    # ===== Cantelli =====

    def cantelli_check(
        self,
        model_a: CanonicalInsuranceModel,
        model_b: CanonicalInsuranceModel,
        reserves: Optional[ReserveField] = None,
        grid: Optional[TimeGrid] = None,
        include_interest: bool = False,
        h: Optional[float] = None,
    ) -> CantelliReport:
        """
        Compare B + sum_j (b + V^j - V^i) Lambda of both models cell by cell, with the
        reserves V of model A.

        include_interest adds -V^i(t-) Phi(dt) on both sides, allowing Phi to differ.
        """
        operation = "cantelli_check"
        self._require_alike(model_a, model_b, operation)
        self._require_markov(model_a, operation)
        self._require_markov(model_b, operation)
        self._require_resets(model_a, model_b, operation)
        if not include_interest and model_a.phi != model_b.phi:
            raise PreconditionError(
                operation, "interest differs between the models; pass include_interest"
            )
        if reserves is None:
            shared = self._shared_grid(model_a, model_b, grid, h)
            reserves = self._solver.thiele_solve(model_a, shared)
        sys_a, sys_b = MarkovSystem(model_a), MarkovSystem(model_b)
        points = self._cells(reserves, model_b, grid.points if grid is not None else ())
        tolerance = self._settings.COMPARISON_TOLERANCE
        worst, worst_state, worst_cell = 0.0, None, None
        for a, b in zip(points, points[1:]):
            u, w = self._nodes(a, b)
            vecs = [reserves.vector(float(uq)) for uq in u]
            v_end = reserves.vector(b)
            v_end_left = reserves.vector(b, left=True)
            for ii, state in enumerate(sys_a.states):
                if b in sys_a.resets[ii]:
                    continue
                lhs = self._side(sys_a, ii, a, b, u, w, vecs, v_end, v_end_left, include_interest)
                rhs = self._side(sys_b, ii, a, b, u, w, vecs, v_end, v_end_left, include_interest)
                deviation = abs(lhs - rhs)
                if deviation > worst:
                    worst, worst_state, worst_cell = deviation, state, (a, b)
        report = CantelliReport(
            holds=worst <= tolerance,
            max_deviation=worst,
            tolerance=tolerance,
            include_interest=include_interest,
            worst_state=worst_state,
            worst_cell=worst_cell,
        )
        logger.info("Cantelli check over %d cells: max deviation %.3e", len(points) - 1, worst)
        return report

    # ===== Safe-Side Classification =====

    def basis_delta(
        self,
        model_a: CanonicalInsuranceModel,
        model_b: CanonicalInsuranceModel,
        grid: Optional[TimeGrid] = None,
        h: Optional[float] = None,
    ) -> BasisDelta:
        """Cell increments of Lambda_b - Lambda_a and Phi_b - Phi_a on a shared grid."""
        operation = "basis_delta"
        self._require_markov(model_a, operation)
        self._require_markov(model_b, operation)
        self._require_resets(model_a, model_b, operation)
        times = self._shared_grid(model_a, model_b, grid, h).points
        delta = BasisDelta(times=list(times))
        for key in sorted(set(model_a.rates) | set(model_b.rates), key=parse_pair):
            ra, rb = (self._resolved_rate(m, key) for m in (model_a, model_b))
            delta.rates[key] = [
                self._increment(rb, a, b) - self._increment(ra, a, b)
                for a, b in zip(times, times[1:])
            ]
        for state in sorted(set(model_a.phi.rates) | set(model_b.phi.rates)):
            pa, pb = resolve(model_a.interest(state)), resolve(model_b.interest(state))
            delta.interest[state] = [
                self._increment(pb, a, b) - self._increment(pa, a, b)
                for a, b in zip(times, times[1:])
            ]
        return delta

    @staticmethod
    def _resolved_rate(model: CanonicalInsuranceModel, key: str) -> Resolved:
        rate = model.rates.get(key)
        return Resolved() if rate is None else resolve(rate)

    def _crossings(self, fn, times: list[float]) -> list[float]:
        """Zero crossings of fn between consecutive times, by bisection."""
        out = []
        values = [fn(t) for t in times]
        for (t0, f0), (t1, f1) in zip(zip(times, values), zip(times[1:], values[1:])):
            if f0 * f1 < 0.0:
                out.append(brentq(fn, t0, t1, xtol=1e-12))
        return out

    def safe_side_classify(
        self,
        model_a: CanonicalInsuranceModel,
        model_b: CanonicalInsuranceModel,
        reserves: Optional[ReserveField] = None,
        grid: Optional[TimeGrid] = None,
        h: Optional[float] = None,
    ) -> SafeSideVerdict:
        """
        Classify basis B against basis A from the sign conditions on Lambda_b - Lambda_a
        and Phi_b - Phi_a, using the sums at risk R^{ij} = b^{ij} + V^j - V^i of A.

        When both classifications hold (zero delta), the verdict is pessimistic with
        tie_break set.
        """
        operation = "safe_side_classify"
        self._require_alike(model_a, model_b, operation)
        self._require_markov(model_a, operation)
        self._require_markov(model_b, operation)
        self._require_resets(model_a, model_b, operation)
        if model_a.cashflow != model_b.cashflow:
            raise PreconditionError(operation, "both bases must carry the same payments B and b")
        if reserves is None:
            shared = self._shared_grid(model_a, model_b, grid, h)
            reserves = self._solver.thiele_solve(model_a, shared)
        sys_a = MarkovSystem(model_a)
        idx = sys_a.index
        keys = sorted(set(model_a.rates) | set(model_b.rates), key=parse_pair)
        pairs = [parse_pair(k) for k in keys]
        interest_states = sorted(set(model_a.phi.rates) | set(model_b.phi.rates))

        def sum_at_risk(i: int, j: int):
            payment = model_a.transition(i, j)
            return lambda t: payment_value(payment, t) + float(
                reserves.vector(t)[idx[j]] - reserves.vector(t)[idx[i]]
            )

        def own(i: int):
            return lambda t: float(reserves.vector(t)[idx[i]])

        base = self._cells(reserves, model_b, grid.points if grid is not None else ())
        extra: list[float] = []
        for i, j in pairs:
            extra += self._crossings(sum_at_risk(i, j), base)
        for i in interest_states:
            extra += self._crossings(own(i), base)
        points = sorted(set(base) | set(extra))

        tol = self._settings.COMPARISON_TOLERANCE
        found = {"pessimistic": [], "optimistic": []}

        def check(sign_value: float, delta: float, t: float, i: int, j: Optional[int]) -> None:
            label, measure, base = ("R", "dLambda", 1.0) if j is not None else ("V", "dPhi", -1.0)
            for basis, orient in (("pessimistic", base), ("optimistic", -base)):
                for positive in (True, False):
                    if not (sign_value >= 0.0 if positive else sign_value <= 0.0):
                        continue
                    d = orient * delta
                    if (d < -tol) if positive else (d > tol):
                        need = ">=" if (orient > 0) == positive else "<="
                        cond = f"{label}{'>=' if positive else '<='}0 needs {measure}{need}0"
                        found[basis].append((t, i, j, cond, delta))

        rates_a = {k: self._resolved_rate(model_a, k) for k in keys}
        rates_b = {k: self._resolved_rate(model_b, k) for k in keys}
        phi_a = {i: resolve(model_a.interest(i)) for i in interest_states}
        phi_b = {i: resolve(model_b.interest(i)) for i in interest_states}
        for a, b in zip(points, points[1:]):
            mid = 0.5 * (a + b)
            v_mid = reserves.vector(mid)
            v_end = reserves.vector(b)
            v_end_left = reserves.vector(b, left=True)
            for key, (i, j) in zip(keys, pairs):
                ra, rb = rates_a[key], rates_b[key]
                payment = model_a.transition(i, j)
                cont = self._increment(rb, a, b, True) - self._increment(ra, a, b, True)
                if cont != 0.0:
                    r_mid = payment_value(payment, mid) + v_mid[idx[j]] - v_mid[idx[i]]
                    check(r_mid, cont, a, i, j)
                jump = rb.atom_at(b) - ra.atom_at(b)
                if jump != 0.0:
                    r_end = payment_value(payment, b) + v_end[idx[j]] - v_end[idx[i]]
                    check(r_end, jump, b, i, j)
            for i in interest_states:
                cont = self._increment(phi_b[i], a, b, True) - self._increment(phi_a[i], a, b, True)
                if cont != 0.0:
                    check(v_mid[idx[i]], cont, a, i, None)
                jump = phi_b[i].atom_at(b) - phi_a[i].atom_at(b)
                if jump != 0.0:
                    check(v_end_left[idx[i]], jump, b, i, None)

        pessimistic, optimistic = not found["pessimistic"], not found["optimistic"]
        if pessimistic:
            classification, shown = "pessimistic", "optimistic"
        elif optimistic:
            classification, shown = "optimistic", "pessimistic"
        else:
            classification, shown = "neither", None
        bases = [shown] if shown else ["pessimistic", "optimistic"]
        witnesses = [
            SignWitness(basis=basis, time=t, state=i, destination=j, condition=cond, delta=d)
            for basis in bases
            for t, i, j, cond, d in found[basis][:MAX_WITNESSES]
        ]
        verdict = SafeSideVerdict(
            classification=classification,
            witnesses=witnesses,
            tie_break=pessimistic and optimistic,
        )
        logger.info("safe-side classification: %s over %d cells", classification, len(points) - 1)
        return verdict

    # ===== Reserve Comparison =====

    def compare_reserves(
        self,
        model_a: CanonicalInsuranceModel,
        model_b: CanonicalInsuranceModel,
        grid: Optional[TimeGrid] = None,
        h: Optional[float] = None,
    ) -> ReserveComparison:
        """Solve both models on a shared grid and report V_b - V_a per state."""
        self._require_alike(model_a, model_b, "compare_reserves")
        shared = self._shared_grid(model_a, model_b, grid, h)
        va = self._solver.thiele_solve(model_a, shared)
        vb = self._solver.thiele_solve(model_b, shared)
        _, ia, ib = np.intersect1d(va.times, vb.times, return_indices=True)
        states = []
        for state in model_a.labels:
            diff = vb.values[ib, vb.index(state)] - va.values[ia, va.index(state)]
            states.append(
                StateDifference(
                    state=state,
                    min_difference=float(np.min(diff)),
                    max_difference=float(np.max(diff)),
                    difference_at_start=vb.value(state, 0.0) - va.value(state, 0.0),
                )
            )
        return ReserveComparison(states=states)

    def compare_models(
        self,
        model_a: CanonicalInsuranceModel,
        model_b: CanonicalInsuranceModel,
        grid: Optional[TimeGrid] = None,
        h: Optional[float] = None,
        include_interest: bool = False,
    ) -> ComparisonReport:
        """Full comparison report: safe-side verdict, Cantelli check and reserve differences."""
        resets = self.identical_reset_points(model_a, model_b)
        differences = self.compare_reserves(model_a, model_b, grid, h)
        report = ComparisonReport(
            classification="not_applicable",
            tie_break=False,
            identical_reset_points=resets.identical,
            states=differences.states,
        )
        markov = all(
            self._inspector.detect_regime(m) in ("markov", "discrete") for m in (model_a, model_b)
        )
        if not resets.identical or not markov:
            return report
        shared = self._shared_grid(model_a, model_b, grid, h)
        reserves = self._solver.thiele_solve(model_a, shared)
        if model_a.cashflow == model_b.cashflow:
            verdict = self.safe_side_classify(model_a, model_b, reserves, grid, h)
            report.classification = verdict.classification
            report.tie_break = verdict.tie_break
            report.witnesses = verdict.witnesses
        if include_interest or model_a.phi == model_b.phi:
            report.cantelli = self.cantelli_check(
                model_a, model_b, reserves, grid, include_interest, h
            )
        return report

    # ===== Transforms =====

    def set_initial_distribution(
        self, model: CanonicalInsuranceModel, alpha: list[float]
    ) -> CanonicalInsuranceModel:
        """Model with the initial distribution replaced."""
        values = [float(a) for a in alpha]
        if len(values) != len(model.states):
            raise InputError("alpha must have one entry per state", field="alpha")
        if any(math.isnan(a) or a < 0.0 for a in values):
            raise InputError("alpha entries must be non-negative numbers", field="alpha")
        total = math.fsum(values)
        if abs(total - 1.0) > self._settings.NORMALIZATION_TOLERANCE:
            raise InputError(f"alpha sums to {total!r}, expected 1", field="alpha")
        return model.with_updates(alpha=values)

    def prune_irrelevant(
        self, model: CanonicalInsuranceModel, keep: Iterable[int]
    ) -> CanonicalInsuranceModel:
        """
        Drop every payment and rate that cannot affect the reserves of the kept states.

        Requires that no rate leads from a kept state to a dropped one. Dropped states
        stay in the state space without rates or payments.
        """
        z0 = _subset(model, keep, "keep")
        for key, rate in model.rates.items():
            i, j = parse_pair(key)
            if i in z0 and j not in z0 and not rate.is_zero:
                raise PreconditionError(
                    "prune_irrelevant",
                    f"rate {key} leads out of the kept states",
                    witness={"source": i, "target": j},
                )

        def kept_pair(key: str) -> bool:
            i, j = parse_pair(key)
            return i in z0 and j in z0

        rates = {k: r for k, r in model.rates.items() if parse_pair(k)[0] in z0}
        dep = model.cashflow.reserve_dependence
        if dep is not None:
            dep = dep.model_copy(
                update={
                    "transitions": [
                        t for t in dep.transitions if t.source in z0 and t.target in z0
                    ],
                    "sojourns": [s for s in dep.sojourns if s.state in z0],
                }
            )
        cashflow = CashFlowCanonical(
            sojourn={i: m for i, m in model.cashflow.sojourn.items() if i in z0},
            transition={k: b for k, b in model.cashflow.transition.items() if kept_pair(k)},
            reserve_dependence=dep,
        )
        logger.info("pruned model to %d relevant states", len(z0))
        return model.with_updates(rates=rates, cashflow=cashflow)

    def transform_shorten(
        self,
        model: CanonicalInsuranceModel,
        keep: Iterable[int],
        reserves: Optional[ReserveField] = None,
        h: Optional[float] = None,
        tabulate: bool = False,
    ) -> CanonicalInsuranceModel:
        """
        Replace all payments after leaving the kept states by the reserve at the exit.

        b^{ij} becomes b^{ij} + V^j for kept i and dropped j; payments among dropped
        states vanish. Requires that dropped states never lead back. With tabulate=True
        the reserves enter as linearly interpolated tables on the reserve grid, which keeps
        the model serializable.
        """
        operation = "transform_shorten"
        z0 = _subset(model, keep, "keep")
        z1 = set(model.labels) - z0
        if not z1:
            return model
        for key, rate in model.rates.items():
            j, i = parse_pair(key)
            if j in z1 and i in z0 and not rate.is_zero:
                raise PreconditionError(
                    operation,
                    f"rate {key} leads back into the kept states",
                    witness={"source": j, "target": i},
                )
        if model.cashflow.reserve_dependence is not None:
            raise PreconditionError(operation, "resolve reserve-dependent payments first")
        if reserves is None:
            reserves = self._solver.thiele_solve(model, h=h)

        transition = {}
        for key, payment in model.cashflow.transition.items():
            i, j = parse_pair(key)
            if i in z1:
                continue
            transition[key] = payment
        for i in sorted(z0):
            for j in sorted(z1):
                rate = model.rate(i, j)
                if rate is None or rate.is_zero:
                    continue
                base = model.transition(i, j) or PaymentFunction()
                if base.adjustment is not None:
                    raise PreconditionError(
                        operation, f"payment {pair_key(i, j)} already carries an adjustment"
                    )
                if tabulate:
                    transition[pair_key(i, j)] = self._tabulated(base, reserves, j, operation)
                else:
                    transition[pair_key(i, j)] = base.model_copy(
                        update={"adjustment": (lambda t, u, j=j: reserves.value(j, t))}
                    )
        cashflow = CashFlowCanonical(
            sojourn={i: m for i, m in model.cashflow.sojourn.items() if i in z0},
            transition=transition,
        )
        logger.info("shortened cash flow after leaving %s", sorted(z0))
        return model.with_updates(cashflow=cashflow)

    @staticmethod
    def _tabulated(
        base: PaymentFunction, reserves: ReserveField, state: int, operation: str
    ) -> PaymentFunction:
        if base.dependence != "markov" or reserves.regime == "semi_markov":
            raise PreconditionError(
                operation, "tabulated reserves need time-only payments and reserves"
            )
        times = [float(t) for t in reserves.times]
        values = [reserves.value(state, t) for t in times]
        table = TabulatedDensity(
            start=times[0], end=times[-1], knots=times, values=values, interpolation="linear"
        )
        return base.model_copy(update={"segments": [*base.segments, table]})

    @staticmethod
    def _extrapolated_tail(rate, horizon: float) -> list[ConstantDensity]:
        """The constant continuation of a rate past its last segment, cut at the horizon."""
        declared_end = max((seg.end for seg in rate.segments), default=0.0)
        return [
            ConstantDensity(start=p.start, end=horizon, rate=p.segment.rate)
            for p in resolve(rate).pieces
            if p.start >= declared_end and p.start < horizon
        ]

    def transform_cemetery(
        self, model: CanonicalInsuranceModel, keep: Iterable[int]
    ) -> CanonicalInsuranceModel:
        """
        Fold the exits into dropped states into the interest of the kept states.

        Phi_bar = Phi + (1 + dPhi) sum_j Lambda^{ij} and dB_bar = dB (1 - sum_j dLambda^{ij});
        the exit rates are removed.
        """
        operation = "transform_cemetery"
        z0 = _subset(model, keep, "keep")
        z1 = set(model.labels) - z0
        if not z1:
            return model
        failed: dict[str, list[str]] = {}
        for key, rate in model.rates.items():
            i, j = parse_pair(key)
            if i in z1 and j in z0 and not rate.is_zero:
                failed.setdefault("rates_back", []).append(key)
            if i in z0 and j in z0 and any(a.mass > 0.0 for a in rate.atoms):
                failed.setdefault("atoms_within", []).append(key)
        for key, payment in model.cashflow.transition.items():
            i, j = parse_pair(key)
            if payment.is_zero:
                continue
            if i in z0 and j in z1:
                failed.setdefault("transition_payments_into", []).append(key)
            if i in z1 and j in z1:
                failed.setdefault("payments_within", []).append(key)
        for state, measure in model.cashflow.sojourn.items():
            if state in z1 and not measure.is_zero:
                failed.setdefault("sojourn_payments", []).append(str(state))
        if failed:
            raise PreconditionError(
                operation, f"conditions failed: {', '.join(sorted(failed))}", witness=failed
            )
        if model.cashflow.reserve_dependence is not None:
            raise PreconditionError(operation, "resolve reserve-dependent payments first")

        rates = dict(model.rates)
        phi = dict(model.phi.rates)
        sojourn = dict(model.cashflow.sojourn)
        for i in sorted(z0):
            exits = [(j, model.rate(i, j)) for j in sorted(z1)]
            exits = [(j, r) for j, r in exits if r is not None and not r.is_zero]
            if not exits:
                continue
            for j, rate in exits:
                if rate.dependence != "markov" or not rate.bounded:
                    raise PreconditionError(
                        operation,
                        f"exit rate {pair_key(i, j)} must be a bounded time-only rate",
                        witness={"source": i, "target": j},
                    )
                del rates[pair_key(i, j)]
            exit_mass: dict[float, float] = {}
            segments = []
            for _, rate in exits:
                segments.extend(rate.segments)
                segments.extend(self._extrapolated_tail(rate, model.horizon))
                for atom in rate.atoms:
                    exit_mass[atom.time] = exit_mass.get(atom.time, 0.0) + atom.mass
            interest = model.interest(i)
            times = sorted({a.time for a in interest.atoms} | set(exit_mass))
            atoms = []
            for t in times:
                d_phi = interest.atom_at(t)
                mass = d_phi + (1.0 + d_phi) * exit_mass.get(t, 0.0)
                if mass != 0.0:
                    atoms.append(Atom(time=t, mass=mass))
            phi[i] = CumulativeSignedMeasure(segments=[*interest.segments, *segments], atoms=atoms)
            payments = model.sojourn(i)
            if payments.atoms and exit_mass:
                if payments.dependence != "markov":
                    raise PreconditionError(
                        operation,
                        f"duration-dependent sojourn atoms of state {i} meet exit atoms",
                    )
                corrected = [
                    Atom(time=a.time, mass=a.mass * (1.0 - exit_mass.get(a.time, 0.0)))
                    for a in payments.atoms
                ]
                sojourn[i] = payments.model_copy(update={"atoms": corrected})
        transition = {
            k: b
            for k, b in model.cashflow.transition.items()
            if not (parse_pair(k)[0] in z0 and parse_pair(k)[1] in z1)
        }
        logger.info("folded exits from %s into interest", sorted(z0))
        return model.with_updates(
            rates=rates,
            phi=InterestCanonical(rates=phi),
            cashflow=CashFlowCanonical(sojourn=sojourn, transition=transition),
        )

    def transform_reserve_dependent(
        self, model: CanonicalInsuranceModel
    ) -> CanonicalInsuranceModel:
        """
        Resolve reserve-dependent payments into an explicit model with the same reserves.

        Per linked pair: b_bar = (b + a0) / (1 - a1) and Lambda_bar = (1 - a1) Lambda.
        Per linked state: B_bar = B + A0 and Phi_bar = Phi - A1.
        """
        operation = "transform_reserve_dependent"
        dep = model.cashflow.reserve_dependence
        if dep is None:
            return model
        rates = dict(model.rates)
        transition = dict(model.cashflow.transition)
        seen: set[str] = set()
        for link in dep.transitions:
            key = pair_key(link.source, link.target)
            if key in seen:
                raise PreconditionError(operation, f"pair {key} is linked twice")
            seen.add(key)
            if not 0.0 <= link.a1 <= dep.c1:
                raise CoefficientBoundError(f"a1[{key}]", link.a1, f"0 <= a1 <= c1={dep.c1!r}")
            if not 0.0 <= link.a0 <= dep.c2:
                raise CoefficientBoundError(f"a0[{key}]", link.a0, f"0 <= a0 <= c2={dep.c2!r}")
            keep_share = 1.0 - link.a1
            rate = model.rates.get(key)
            if rate is not None and link.a1 != 0.0:
                rates[key] = rate.scaled(keep_share)
            base = model.cashflow.transition.get(key) or PaymentFunction()
            if link.a1 != 0.0 or link.a0 != 0.0:
                transition[key] = base.scaled(1.0 / keep_share).plus_constant(link.a0 / keep_share)
        phi = dict(model.phi.rates)
        sojourn = dict(model.cashflow.sojourn)
        for link in dep.sojourns:
            state = link.state
            if link.loading.dependence != "markov":
                raise PreconditionError(
                    operation, f"loading A1 of state {state} must depend on time only"
                )
            interest = model.interest(state)
            atom_times = {a.time for a in interest.atoms} | {a.time for a in link.loading.atoms}
            for t in sorted(atom_times):
                jump = interest.atom_at(t) - link.loading.atom_at(t)
                if jump <= -1.0:
                    raise CoefficientBoundError(
                        f"A1[{state}]", jump, f"jump of Phi - A1 at t={t} must exceed -1"
                    )
            if not link.loading.is_zero:
                phi[state] = interest.plus(link.loading.scaled(-1.0))
            if not link.base.is_zero:
                declared = sojourn.get(state, EMPTY_MEASURE)
                if declared.is_zero:
                    sojourn[state] = link.base
                elif declared.dependence != link.base.dependence:
                    raise PreconditionError(
                        operation, f"A0 of state {state} and B^{state} differ in dependence"
                    )
                else:
                    sojourn[state] = declared.plus(link.base)
        logger.info(
            "resolved reserve dependence on %d pairs and %d states",
            len(dep.transitions),
            len(dep.sojourns),
        )
        return model.with_updates(
            rates=rates,
            phi=InterestCanonical(rates=phi),
            cashflow=CashFlowCanonical(sojourn=sojourn, transition=transition),
        )


# Type alias for cleaner imports
Comparison = ComparisonService
