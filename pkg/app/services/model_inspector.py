"""
Model Inspector Service - Structural validation of canonical models, stopped paths,
path statistics and rate increments.
"""

import logging
import math
from collections import defaultdict
from graphlib import CycleError, TopologicalSorter
from typing import TYPE_CHECKING, Literal, Optional

from ..exceptions import DomainError
from ..models.insurance import CanonicalInsuranceModel, pair_key, parse_pair
from ..models.paths import HistoryContext, Path
from ..models.rates import CumulativeRate
from ..models.reports import PathStatistics, RateIncrement, ValidationReport, Violation
from .kernels import resolve

if TYPE_CHECKING:
    from ..config import Settings

logger = logging.getLogger("thielekit.inspector")

Regime = Literal["discrete", "markov", "semi_markov", "path_dependent"]


class ModelInspectorService:
    """
    Service for inspecting models and paths.

    Violations of the standing assumptions are returned as data; only malformed
    arguments raise.
    """

    def __init__(self, settings: "Settings" = None):
        """Initialize the inspector with optional settings injection."""
        if settings is None:
            from ..config import settings as default_settings

            settings = default_settings
        self._settings = settings

    # ===== Validation =====

    def _check_alpha(self, model: CanonicalInsuranceModel) -> list[Violation]:
        total = math.fsum(model.alpha)
        if abs(total - 1.0) > self._settings.NORMALIZATION_TOLERANCE:
            return [
                Violation(
                    code="ALPHA_NOT_NORMALIZED",
                    assumption="alpha",
                    message=f"initial distribution sums to {total!r}, expected 1",
                    location={"sum": total},
                )
            ]
        return []

    def _check_unbounded_cycles(self, model: CanonicalInsuranceModel) -> list[Violation]:
        graph: dict[int, set[int]] = defaultdict(set)
        for key, rate in model.rates.items():
            if not rate.is_zero and not rate.bounded:
                i, j = parse_pair(key)
                graph[j].add(i)
                graph.setdefault(i, set())
        try:
            tuple(TopologicalSorter(graph).static_order())
        except CycleError as exc:
            cycle = [int(s) for s in exc.args[1]]
            return [
                Violation(
                    code="UNBOUNDED_CYCLE",
                    assumption="unbounded-rate cycle",
                    message="every cycle of transitions must contain a rate bounded on compacts",
                    location={"cycle": cycle},
                )
            ]
        return []

    def _check_atom_mass(self, model: CanonicalInsuranceModel) -> list[Violation]:
        out = []
        for i in model.labels:
            sums: dict[tuple[str, float], float] = defaultdict(float)
            for rate in model.row(i).values():
                if rate.dependence == "path_dependent":
                    continue
                for atom in rate.atoms:
                    sums[(rate.dependence, atom.time)] += atom.mass
            for (coords, time), mass in sorted(sums.items()):
                if mass > 1.0 + 1e-12:
                    out.append(
                        Violation(
                            code="ATOM_MASS_EXCEEDED",
                            assumption="atom mass",
                            message=(
                                f"simultaneous atoms out of state {i} sum to {mass!r} > 1 "
                                f"at {time}"
                            ),
                            location={"state": i, "time": time, "mass": mass, "axis": coords},
                        )
                    )
        return out

    def _check_absorbing(self, model: CanonicalInsuranceModel) -> list[Violation]:
        out = []
        for i in model.states.absorbing_hint:
            row = model.row(i)
            if row:
                out.append(
                    Violation(
                        code="ABSORBING_HAS_RATES",
                        assumption="absorbing_hint",
                        message=f"state {i} is flagged absorbing but has outgoing rates",
                        location={"state": i, "destinations": list(row)},
                    )
                )
        return out

    def _check_interest(self, model: CanonicalInsuranceModel) -> list[Violation]:
        out = []
        for state, measure in model.phi.rates.items():
            for atom in measure.atoms:
                if atom.mass <= -1.0:
                    out.append(
                        Violation(
                            code="INTEREST_ATOM",
                            assumption="interest atoms",
                            message=f"interest atom {atom.mass!r} of state {state} is not > -1",
                            location={"state": state, "time": atom.time, "mass": atom.mass},
                        )
                    )
        return out

    def _check_reserve_dependence(self, model: CanonicalInsuranceModel) -> list[Violation]:
        dep = model.cashflow.reserve_dependence
        if dep is None:
            return []
        out = []
        known = set(model.labels)
        for link in dep.transitions:
            where = {"pair": pair_key(link.source, link.target)}
            if link.source not in known or link.target not in known:
                out.append(
                    Violation(
                        code="RESERVE_DEPENDENCE_STATE",
                        assumption="reserve_dependence",
                        message=f"pair {where['pair']} refers to an unknown state",
                        location=where,
                    )
                )
            if not 0.0 <= link.a1 <= dep.c1:
                out.append(
                    Violation(
                        code="RESERVE_DEPENDENCE_BOUND",
                        assumption="reserve_dependence",
                        message=f"a1={link.a1!r} outside [0, c1={dep.c1!r}]",
                        location={**where, "coefficient": "a1"},
                    )
                )
            if not 0.0 <= link.a0 <= dep.c2:
                out.append(
                    Violation(
                        code="RESERVE_DEPENDENCE_BOUND",
                        assumption="reserve_dependence",
                        message=f"a0={link.a0!r} outside [0, c2={dep.c2!r}]",
                        location={**where, "coefficient": "a0"},
                    )
                )
        for link in dep.sojourns:
            if link.state not in known:
                out.append(
                    Violation(
                        code="RESERVE_DEPENDENCE_STATE",
                        assumption="reserve_dependence",
                        message=f"state {link.state} is not in the state space",
                        location={"state": link.state},
                    )
                )
                continue
            interest = model.interest(link.state)
            times = {a.time for a in interest.atoms} | {a.time for a in link.loading.atoms}
            for time in sorted(times):
                jump = interest.atom_at(time) - link.loading.atom_at(time)
                if jump <= -1.0:
                    out.append(
                        Violation(
                            code="RESERVE_DEPENDENCE_BOUND",
                            assumption="reserve_dependence",
                            message=f"interest minus loading jumps by {jump!r} <= -1 at {time}",
                            location={"state": link.state, "time": time, "coefficient": "A1"},
                        )
                    )
        return out

    def validate_model(self, model: CanonicalInsuranceModel) -> ValidationReport:
        """Check the standing assumptions; one violation per failed check."""
        violations = [
            *self._check_alpha(model),
            *self._check_unbounded_cycles(model),
            *self._check_atom_mass(model),
            *self._check_absorbing(model),
            *self._check_interest(model),
            *self._check_reserve_dependence(model),
        ]
        logger.debug(
            "validated model with %d states: %d violations", len(model.states), len(violations)
        )
        return ValidationReport(violations=violations)

    # ===== Paths =====

    def stop_path(self, path: Path, s: float, i: int) -> Path:
        """The (s, i)-stopped path: history strictly before s, ending in state i."""
        if s < 0.0:
            raise DomainError("stopping time must be non-negative", details={"s": s})
        if s == 0.0:
            return Path(points=[(0.0, i)], horizon=path.horizon)
        kept = [(t, z) for t, z in path.points if t < s]
        if kept[-1][1] != i:
            kept.append((s, i))
        return Path(points=kept, horizon=path.horizon)

    def context_at(self, path: Path, s: float, i: Optional[int] = None) -> HistoryContext:
        """History context of the (s, i)-stopped path; i defaults to the path's state at s."""
        state = path.state_at(s) if i is None else i
        stopped = self.stop_path(path, s, state)
        last_time = stopped.points[-1][0]
        return HistoryContext(
            current_time=s,
            current_state=state,
            last_jump_time=last_time,
            prior_points=stopped,
        )

    def path_statistics(
        self,
        path: Path,
        t: float,
        states: Optional[list[int]] = None,
        model: Optional[CanonicalInsuranceModel] = None,
    ) -> PathStatistics:
        """
        Counting matrix N(t), indicators I(t) and state Z(t) of a path.

        Rows and columns follow `states`, else the model's state space, else the
        states the path visits.
        """
        if t < 0.0:
            raise DomainError("time must be non-negative", details={"t": t})
        if states is not None:
            labels = list(states)
        elif model is not None:
            labels = list(model.states.states)
        else:
            labels = sorted({z for _, z in path.points})
        index = {s: k for k, s in enumerate(labels)}
        unknown = sorted({z for _, z in path.points if z not in index})
        if unknown:
            raise DomainError(
                "path visits states outside the state space",
                details={"states": labels, "unknown": unknown},
            )
        counts = [[0] * len(labels) for _ in labels]
        for time, i, j in path.jumps:
            if time <= t:
                counts[index[i]][index[j]] += 1
        state = path.state_at(t)
        indicators = [1 if s == state else 0 for s in labels]
        return PathStatistics(states=labels, counts=counts, indicators=indicators, state=state)

    # ===== Rates =====

    def evaluate_rate(
        self,
        rate: CumulativeRate,
        s: float,
        t: float,
        ctx: Optional[HistoryContext] = None,
        split: bool = False,
    ) -> RateIncrement:
        """
        Increment of a cumulative rate over (s, t] on the stopped history ctx.

        With split=True an interval containing reset points is cut there and the
        increment since the last reset crossed is returned.
        """
        if t < s:
            raise DomainError("interval end precedes its start", details={"s": s, "t": t})
        if ctx is not None and ctx.last_jump_time > s:
            raise DomainError(
                "rates may not look past the last jump of the history",
                details={"s": s, "last_jump_time": ctx.last_jump_time},
            )
        resolved = resolve(rate, ctx)
        crossed = [r for r in resolved.resets if s < r <= t]
        if crossed and not split:
            raise DomainError(
                "interval crosses a reset point; request a split",
                details={"interval": [s, t], "resets": crossed},
            )
        start = crossed[-1] if crossed else s
        return RateIncrement(
            continuous_increment=resolved.integral(start, t),
            atoms=resolved.atoms_in(start, t),
            resets_crossed=crossed,
        )

    def detect_regime(self, model: CanonicalInsuranceModel) -> Regime:
        """Most specific regime whose solvers serve the model."""
        rates = [r for r in model.rates.values() if not r.is_zero]
        if any(r.dependence == "path_dependent" for r in rates):
            return "path_dependent"
        measures = [*model.cashflow.sojourn.values(), *model.cashflow.transition.values()]
        if any(r.dependence == "semi_markov" for r in rates) or any(
            m.dependence == "semi_markov" for m in measures
        ):
            return "semi_markov"
        if self._is_discrete(model, rates):
            return "discrete"
        return "markov"

    def _is_discrete(self, model: CanonicalInsuranceModel, rates: list[CumulativeRate]) -> bool:
        if not rates:
            return False

        def integer_atoms(component) -> bool:
            return all(float(a.time).is_integer() for a in component.atoms)

        for rate in rates:
            if rate.has_continuous_part or rate.resets or not integer_atoms(rate):
                return False
        for measure in (*model.phi.rates.values(), *model.cashflow.sojourn.values()):
            if not measure.is_zero and (
                any(
                    not (p.kind == "constant" and p.rate == 0.0)
                    for seg in measure.segments
                    for p in seg.pieces()
                )
                or not integer_atoms(measure)
            ):
                return False
        return float(model.horizon).is_integer()


# Type alias for cleaner imports
ModelInspector = ModelInspectorService
