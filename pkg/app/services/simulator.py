"""
Simulator Service - Exact sequential simulation of policy paths and Monte Carlo
estimators.

Every path owns a counter-based Philox stream keyed by (seed, path index), so results
do not depend on the number of worker threads. Jump times are drawn by inverting the
survival kernel of the current state; destinations by density or atom-mass ratios.
"""

import bisect
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Callable, Optional, Union

import numpy as np

from ..exceptions import InputError, InternalError, PreconditionError
from ..models.insurance import CanonicalInsuranceModel
from ..models.paths import HistoryContext, Path
from ..models.reports import McEstimate, SimConfig
from .kernels import (
    HazardProfile,
    Resolved,
    gauss_legendre,
    payment_value,
    resolve,
    resolve_duration,
    resolve_from,
)
from .measure import MeasureService
from .model_inspector import ModelInspectorService

if TYPE_CHECKING:
    from ..config import Settings

logger = logging.getLogger("thielekit.simulator")

WeightFunction = Union[float, Callable[[float, HistoryContext], float]]


def path_stream(seed: int, index: int) -> np.random.Generator:
    """Independent random stream of one path."""
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _uniform(rng: np.random.Generator) -> float:
    u = float(rng.random())
    return u if u > 0.0 else 5e-324


def _choose(weights: list[float], u: float) -> int:
    total = math.fsum(weights)
    acc = 0.0
    for d, w in enumerate(weights):
        acc += w / total
        if u < acc:
            return d
    return max(d for d, w in enumerate(weights) if w > 0.0)


class _RowSampler:
    """Jump sampler of one state, caching hazard profiles where the history allows."""

    def __init__(
        self, model: CanonicalInsuranceModel, state: int, nodes: int, floor: float, xtol: float
    ):
        self.rates = model.row(state)
        self.destinations = list(self.rates)
        self.nodes = nodes
        self.floor = floor
        self.xtol = xtol
        kinds = {r.dependence for r in self.rates.values()}
        if not self.rates:
            self.kind = "empty"
        elif kinds == {"markov"}:
            self.kind = "markov"
        elif kinds == {"semi_markov"}:
            self.kind = "semi_markov"
        else:
            self.kind = "fresh"
        self._profiles: dict[float, HazardProfile] = {}
        self.breaks = [0.0]
        if self.kind in ("markov", "semi_markov"):
            place = resolve if self.kind == "markov" else resolve_duration
            self.resolved = {j: place(r) for j, r in self.rates.items()}
            self.breaks = sorted({0.0, *self._epoch_breaks(self.resolved)})

    @staticmethod
    def _epoch_breaks(rows: dict[int, Resolved]) -> set[float]:
        points = {r for res in rows.values() for r in res.resets}
        masses: dict[float, float] = defaultdict(float)
        for res in rows.values():
            for t, m in res.atoms:
                masses[t] += m
        points |= {t for t, m in masses.items() if m >= 1.0}
        return points

    def profile(self, s: float, ctx: HistoryContext) -> tuple[HazardProfile, float]:
        if self.kind == "fresh":
            rows = {j: resolve(r, ctx) for j, r in self.rates.items()}
            return HazardProfile(rows, s, self.nodes, self.floor, self.xtol), 0.0
        shift = 0.0 if self.kind == "markov" else ctx.last_jump_time
        x = s - shift
        origin = self.breaks[max(bisect.bisect_right(self.breaks, x) - 1, 0)]
        profile = self._profiles.get(origin)
        if profile is None:
            profile = HazardProfile(self.resolved, origin, self.nodes, self.floor, self.xtol)
            self._profiles[origin] = profile
        return profile, shift


class SimulatorService:
    """
    Service for path simulation and Monte Carlo estimation.

    Estimators reduce per-path values in path-index order.
    """

    def __init__(self, settings: "Settings" = None):
        """Initialize the simulator with optional settings injection."""
        if settings is None:
            from ..config import settings as default_settings

            settings = default_settings
        self._settings = settings
        self._measure = MeasureService(settings)
        self._inspector = ModelInspectorService(settings)
        self._samplers: dict[int, tuple[CanonicalInsuranceModel, dict[int, _RowSampler]]] = {}

    # ===== Sampling =====

    def _sampler(self, model: CanonicalInsuranceModel, state: int) -> _RowSampler:
        entry = self._samplers.get(id(model))
        if entry is None or entry[0] is not model:
            if len(self._samplers) > 64:
                self._samplers.clear()
            entry = (model, {})
            self._samplers[id(model)] = entry
        rows = entry[1]
        sampler = rows.get(state)
        if sampler is None:
            sampler = _RowSampler(
                model,
                state,
                self._settings.QUADRATURE_NODES,
                self._settings.SURVIVAL_FLOOR,
                self._settings.INVERSION_XTOL,
            )
            rows[state] = sampler
        return sampler

    def sample_next_jump(
        self,
        model: CanonicalInsuranceModel,
        s: float,
        i: int,
        ctx: HistoryContext,
        rng: np.random.Generator,
    ) -> tuple[float, Optional[int]]:
        """Next jump (tau, zeta) after s from state i; (inf, None) when the mass stays."""
        sampler = self._sampler(model, i)
        u = _uniform(rng)
        if sampler.kind == "empty":
            return math.inf, None
        profile, shift = sampler.profile(s, ctx)
        tau, k, at_atom = profile.invert(s - shift, u)
        if math.isinf(tau):
            return math.inf, None
        weights = profile.destination_weights(tau, k, at_atom)
        if not any(w > 0.0 for w in weights):
            raise InternalError(
                "no destination carries mass at the sampled jump time",
                details={"state": i, "time": tau + shift},
            )
        d = _choose(weights, float(rng.random()))
        return tau + shift, profile.destinations[d]

    def _start(
        self, model: CanonicalInsuranceModel, config: SimConfig, rng: np.random.Generator
    ) -> HistoryContext:
        if config.start is not None:
            return config.start
        d = _choose(list(model.alpha), float(rng.random()))
        return HistoryContext.initial(model.labels[d])

    def sample_path(
        self, model: CanonicalInsuranceModel, config: SimConfig, index: int = 0
    ) -> Path:
        """Path number `index` of the run: deterministic given (seed, index)."""
        rng = path_stream(config.seed, index)
        ctx = self._start(model, config, rng)
        points = list(ctx.prior_points.points)
        state, s = ctx.current_state, ctx.current_time
        for _ in range(self._settings.MAX_JUMPS_PER_PATH):
            tau, dest = self.sample_next_jump(model, s, state, ctx, rng)
            if dest is None or tau > config.horizon:
                return Path(points=points, horizon=config.horizon)
            points.append((tau, dest))
            state, s = dest, tau
            ctx = HistoryContext.model_construct(
                current_time=tau,
                current_state=dest,
                last_jump_time=tau,
                prior_points=Path.model_construct(points=list(points), horizon=None),
            )
        raise InternalError(
            "path exceeded the jump limit; rates explode",
            details={"path": index, "limit": self._settings.MAX_JUMPS_PER_PATH},
        )

    def _run(self, config: SimConfig, fn: Callable[[int], object]) -> list:
        n = config.n_paths
        workers = config.workers or self._settings.WORKERS
        chunk = self._settings.CHUNK_SIZE
        results: list = [None] * n

        def work(bounds: tuple[int, int]) -> None:
            for k in range(*bounds):
                results[k] = fn(k)

        ranges = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
        if workers == 1 or len(ranges) == 1:
            for bounds in ranges:
                work(bounds)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(work, ranges))
        return results

    def sample_paths(self, model: CanonicalInsuranceModel, config: SimConfig) -> list[Path]:
        """All paths of a run in path-index order."""
        paths = self._run(config, lambda k: self.sample_path(model, config, k))
        logger.info("simulated %d paths (seed %d)", config.n_paths, config.seed)
        return paths

    # ===== Estimators =====

    @staticmethod
    def _estimate(samples: list[float]) -> McEstimate:
        x = np.asarray(samples, dtype=float)
        n = len(x)
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return McEstimate(value=float(np.mean(x)), std_error=se, n=n)

    def _context(
        self, model: CanonicalInsuranceModel, s: float, i: int, ctx: Optional[HistoryContext]
    ) -> HistoryContext:
        if i not in model.states:
            raise InputError(f"state {i} is not in the state space", field="state")
        if ctx is None:
            return HistoryContext.initial(i, s)
        if ctx.current_state != i or ctx.current_time != s:
            raise InputError("context does not describe state i at time s", field="ctx")
        return ctx

    def mc_transition_probability(
        self,
        model: CanonicalInsuranceModel,
        s: float,
        i: int,
        t: float,
        j: int,
        config: SimConfig,
        ctx: Optional[HistoryContext] = None,
    ) -> McEstimate:
        """Estimate of P(Z(t) = j | history ctx with Z(s) = i)."""
        if not s <= t:
            raise InputError("target time precedes the start time", field="t")
        if t == s:
            return McEstimate(value=1.0 if i == j else 0.0, std_error=0.0, n=config.n_paths)
        run = config.model_copy(update={"start": self._context(model, s, i, ctx), "horizon": t})
        hits = self._run(
            run, lambda k: 1.0 if self.sample_path(model, run, k).state_at(t) == j else 0.0
        )
        p = float(np.mean(hits))
        se = math.sqrt(p * (1.0 - p) / len(hits))
        return McEstimate(value=p, std_error=se, n=len(hits))

    def liability(self, model: CanonicalInsuranceModel, path: Path, s: float, T: float) -> float:
        """Discounted liabilities L(s, T) of one path, valued at s."""
        total = 0.0
        log_d = 0.0
        points = path.points
        for k, (entry, state) in enumerate(points):
            nxt = points[k + 1] if k + 1 < len(points) else None
            a = max(entry, s)
            b = min(nxt[0], T) if nxt is not None else T
            if b <= a:
                continue
            phi = resolve(model.interest(state))
            sojourn = resolve_from(model.sojourn(state), entry)
            flow, log_d = self._discounted_flow(phi, sojourn, a, b, log_d)
            total += flow
            if nxt is not None and nxt[0] <= T:
                pay = payment_value(model.transition(state, nxt[1]), nxt[0], entry)
                total += pay * math.exp(log_d)
        return total

    def _discounted_flow(
        self, phi: Resolved, sojourn: Resolved, a: float, b: float, log_d: float
    ) -> tuple[float, float]:
        """Sojourn payments over (a, b] discounted to the valuation time."""
        inner = (p for p in (*phi.breakpoints(), *sojourn.breakpoints()) if a < p < b)
        cuts = sorted({a, b, *inner})
        x, w = gauss_legendre(self._settings.QUADRATURE_NODES)
        total = 0.0
        for c0, c1 in zip(cuts, cuts[1:]):
            h = c1 - c0
            if sojourn.pieces and any(p.start < c1 and p.end > c0 for p in sojourn.pieces):
                if phi.is_constant_on(c0, c1) and sojourn.is_constant_on(c0, c1):
                    rate = phi.density(c0)
                    beta = sojourn.density(c0)
                    growth = -math.expm1(-rate * h) / rate if rate != 0.0 else h
                    total += beta * math.exp(log_d) * growth
                else:
                    acc = 0.0
                    for xq, wq in zip(x, w):
                        u = c0 + h * float(xq)
                        discount = math.exp(log_d - phi.integral(c0, u))
                        acc += float(wq) * sojourn.density(u) * discount
                    total += acc * h
            log_d -= phi.integral(c0, c1)
            jump = phi.atom_at(c1)
            if jump:
                log_d -= math.log1p(jump)
            mass = sojourn.atom_at(c1)
            if mass:
                total += mass * math.exp(log_d)
        return total, log_d

    def mc_reserve(
        self,
        model: CanonicalInsuranceModel,
        s: float,
        i: int,
        config: SimConfig,
        ctx: Optional[HistoryContext] = None,
    ) -> McEstimate:
        """Estimate of the prospective reserve V^i(s) on the history ctx."""
        self._require_explicit(model, "mc_reserve")
        T = min(config.horizon, model.horizon)
        run = config.model_copy(update={"start": self._context(model, s, i, ctx), "horizon": T})
        values = self._run(
            run, lambda k: self.liability(model, self.sample_path(model, run, k), s, T)
        )
        return self._estimate(values)

    def mc_expected_liabilities(
        self, model: CanonicalInsuranceModel, config: SimConfig
    ) -> McEstimate:
        """Unconditional expected discounted liabilities from the initial distribution."""
        self._require_explicit(model, "mc_expected_liabilities")
        T = min(config.horizon, model.horizon)
        run = config.model_copy(update={"start": None, "horizon": T})
        values = self._run(
            run, lambda k: self.liability(model, self.sample_path(model, run, k), 0.0, T)
        )
        return self._estimate(values)

    @staticmethod
    def _require_explicit(model: CanonicalInsuranceModel, operation: str) -> None:
        if model.cashflow.reserve_dependence is not None:
            raise PreconditionError(
                operation,
                "reserve-dependent payments must be resolved first (transform_reserve_dependent)",
            )

    # ===== Martingale Diagnostics =====

    def _weight(self, Y: WeightFunction) -> Callable[[float, HistoryContext], float]:
        if isinstance(Y, (int, float)):
            c = float(Y)
            return lambda u, ctx: c
        return Y

    def path_compensator(
        self,
        model: CanonicalInsuranceModel,
        path: Path,
        pair: tuple[Optional[int], int],
        a: float,
        b: float,
        Y: WeightFunction = 1.0,
        breakpoints: tuple[float, ...] = (),
    ) -> float:
        """
        Integral of Y against the compensator of jumps into pair[1] over (a, b].

        pair[0] restricts the source state; None sums over every source.
        """
        source, target = pair
        fn = self._weight(Y)
        total = 0.0
        for state, lo, hi, entry in path.sojourns(a, b):
            if state == target or (source is not None and state != source):
                continue
            rate = model.rate(state, target)
            if rate is None or rate.is_zero:
                continue
            ctx = self._inspector.context_at(path, entry, state)
            resolved = resolve(rate, ctx)
            total += self._measure.integrate_resolved(
                lambda u: fn(u, ctx), resolved, lo, hi, breakpoints=breakpoints
            )
        return total

    def martingale_residual(
        self,
        model: CanonicalInsuranceModel,
        Y: WeightFunction,
        pair: tuple[int, int],
        a: float,
        b: float,
        config: SimConfig,
        breakpoints: tuple[float, ...] = (),
    ) -> McEstimate:
        """Estimate of E[int Y dN^{jk} - int Y I^j(u-) Lambda^{jk}(du)] over (a, b]."""
        j, k = pair
        fn = self._weight(Y)
        run = config.model_copy(update={"horizon": max(config.horizon, b)})

        def residual(index: int) -> float:
            path = self.sample_path(model, run, index)
            counted = 0.0
            for time, src, dst in path.jumps:
                if src == j and dst == k and a < time <= b:
                    entry = max(t for t, _ in path.points if t < time)
                    counted += fn(time, self._inspector.context_at(path, entry, j))
            return counted - self.path_compensator(model, path, pair, a, b, fn, breakpoints)

        return self._estimate(self._run(run, residual))


# Type alias for cleaner imports
Simulator = SimulatorService
