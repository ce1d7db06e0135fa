"""
Kernel Engine - Rate resolution on the time axis and survival/jump kernels.

Rates are resolved for a stopped history into time-coordinate pieces. A hazard profile
splits [origin, infinity) at every piece bound, atom and reset of a row of rates and
stores the log-survival and the cumulative jump kernels at those breakpoints, so
kernels, their inverses and the normalization identity are evaluated exactly.
"""

import bisect
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Union

import numpy as np

from ..exceptions import InternalError
from ..models.paths import HistoryContext
from ..models.rates import (
    INF,
    ConstantDensity,
    CumulativeRate,
    CumulativeSignedMeasure,
    PaymentFunction,
    SimpleSegment,
)

Component = Union[CumulativeRate, CumulativeSignedMeasure]


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# ===== Resolved Components =====


@dataclass(frozen=True)
class Piece:
    """A simple segment placed on the time axis: t in [start, end), x = t - offset."""

    start: float
    end: float
    segment: SimpleSegment
    offset: float = 0.0

    @property
    def is_constant(self) -> bool:
        return self.segment.is_constant

    @property
    def is_null(self) -> bool:
        return self.segment.kind == "constant" and self.segment.rate == 0.0

    @property
    def is_pole(self) -> bool:
        return self.segment.kind == "pole"

    def density(self, t: float) -> float:
        return self.segment.density(t - self.offset)

    def integral(self, a: float, b: float) -> float:
        if b <= a or self.is_null:
            return 0.0
        return self.segment.integral(a - self.offset, b - self.offset)

    def inverse(self, a: float, y: float) -> Optional[float]:
        x = self.segment.inverse(a - self.offset, y)
        return None if x is None else x + self.offset


@dataclass(frozen=True)
class Resolved:
    """A rate or measure resolved on the time axis for one history."""

    pieces: tuple[Piece, ...] = ()
    atoms: tuple[tuple[float, float], ...] = ()
    resets: tuple[float, ...] = ()
    disjoint: bool = True
    starts: tuple[float, ...] = field(default=(), compare=False)

    @property
    def is_zero(self) -> bool:
        return all(p.is_null for p in self.pieces) and all(m == 0.0 for _, m in self.atoms)

    def pieces_at(self, t: float, left: bool = False) -> list[Piece]:
        if self.disjoint:
            k = bisect.bisect_left(self.starts, t) if left else bisect.bisect_right(self.starts, t)
            k -= 1
            if k < 0:
                return []
            p = self.pieces[k]
            inside = p.start < t <= p.end if left else p.start <= t < p.end
            return [p] if inside else []
        if left:
            return [p for p in self.pieces if p.start < t <= p.end]
        return [p for p in self.pieces if p.start <= t < p.end]

    def density(self, t: float, left: bool = False) -> float:
        return sum(p.density(t) for p in self.pieces_at(t, left))

    def integral(self, a: float, b: float) -> float:
        """Continuous increment over (a, b]."""
        total = 0.0
        for p in self.pieces:
            lo, hi = max(a, p.start), min(b, p.end)
            if hi > lo:
                total += p.integral(lo, hi)
        return total

    def atoms_in(self, a: float, b: float) -> list[tuple[float, float]]:
        return [(t, m) for t, m in self.atoms if a < t <= b]

    def atom_at(self, t: float) -> float:
        for time, mass in self.atoms:
            if time == t:
                return mass
        return 0.0

    def breakpoints(self) -> set[float]:
        points = {t for t, _ in self.atoms} | set(self.resets)
        for p in self.pieces:
            points.update((p.start, p.end))
        return {p for p in points if math.isfinite(p)}

    def is_constant_on(self, a: float, b: float) -> bool:
        """Whether the density is constant on the cell [a, b) (cells never straddle bounds)."""
        return all(p.is_constant for p in self.pieces if p.start < b and p.end > a)


_RESOLVED_CACHE: dict[int, tuple[object, Resolved]] = {}


def _place(component, offset: float, extrapolate: bool) -> Resolved:
    pieces: list[Piece] = []
    for seg in component.segments:
        for simple in seg.pieces():
            pieces.append(
                Piece(
                    start=simple.start + offset,
                    end=simple.end + offset,
                    segment=simple,
                    offset=offset,
                )
            )
    pieces.sort(key=lambda p: p.start)
    if extrapolate and pieces and not pieces[-1].is_pole and math.isfinite(pieces[-1].end):
        last = pieces[-1]
        tail_rate = last.segment.terminal_density()
        if tail_rate > 0.0:
            x_end = last.end - offset
            pieces.append(
                Piece(
                    start=last.end,
                    end=INF,
                    segment=ConstantDensity(start=x_end, end=INF, rate=tail_rate),
                    offset=offset,
                )
            )
    disjoint = all(b.start >= a.end for a, b in zip(pieces, pieces[1:]))
    return Resolved(
        pieces=tuple(pieces),
        atoms=tuple((a.time + offset, a.mass) for a in component.atoms),
        resets=tuple(r + offset for r in getattr(component, "resets", ())),
        disjoint=disjoint,
        starts=tuple(p.start for p in pieces),
    )


def resolve(component: Component, ctx: Optional[HistoryContext] = None) -> Resolved:
    """
    Resolve a rate or signed measure for the stopped history ctx.

    Markov components ignore ctx, semi-Markov components are shifted by the last jump
    time, path-dependent rates are produced by their rule. Rates are extrapolated by
    their last density beyond the last segment.
    """
    is_rate = isinstance(component, CumulativeRate)
    if component.dependence == "markov":
        cached = _RESOLVED_CACHE.get(id(component))
        if cached is not None and cached[0] is component:
            return cached[1]
        resolved = _place(component, 0.0, extrapolate=is_rate)
        if len(_RESOLVED_CACHE) > 4096:
            _RESOLVED_CACHE.clear()
        _RESOLVED_CACHE[id(component)] = (component, resolved)
        return resolved
    if ctx is None:
        raise ValueError(f"{component.dependence} components need a history context")
    if component.dependence == "semi_markov":
        return _place(component, ctx.last_jump_time, extrapolate=is_rate)
    produced = component.rule(ctx)
    if not isinstance(produced, CumulativeRate) or produced.dependence != "markov":
        raise InternalError(
            "path-dependent rule must return a Markov CumulativeRate",
            details={"returned": type(produced).__name__},
        )
    return _place(produced, 0.0, extrapolate=True)


def resolve_from(component: Component, last_jump_time: float) -> Resolved:
    """Markov or semi-Markov component for a sojourn entered at last_jump_time."""
    if component.dependence == "markov":
        return resolve(component)
    if component.dependence == "semi_markov":
        return _place(component, last_jump_time, extrapolate=isinstance(component, CumulativeRate))
    raise ValueError("path-dependent rates need a full history context")


def resolve_duration(component: Component) -> Resolved:
    """A semi-Markov component on its own duration axis (entry at 0)."""
    return _place(component, 0.0, extrapolate=isinstance(component, CumulativeRate))


def payment_value(
    payment: Optional[PaymentFunction], t: float, entry_time: float = 0.0, left: bool = False
) -> float:
    """Transition payment at t for a sojourn entered at entry_time."""
    if payment is None:
        return 0.0
    return payment.value(t, t - entry_time, left=left)


# ===== Hazard Profiles =====


class HazardProfile:
    """
    Exact survival and jump kernels of one row of rates from a fixed origin.

    Breakpoints b_0 = origin < b_1 < ... split the axis into stretches on which every
    destination has at most one smooth piece. Survival is kept in log space.
    """

    def __init__(
        self,
        rows: dict[int, Resolved],
        origin: float,
        nodes: int = 16,
        floor: float = 1e-300,
        xtol: float = 1e-12,
    ):
        self.origin = origin
        self.xtol = xtol
        self.destinations = list(rows)
        self.nodes = nodes
        self.floor = floor
        resets = [r for res in rows.values() for r in res.resets if r > origin]
        self.reset = min(resets, default=INF)

        points = {origin}
        for res in rows.values():
            points |= res.breakpoints()
        bps = sorted(p for p in points if origin <= p <= self.reset)
        if not math.isfinite(self.reset):
            bps.append(INF)
        self.breakpoints = bps

        n_dest = len(self.destinations)
        k_max = len(bps) - 1
        self.terms: list[list[tuple[int, Piece]]] = []
        for k in range(k_max):
            a, b = bps[k], bps[k + 1]
            active = []
            for d, j in enumerate(self.destinations):
                for p in rows[j].pieces:
                    if p.start <= a and p.end >= b and not p.is_null:
                        active.append((d, p))
            self.terms.append(active)

        self.atom_mass = [[0.0] * n_dest for _ in bps]
        for d, j in enumerate(self.destinations):
            for t, m in rows[j].atoms:
                if origin < t <= self.reset:
                    self.atom_mass[bisect.bisect_left(bps, t)][d] += m

        self.log_right = [0.0] * len(bps)
        self.log_left = [0.0] * len(bps)
        self.cont = [0.0] * k_max
        self.shares: list[list[float]] = []
        self.jumps = [[0.0] * n_dest for _ in bps]
        for k in range(k_max):
            a, b = bps[k], bps[k + 1]
            c = sum(p.integral(a, b) for _, p in self.terms[k])
            self.cont[k] = c
            shares = self._shares(k, a, b)
            self.shares.append(shares)
            left = self.log_right[k] - c
            self.log_left[k + 1] = left
            total_mass = sum(self.atom_mass[k + 1])
            if total_mass >= 1.0:
                self.log_right[k + 1] = -INF
            else:
                self.log_right[k + 1] = left + math.log1p(-total_mass)
            surv_a = math.exp(self.log_right[k])
            dec = -math.expm1(-c) if math.isfinite(c) else 1.0
            surv_left = math.exp(left) if left > -INF else 0.0
            for d in range(n_dest):
                self.jumps[k + 1][d] = (
                    self.jumps[k][d]
                    + surv_a * dec * shares[d]
                    + surv_left * self.atom_mass[k + 1][d]
                )
        seq = []
        for k in range(1, len(bps)):
            seq.append(-self.log_left[k])
            seq.append(-self.log_right[k])
        self._neg_seq = seq

    # ----- stretch helpers -----

    def _stretch(self, t: float) -> int:
        k = bisect.bisect_right(self.breakpoints, t) - 1
        return min(max(k, 0), len(self.breakpoints) - 2)

    def _shares(self, k: int, a: float, b: float) -> list[float]:
        n_dest = len(self.destinations)
        terms = self.terms[k]
        shares = [0.0] * n_dest
        if not terms:
            return shares
        dests = {d for d, _ in terms}
        if len(dests) == 1:
            shares[terms[0][0]] = 1.0
            return shares
        if all(p.is_constant for _, p in terms):
            rates = [0.0] * n_dest
            for d, p in terms:
                rates[d] += p.density(a)
            total = sum(rates)
            return [r / total for r in rates] if total > 0 else shares
        return self._quadrature_shares(terms, a, b)

    def _quadrature_shares(self, terms: list[tuple[int, Piece]], a: float, b: float) -> list[float]:
        x, w = gauss_legendre(self.nodes)
        n_dest = len(self.destinations)
        mass = [0.0] * n_dest
        span = b - a
        for xq, wq in zip(x, w):
            u = a + span * float(xq)
            surv = math.exp(-sum(p.integral(a, u) for _, p in terms))
            for d, p in terms:
                mass[d] += float(wq) * surv * p.density(u)
        total = sum(mass)
        if total <= 0.0 or not math.isfinite(total):
            # degenerate pole-only mass at the stretch end: split by strengths
            strengths = [0.0] * n_dest
            for d, p in terms:
                strengths[d] += p.segment.strength if p.is_pole else 0.0
            total = sum(strengths)
            return [s / total for s in strengths] if total > 0 else mass
        return [m / total for m in mass]

    # ----- kernels -----

    def log_survival(self, t: float) -> float:
        if t <= self.origin:
            return 0.0
        if math.isfinite(self.reset) and t >= self.reset:
            return -INF
        if t == INF:
            k = len(self.breakpoints) - 2
            return self.log_right[k] - self.cont[k]
        k = self._stretch(t)
        a = self.breakpoints[k]
        if t == a:
            return self.log_right[k]
        return self.log_right[k] - sum(p.integral(a, t) for _, p in self.terms[k])

    def survival(self, t: float) -> float:
        value = math.exp(self.log_survival(t))
        return 0.0 if value < self.floor else value

    def jump(self, d: int, t: float) -> float:
        """Jump kernel to the destination with index d at time t."""
        if t <= self.origin:
            return 0.0
        last = len(self.breakpoints) - 1
        if t >= self.reset or t == INF:
            return self.jumps[last][d]
        k = self._stretch(t)
        a = self.breakpoints[k]
        if t == a:
            return self.jumps[k][d]
        terms = self.terms[k]
        c = sum(p.integral(a, t) for _, p in terms)
        dec = -math.expm1(-c)
        if len({dd for dd, _ in terms}) <= 1 or all(p.is_constant for _, p in terms):
            share = self.shares[k][d]
        else:
            share = self._quadrature_shares(terms, a, t)[d]
        return self.jumps[k][d] + math.exp(self.log_right[k]) * dec * share

    def defect(self) -> float:
        if math.isfinite(self.reset):
            return 0.0
        return self.survival(INF)

    # ----- inversion -----

    def invert(self, s: float, u: float) -> tuple[float, Optional[int], bool]:
        """
        Smallest t > s with survival(t) / survival(s) <= u.

        Returns (tau, stretch index, at_atom); tau is INF when the mass stays.
        """
        target = self.log_survival(s) + math.log(u)
        k_s = self._stretch(s)
        m = bisect.bisect_left(self._neg_seq, -target, lo=2 * k_s)
        if m >= len(self._neg_seq):
            return INF, None, False
        k = m // 2
        if m % 2 == 1:
            return self.breakpoints[k + 1], k, True
        a, b = self.breakpoints[k], self.breakpoints[k + 1]
        y = self.log_right[k] - target
        tau = self._solve_stretch(k, a, b, y)
        return max(tau, math.nextafter(s, INF)), k, False

    def _solve_stretch(self, k: int, a: float, b: float, y: float) -> float:
        terms = self.terms[k]
        if len(terms) == 1:
            tau = terms[0][1].inverse(a, y)
            return b if tau is None else min(tau, b)
        if all(p.is_constant for _, p in terms):
            rate = sum(p.density(a) for _, p in terms)
            return min(a + y / rate, b)
        from scipy.optimize import brentq

        def excess(x: float) -> float:
            return sum(p.integral(a, x) for _, p in terms) - y

        hi = b
        poles = [p for _, p in terms if p.is_pole]
        if poles:
            hi = poles[0].inverse(a, y + 1.0)
        if excess(hi) <= 0.0:
            # target at the stretch end up to rounding
            return hi
        try:
            return brentq(excess, a, hi, xtol=self.xtol, maxiter=200)
        except (ValueError, RuntimeError) as exc:
            raise InternalError(
                "jump-time inversion did not converge",
                details={"stretch": [a, b], "target": y, "reason": str(exc)},
            ) from exc

    def destination_weights(self, tau: float, k: int, at_atom: bool) -> list[float]:
        """Relative weights of the destinations for a jump at tau."""
        n_dest = len(self.destinations)
        if at_atom:
            return list(self.atom_mass[k + 1])
        weights = [0.0] * n_dest
        for d, p in self.terms[k]:
            weights[d] += p.density(tau)
        return weights


class KernelPair:
    """
    Survival p_s^i and jump kernels p_s^{ij} of state i from time s for one history.

    Profile coordinates are time minus `shift`; fresh pairs use shift 0.
    """

    def __init__(self, profile: HazardProfile, s: float, shift: float = 0.0):
        self.profile = profile
        self.s = s
        self.shift = shift
        self.destinations = profile.destinations

    @property
    def reset_horizon(self) -> float:
        return self.profile.reset + self.shift

    @property
    def defect(self) -> float:
        return self.profile.defect()

    def survival(self, t: float) -> float:
        return self.profile.survival(t - self.shift)

    def jump(self, j: int, t: float) -> float:
        return self.profile.jump(self.destinations.index(j), t - self.shift)
