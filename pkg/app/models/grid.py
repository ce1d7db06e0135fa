"""
Time grid and solver output data models for ThieleKit.
"""

import bisect
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator


class TimeGrid(BaseModel):
    """Ordered solver grid on [0, T]; atoms, resets and segment bounds are grid points."""

    model_config = ConfigDict(frozen=True)

    points: list[float] = Field(..., min_length=2, description="Strictly increasing grid points")
    step: float = Field(..., gt=0, description="Maximal continuous step h")
    mandatory: list[float] = Field(
        default_factory=list, description="Points forced by atoms, resets and segment bounds"
    )

    @model_validator(mode="after")
    def _check_points(self):
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise ValueError("grid points must be strictly increasing")
        return self

    @property
    def horizon(self) -> float:
        return self.points[-1]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def __len__(self) -> int:
        return len(self.points)

    def with_points(self, extra: list[float]) -> "TimeGrid":
        """Grid refined by extra interior points."""
        merged = sorted(set(self.points) | {p for p in extra if self.points[0] < p < self.horizon})
        cleaned = [merged[0]]
        for p in merged[1:]:
            if p - cleaned[-1] > 1e-12:
                cleaned.append(p)
        if cleaned[-1] != self.horizon:
            cleaned[-1] = self.horizon
        return TimeGrid(points=cleaned, step=self.step, mandatory=list(self.mandatory))


class ReserveField(BaseModel):
    """
    Backward-solver output.

    Markov and discrete fields hold V^i(t) per grid time; semi-Markov fields hold
    V^i(t, u) on a duration axis. `values` are right-continuous values, `left_values`
    the left limits V^i(t-) that differ from them only at atom instants.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    regime: Literal["markov", "semi_markov", "discrete"]
    kind: Literal["thiele", "kolmogorov"] = "thiele"
    states: list[int]
    times: np.ndarray
    values: np.ndarray
    left_values: np.ndarray
    durations: Optional[np.ndarray] = None
    target: Optional[int] = Field(None, description="Target state of a Kolmogorov field")
    terminal: list[float] = Field(default_factory=list, description="Terminal values per state")
    scheme: str = "exact"

    _dense: Optional[Callable[[float], np.ndarray]] = PrivateAttr(default=None)

    def attach_dense(self, fn: Callable[[float], np.ndarray]) -> "ReserveField":
        """Attach an evaluator of the state vector at any time inside the grid."""
        self._dense = fn
        return self

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def index(self, state: int) -> int:
        return self.states.index(state)

    def _cell(self, t: float) -> int:
        k = bisect.bisect_right(self.times, t) - 1
        return min(max(k, 0), len(self.times) - 2)

    def _duration_value(self, row: np.ndarray, duration: float) -> float:
        return float(np.interp(duration, self.durations, row))

    def value(self, state: int, t: float, duration: float = 0.0, left: bool = False) -> float:
        """V^state at time t (and duration for semi-Markov fields)."""
        i = self.index(state)
        times = self.times
        if t <= times[0]:
            return self._point(0, i, duration, left)
        if t >= times[-1]:
            return self._point(len(times) - 1, i, duration, left)
        k = bisect.bisect_left(times, t)
        if times[k] == t:
            return self._point(k, i, duration, left)
        if self._dense is not None and self.regime == "markov":
            return float(self._dense(t)[i])
        k0 = k - 1
        t0, t1 = times[k0], times[k]
        w = (t - t0) / (t1 - t0)
        v0 = self._point(k0, i, duration, False)
        v1 = self._point(k, i, duration, True)
        return (1.0 - w) * v0 + w * v1

    def _point(self, k: int, i: int, duration: float, left: bool) -> float:
        source = self.left_values if left else self.values
        if self.regime == "semi_markov":
            return self._duration_value(source[k, i], duration)
        return float(source[k, i])

    def vector(self, t: float, duration: float = 0.0, left: bool = False) -> np.ndarray:
        """All states at t, in state order."""
        times = self.times
        if (
            self._dense is not None
            and self.regime == "markov"
            and times[0] < t < times[-1]
            and t not in times
        ):
            return np.asarray(self._dense(t), dtype=float)
        return np.array([self.value(s, t, duration, left) for s in self.states])

    def identical_to(self, other: "ReserveField") -> bool:
        """Bit-for-bit equality of grids and values."""
        same_durations = (self.durations is None and other.durations is None) or (
            self.durations is not None
            and other.durations is not None
            and np.array_equal(self.durations, other.durations)
        )
        return (
            self.regime == other.regime
            and self.states == other.states
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.left_values, other.left_values)
            and same_durations
        )

    def max_abs_difference(
        self, other: "ReserveField", states: Optional[list[int]] = None
    ) -> float:
        """Largest |V_other - V_self| over shared grid times for the given states."""
        states = states or self.states
        shared, ia, ib = np.intersect1d(self.times, other.times, return_indices=True)
        if shared.size == 0:
            raise ValueError("fields share no grid times")
        worst = 0.0
        for s in states:
            a = self.values[ia, self.index(s)]
            b = other.values[ib, other.index(s)]
            worst = max(worst, float(np.max(np.abs(a - b))))
        return worst

    def rows(self) -> list[tuple]:
        """Export rows (state, time[, duration], value) in deterministic order."""
        out: list[tuple] = []
        for i, state in enumerate(self.states):
            for k, t in enumerate(self.times):
                if self.regime == "semi_markov":
                    for m, u in enumerate(self.durations):
                        out.append((state, float(t), float(u), float(self.values[k, i, m])))
                else:
                    out.append((state, float(t), float(self.values[k, i])))
        return out
