"""
State space and path data models for ThieleKit.
"""

import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class StateSpace(BaseModel):
    """Finite ordered set of small non-negative integer state labels."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    states: list[int] = Field(..., min_length=1, description="Ordered state labels")
    absorbing_hint: list[int] = Field(
        default_factory=list, description="States flagged absorbing; validation confirms them"
    )

    @model_validator(mode="after")
    def _check_labels(self):
        if any(s < 0 for s in self.states):
            raise ValueError("state labels must be non-negative")
        if len(set(self.states)) != len(self.states):
            raise ValueError("state labels must be unique")
        unknown = set(self.absorbing_hint) - set(self.states)
        if unknown:
            raise ValueError(f"absorbing_hint refers to unknown states {sorted(unknown)}")
        return self

    def __len__(self) -> int:
        return len(self.states)

    def __contains__(self, state: object) -> bool:
        return state in self.states

    def index(self, state: int) -> int:
        return self.states.index(state)


class Path(BaseModel):
    """Finite marked point sequence (time, state) describing one policy history."""

    model_config = ConfigDict(
        frozen=True,
        extra="forbid",
        json_schema_extra={"example": {"points": [[0.0, 0], [2.0, 1]], "horizon": 10.0}},
    )

    points: list[tuple[float, int]] = Field(..., min_length=1, description="(time, state) marks")
    horizon: Optional[float] = Field(None, description="Observation end")

    @model_validator(mode="after")
    def _check_points(self):
        if self.points[0][0] != 0.0:
            raise ValueError("a path starts at time 0")
        for (t0, z0), (t1, z1) in zip(self.points, self.points[1:]):
            if not t1 > t0:
                raise ValueError("path times must be strictly increasing")
            if z1 == z0:
                raise ValueError("consecutive path states must differ")
        for t, z in self.points:
            if math.isnan(t) or t < 0.0 or z < 0:
                raise ValueError("path marks need non-negative times and labels")
        return self

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.points]

    @property
    def jumps(self) -> list[tuple[float, int, int]]:
        """Transitions as (time, from, to)."""
        return [(t1, z0, z1) for (_, z0), (t1, z1) in zip(self.points, self.points[1:])]

    def state_at(self, t: float) -> int:
        """Right-continuous state at time t."""
        state = self.points[0][1]
        for time, z in self.points:
            if time > t:
                break
            state = z
        return state

    def sojourns(self, start: float, end: float) -> list[tuple[int, float, float, float]]:
        """
        Occupancy of (start, end] as (state, a, b, entry_time) pieces.

        The state is the one held on (a, b]; entry_time is the time the path entered it.
        """
        out: list[tuple[int, float, float, float]] = []
        for k, (t, z) in enumerate(self.points):
            nxt = self.points[k + 1][0] if k + 1 < len(self.points) else math.inf
            a, b = max(t, start), min(nxt, end)
            if b > a:
                out.append((z, a, b, t))
        return out


class HistoryContext(BaseModel):
    """Information a kernel conditions on: the (s, i)-stopped history."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    current_time: float = Field(..., ge=0, description="Conditioning time s")
    current_state: int = Field(..., ge=0, description="State i held at s")
    last_jump_time: float = Field(..., ge=0, description="Entry time into the current state")
    prior_points: Path = Field(..., description="Stopped path ending in the current state")

    @model_validator(mode="after")
    def _check_context(self):
        if self.last_jump_time > self.current_time:
            raise ValueError("last_jump_time must not exceed current_time")
        last_time, last_state = self.prior_points.points[-1]
        if last_state != self.current_state:
            raise ValueError("prior_points must end in current_state")
        if last_time != self.last_jump_time:
            raise ValueError("prior_points must end at last_jump_time")
        return self

    @property
    def duration(self) -> float:
        return self.current_time - self.last_jump_time

    @classmethod
    def initial(cls, state: int, time: float = 0.0) -> "HistoryContext":
        """Context of a policy that starts in `state` at time 0 and is observed at `time`."""
        return cls(
            current_time=time,
            current_state=state,
            last_jump_time=0.0,
            prior_points=Path(points=[(0.0, state)]),
        )

    def after_jump(self, time: float, state: int) -> "HistoryContext":
        """Context right after a jump to `state` at `time`."""
        return HistoryContext(
            current_time=time,
            current_state=state,
            last_jump_time=time,
            prior_points=Path(points=[*self.prior_points.points, (time, state)]),
        )
