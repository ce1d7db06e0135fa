"""
Rate and measure data models for ThieleKit.

Densities are described by segments whose primitives and inverses are closed form.
Segment coordinates are model coordinates: calendar time for Markov components,
duration since the last jump for semi-Markov components.
"""

import math
from functools import cached_property
from typing import Annotated, Any, Callable, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

INF = math.inf

Dependence = Literal["markov", "semi_markov", "path_dependent"]
PaymentDependence = Literal["markov", "semi_markov"]


def _check_finite(name: str, value: float) -> float:
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"{name} must be a finite number")
    return value


# ===== Density Segments =====


class _Segment(BaseModel):
    """Common fields of a density segment on [start, end)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    start: float = Field(..., ge=0, description="Left end of the segment (inclusive)")
    end: float = Field(..., description="Right end of the segment (exclusive)")

    @model_validator(mode="after")
    def _check_bounds(self):
        if math.isnan(self.start) or math.isnan(self.end):
            raise ValueError("segment bounds must not be NaN")
        if not self.end > self.start:
            raise ValueError(f"segment end {self.end} must exceed start {self.start}")
        return self

    @property
    def is_constant(self) -> bool:
        return False

    @property
    def bounded(self) -> bool:
        return True

    def pieces(self) -> list["SimpleSegment"]:
        return [self]  # type: ignore[list-item]

    def min_density(self) -> float:
        return min(self.density(self.start), self.terminal_density())

    def terminal_density(self) -> float:
        """Left limit of the density at the segment end."""
        return self.density(self.end)


class ConstantDensity(_Segment):
    """Constant density on [start, end); the end may be infinite."""

    kind: Literal["constant"] = "constant"
    rate: float = Field(..., description="Density value")

    @field_validator("rate")
    @classmethod
    def _finite_rate(cls, v: float) -> float:
        return _check_finite("rate", v)

    @property
    def is_constant(self) -> bool:
        return True

    def density(self, x: float) -> float:
        return self.rate

    def terminal_density(self) -> float:
        return self.rate

    def integral(self, x1: float, x2: float) -> float:
        return self.rate * (x2 - x1)

    def inverse(self, x1: float, y: float) -> Optional[float]:
        if self.rate <= 0.0:
            return None
        x2 = x1 + y / self.rate
        return x2 if x2 < self.end else None

    def scaled(self, factor: float) -> "ConstantDensity":
        return self.model_copy(update={"rate": self.rate * factor})


class LinearDensity(_Segment):
    """Density intercept + slope * x on a finite segment."""

    kind: Literal["linear"] = "linear"
    intercept: float = Field(..., description="Density value at x = 0")
    slope: float = Field(..., description="Change of density per unit of x")

    @model_validator(mode="after")
    def _finite(self):
        _check_finite("intercept", self.intercept)
        _check_finite("slope", self.slope)
        _check_finite("end", self.end)
        return self

    @property
    def is_constant(self) -> bool:
        return self.slope == 0.0

    def density(self, x: float) -> float:
        return self.intercept + self.slope * x

    def integral(self, x1: float, x2: float) -> float:
        return self.intercept * (x2 - x1) + 0.5 * self.slope * (x2 * x2 - x1 * x1)

    def inverse(self, x1: float, y: float) -> Optional[float]:
        mu = self.density(x1)
        if self.slope == 0.0:
            if mu <= 0.0:
                return None
            d = y / mu
        else:
            disc = mu * mu + 2.0 * self.slope * y
            if disc < 0.0:
                return None
            root = math.sqrt(disc)
            if mu + root <= 0.0:
                return None
            d = 2.0 * y / (mu + root)
        x2 = x1 + d
        return x2 if x2 < self.end else None

    def scaled(self, factor: float) -> "LinearDensity":
        return self.model_copy(
            update={"intercept": self.intercept * factor, "slope": self.slope * factor}
        )


class MakehamDensity(_Segment):
    """Density level + scale * exp(growth * x) on a finite segment."""

    kind: Literal["makeham"] = "makeham"
    level: float = Field(0.0, description="Age-independent part")
    scale: float = Field(..., description="Multiplier of the exponential part")
    growth: float = Field(..., description="Exponential growth (negative for decay)")

    @model_validator(mode="after")
    def _finite(self):
        for name in ("level", "scale", "growth", "end"):
            _check_finite(name, getattr(self, name))
        return self

    @property
    def is_constant(self) -> bool:
        return self.scale == 0.0 or self.growth == 0.0

    def density(self, x: float) -> float:
        return self.level + self.scale * math.exp(self.growth * x)

    def integral(self, x1: float, x2: float) -> float:
        if self.growth == 0.0:
            return (self.level + self.scale) * (x2 - x1)
        g = self.growth
        # exp(g*x1) * expm1(g*(x2-x1)) keeps short intervals accurate
        return self.level * (x2 - x1) + self.scale / g * math.exp(g * x1) * math.expm1(
            g * (x2 - x1)
        )

    def inverse(self, x1: float, y: float) -> Optional[float]:
        if self.integral(x1, self.end) < y:
            return None
        if self.level == 0.0 and self.growth != 0.0 and self.scale > 0.0:
            arg = 1.0 + self.growth * y / (self.scale * math.exp(self.growth * x1))
            if arg <= 0.0:
                return None
            return x1 + math.log(arg) / self.growth
        from scipy.optimize import brentq

        return brentq(lambda x: self.integral(x1, x) - y, x1, self.end, xtol=1e-14)

    def scaled(self, factor: float) -> "MakehamDensity":
        return self.model_copy(
            update={"level": self.level * factor, "scale": self.scale * factor}
        )


class PoleDensity(_Segment):
    """Density strength / (end - x) on [start, end); end is a reset point."""

    kind: Literal["pole"] = "pole"
    strength: float = Field(..., gt=0, description="Pole strength c")

    @model_validator(mode="after")
    def _finite(self):
        _check_finite("strength", self.strength)
        _check_finite("end", self.end)
        return self

    @property
    def bounded(self) -> bool:
        return False

    def density(self, x: float) -> float:
        if x >= self.end:
            return INF
        return self.strength / (self.end - x)

    def min_density(self) -> float:
        return self.density(self.start)

    def terminal_density(self) -> float:
        return INF

    def integral(self, x1: float, x2: float) -> float:
        if x2 >= self.end:
            return INF
        return self.strength * math.log((self.end - x1) / (self.end - x2))

    def inverse(self, x1: float, y: float) -> Optional[float]:
        return self.end - (self.end - x1) * math.exp(-y / self.strength)

    def scaled(self, factor: float) -> "PoleDensity":
        return self.model_copy(update={"strength": self.strength * factor})


class TabulatedDensity(_Segment):
    """Density tabulated on knots, interpolated left-constant (default) or linearly."""

    kind: Literal["tabulated"] = "tabulated"
    knots: list[float] = Field(..., min_length=1, description="Knot positions, first = start")
    values: list[float] = Field(..., min_length=1, description="Density values at the knots")
    interpolation: Literal["left_constant", "linear"] = "left_constant"

    @model_validator(mode="after")
    def _check_table(self):
        for v in (*self.knots, *self.values, self.end):
            _check_finite("tabulated entry", v)
        if len(self.knots) != len(self.values):
            raise ValueError("knots and values must have the same length")
        if self.knots[0] != self.start:
            raise ValueError("first knot must equal the segment start")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise ValueError("knots must be strictly increasing")
        if self.knots[-1] >= self.end and self.interpolation == "left_constant":
            raise ValueError("knots must lie before the segment end")
        if self.interpolation == "linear" and len(self.knots) > 1 and self.knots[-1] > self.end:
            raise ValueError("knots must lie inside the segment")
        return self

    @cached_property
    def simple_pieces(self) -> list["SimpleSegment"]:
        bounds = [*self.knots, self.end]
        out: list[SimpleSegment] = []
        for k, (a, b) in enumerate(zip(bounds, bounds[1:])):
            if b <= a:
                continue
            if self.interpolation == "left_constant" or k + 1 >= len(self.values):
                out.append(ConstantDensity(start=a, end=b, rate=self.values[k]))
            else:
                slope = (self.values[k + 1] - self.values[k]) / (self.knots[k + 1] - a)
                out.append(
                    LinearDensity(
                        start=a, end=b, intercept=self.values[k] - slope * a, slope=slope
                    )
                )
        return out

    def pieces(self) -> list["SimpleSegment"]:
        return list(self.simple_pieces)

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1

    def _piece_at(self, x: float) -> "SimpleSegment":
        for piece in self.simple_pieces:
            if x < piece.end:
                return piece
        return self.simple_pieces[-1]

    def density(self, x: float) -> float:
        return self._piece_at(x).density(x)

    def terminal_density(self) -> float:
        return self.simple_pieces[-1].terminal_density()

    def min_density(self) -> float:
        return min(p.min_density() for p in self.simple_pieces)

    def integral(self, x1: float, x2: float) -> float:
        total = 0.0
        for piece in self.simple_pieces:
            a, b = max(x1, piece.start), min(x2, piece.end)
            if b > a:
                total += piece.integral(a, b)
        return total

    def inverse(self, x1: float, y: float) -> Optional[float]:
        remaining = y
        for piece in self.simple_pieces:
            if piece.end <= x1:
                continue
            a = max(x1, piece.start)
            x2 = piece.inverse(a, remaining)
            if x2 is not None:
                return x2
            remaining -= piece.integral(a, piece.end)
        return None

    def scaled(self, factor: float) -> "TabulatedDensity":
        return TabulatedDensity(
            start=self.start,
            end=self.end,
            knots=list(self.knots),
            values=[v * factor for v in self.values],
            interpolation=self.interpolation,
        )


SimpleSegment = Union[ConstantDensity, LinearDensity, MakehamDensity, PoleDensity]

DensitySegment = Annotated[
    Union[ConstantDensity, LinearDensity, MakehamDensity, PoleDensity, TabulatedDensity],
    Field(discriminator="kind"),
]

MeasureSegment = Annotated[
    Union[ConstantDensity, LinearDensity, MakehamDensity, TabulatedDensity],
    Field(discriminator="kind"),
]


class Atom(BaseModel):
    """Point mass of a cumulative measure."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    time: float = Field(..., ge=0, description="Location of the atom")
    mass: float = Field(..., description="Size of the atom")

    @model_validator(mode="after")
    def _finite(self):
        _check_finite("atom time", self.time)
        _check_finite("atom mass", self.mass)
        return self


def _check_atom_order(atoms: list[Atom]) -> list[Atom]:
    if any(b.time <= a.time for a, b in zip(atoms, atoms[1:])):
        raise ValueError("atom times must be strictly increasing")
    return atoms


# ===== Cumulative Transition Rates =====


class CumulativeRate(BaseModel):
    """One cumulative transition rate: density segments, atoms and reset points."""

    model_config = ConfigDict(
        frozen=True,
        extra="forbid",
        arbitrary_types_allowed=True,
        json_schema_extra={
            "example": {
                "segments": [{"kind": "constant", "start": 0.0, "end": 10.0, "rate": 0.1}],
                "atoms": [],
                "resets": [],
                "dependence": "markov",
            }
        },
    )

    segments: list[DensitySegment] = Field(default_factory=list)
    atoms: list[Atom] = Field(default_factory=list)
    resets: list[float] = Field(default_factory=list)
    dependence: Dependence = "markov"
    rule: Optional[Callable[..., Any]] = Field(
        default=None,
        exclude=True,
        description="Path-dependent rule: HistoryContext -> Markov CumulativeRate",
    )
    rule_bounded: bool = Field(
        default=True, exclude=True, description="Whether the rule's rates are bounded"
    )

    @model_validator(mode="after")
    def _check_rate(self):
        ordered = sorted(self.segments, key=lambda s: s.start)
        if [s.start for s in ordered] != [s.start for s in self.segments]:
            raise ValueError("segments must be ordered by start")
        for a, b in zip(self.segments, self.segments[1:]):
            if b.start < a.end:
                raise ValueError("segments must not overlap")
        for seg in self.segments:
            for piece in seg.pieces():
                if piece.min_density() < 0.0:
                    raise ValueError(f"negative density on [{piece.start}, {piece.end})")
        _check_atom_order(self.atoms)
        for atom in self.atoms:
            if not 0.0 <= atom.mass <= 1.0:
                raise ValueError(f"atom mass {atom.mass} at t={atom.time} outside [0, 1]")
        for r in self.resets:
            _check_finite("reset", r)
        if any(b <= a for a, b in zip(self.resets, self.resets[1:])):
            raise ValueError("reset points must be strictly increasing")
        pole_ends = {s.end for s in self.segments if s.kind == "pole"}
        if pole_ends != set(self.resets):
            raise ValueError("every pole segment must end at a declared reset point and vice versa")
        if set(self.resets) & {a.time for a in self.atoms}:
            raise ValueError("atoms must not sit on reset points")
        if self.dependence == "path_dependent":
            if self.rule is None:
                raise ValueError("path_dependent rates need a rule")
            if self.segments or self.atoms or self.resets:
                raise ValueError("path_dependent rates are described by their rule only")
        elif self.rule is not None:
            raise ValueError("only path_dependent rates carry a rule")
        return self

    @property
    def is_zero(self) -> bool:
        if self.rule is not None:
            return False
        if any(a.mass != 0.0 for a in self.atoms):
            return False
        return all(
            p.kind == "constant" and p.rate == 0.0 for s in self.segments for p in s.pieces()
        )

    @property
    def bounded(self) -> bool:
        if self.dependence == "path_dependent":
            return self.rule_bounded
        return all(s.bounded for s in self.segments)

    @property
    def has_continuous_part(self) -> bool:
        return any(
            not (p.kind == "constant" and p.rate == 0.0)
            for s in self.segments
            for p in s.pieces()
        )

    def scaled(self, factor: float) -> "CumulativeRate":
        """Rate multiplied by a non-negative constant; reset points are kept."""
        if self.dependence == "path_dependent":
            rule = self.rule
            return self.model_copy(update={"rule": lambda ctx: rule(ctx).scaled(factor)})
        return CumulativeRate(
            segments=[s.scaled(factor) for s in self.segments],
            atoms=[Atom(time=a.time, mass=a.mass * factor) for a in self.atoms],
            resets=list(self.resets),
            dependence=self.dependence,
        )


# ===== Signed Measures and Payment Functions =====


class CumulativeSignedMeasure(BaseModel):
    """Signed measure of finite variation: density segments (may overlap, densities add)
    plus atoms."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    segments: list[MeasureSegment] = Field(default_factory=list)
    atoms: list[Atom] = Field(default_factory=list)
    dependence: PaymentDependence = "markov"

    @field_validator("atoms")
    @classmethod
    def _ordered_atoms(cls, v: list[Atom]) -> list[Atom]:
        return _check_atom_order(v)

    @property
    def is_zero(self) -> bool:
        if any(a.mass != 0.0 for a in self.atoms):
            return False
        return all(
            p.kind == "constant" and p.rate == 0.0 for s in self.segments for p in s.pieces()
        )

    def atom_at(self, x: float) -> float:
        for atom in self.atoms:
            if atom.time == x:
                return atom.mass
        return 0.0

    def density(self, x: float, left: bool = False) -> float:
        total = 0.0
        for seg in self.segments:
            inside = seg.start < x <= seg.end if left else seg.start <= x < seg.end
            if inside:
                total += seg.density(x)
        return total

    def scaled(self, factor: float) -> "CumulativeSignedMeasure":
        return CumulativeSignedMeasure(
            segments=[s.scaled(factor) for s in self.segments],
            atoms=[Atom(time=a.time, mass=a.mass * factor) for a in self.atoms],
            dependence=self.dependence,
        )

    def plus(self, other: "CumulativeSignedMeasure") -> "CumulativeSignedMeasure":
        """Sum of two measures of the same dependence class."""
        if other.dependence != self.dependence:
            raise ValueError("cannot add measures of different dependence classes")
        masses: dict[float, float] = {}
        for atom in (*self.atoms, *other.atoms):
            masses[atom.time] = masses.get(atom.time, 0.0) + atom.mass
        return CumulativeSignedMeasure(
            segments=[*self.segments, *other.segments],
            atoms=[Atom(time=t, mass=m) for t, m in sorted(masses.items())],
            dependence=self.dependence,
        )

    @classmethod
    def from_rate(cls, rate: CumulativeRate) -> "CumulativeSignedMeasure":
        """View a bounded Markov or semi-Markov rate as a signed measure."""
        if not rate.bounded or rate.dependence == "path_dependent":
            raise ValueError("only bounded Markov or semi-Markov rates convert to measures")
        return cls(
            segments=list(rate.segments), atoms=list(rate.atoms), dependence=rate.dependence
        )


class PaymentFunction(BaseModel):
    """Transition payment b^{ij}: sum of segment formulas, zero outside the segments."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    segments: list[MeasureSegment] = Field(default_factory=list)
    dependence: PaymentDependence = "markov"
    adjustment: Optional[Callable[[float, float], float]] = Field(
        default=None,
        exclude=True,
        description="Programmatic addend (t, duration) -> value, e.g. a reserve",
    )

    @property
    def is_zero(self) -> bool:
        if self.adjustment is not None:
            return False
        return all(
            p.kind == "constant" and p.rate == 0.0 for s in self.segments for p in s.pieces()
        )

    @property
    def is_piecewise_constant(self) -> bool:
        return self.adjustment is None and all(
            p.is_constant for s in self.segments for p in s.pieces()
        )

    def value(self, t: float, duration: float = 0.0, left: bool = False) -> float:
        x = duration if self.dependence == "semi_markov" else t
        total = 0.0
        for seg in self.segments:
            inside = seg.start < x <= seg.end if left else seg.start <= x < seg.end
            if inside:
                total += seg.density(x)
        if self.adjustment is not None:
            total += self.adjustment(t, duration)
        return total

    def breakpoints(self) -> list[float]:
        points: set[float] = set()
        for seg in self.segments:
            for piece in seg.pieces():
                points.update((piece.start, piece.end))
        return sorted(p for p in points if math.isfinite(p))

    def scaled(self, factor: float) -> "PaymentFunction":
        adjustment = self.adjustment
        return PaymentFunction(
            segments=[s.scaled(factor) for s in self.segments],
            dependence=self.dependence,
            adjustment=None
            if adjustment is None
            else (lambda t, u: factor * adjustment(t, u)),
        )

    def plus_constant(self, c: float) -> "PaymentFunction":
        if c == 0.0:
            return self
        return self.model_copy(
            update={
                "segments": [*self.segments, ConstantDensity(start=0.0, end=INF, rate=c)]
            }
        )
