"""
Model Loader Service - Declarative JSON model files.

A model file is one JSON object with the keys

    states, absorbing, alpha, lambda, phi, sojourn, transition, horizon,
    reserve_dependence

where `lambda` and `transition` are keyed by "i->j" and `phi` and `sojourn` by state.
Non-finite numbers are written as Infinity. See docs/model_schema.md.
"""

import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Union

from pydantic import ValidationError

from ..exceptions import ExportError, InputError, ModelRejectedError, SchemaError
from ..models.insurance import (
    CanonicalInsuranceModel,
    CashFlowCanonical,
    InterestCanonical,
    ReserveDependence,
)
from ..models.paths import StateSpace
from ..models.reports import ValidationReport
from .model_inspector import ModelInspectorService

if TYPE_CHECKING:
    from ..config import Settings

logger = logging.getLogger("thielekit.loader")

KNOWN_KEYS = {
    "states",
    "absorbing",
    "alpha",
    "lambda",
    "phi",
    "sojourn",
    "transition",
    "horizon",
    "reserve_dependence",
}
REQUIRED_KEYS = ("states", "alpha", "horizon")

# Violations that --allow-invalid never waives: simulation could explode
ALWAYS_REJECTED = {"UNBOUNDED_CYCLE"}


class ModelLoaderService:
    """Service for reading, validating and writing model files."""

    def __init__(self, settings: "Settings" = None):
        """Initialize the loader with optional settings injection."""
        if settings is None:
            from ..config import settings as default_settings

            settings = default_settings
        self._settings = settings
        self._inspector = ModelInspectorService(settings)

    # ===== Parsing =====

    def parse(self, data: Any, source: str = "<memory>") -> CanonicalInsuranceModel:
        """Build a model from the decoded JSON document."""
        if not isinstance(data, dict):
            raise SchemaError(source, "a model file holds one JSON object")
        unknown = sorted(set(data) - KNOWN_KEYS)
        if unknown:
            raise SchemaError(source, f"unknown keys {unknown}")
        missing = [k for k in REQUIRED_KEYS if k not in data]
        if missing:
            raise SchemaError(source, f"missing keys {missing}")
        try:
            dependence = data.get("reserve_dependence")
            return CanonicalInsuranceModel(
                states=StateSpace(
                    states=data["states"], absorbing_hint=data.get("absorbing", [])
                ),
                alpha=data["alpha"],
                rates=data.get("lambda", {}),
                phi=InterestCanonical(rates=data.get("phi", {})),
                cashflow=CashFlowCanonical(
                    sojourn=data.get("sojourn", {}),
                    transition=data.get("transition", {}),
                    reserve_dependence=None
                    if dependence is None
                    else ReserveDependence(**dependence),
                ),
                horizon=data["horizon"],
            )
        except ValidationError as exc:
            first = exc.errors()[0]
            loc = ".".join(str(p) for p in first.get("loc", ()))
            raise SchemaError(source, f"{exc.title}.{loc}: {first.get('msg')}") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError(source, str(exc)) from exc

    def loads(self, text: str, source: str = "<memory>") -> CanonicalInsuranceModel:
        """Parse model JSON text without validating the standing assumptions."""
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(source, exc.msg, line=exc.lineno) from exc
        return self.parse(data, source)

    # ===== Loading =====

    def check(
        self, model: CanonicalInsuranceModel, source: str, allow_invalid: bool = False
    ) -> ValidationReport:
        """Validate a parsed model; raise unless it may be used."""
        report = self._inspector.validate_model(model)
        if report.valid:
            return report
        blocking = [v for v in report.violations if not allow_invalid or v.code in ALWAYS_REJECTED]
        if blocking:
            logger.warning("rejected model %s: %s", source, ", ".join(report.codes))
            raise ModelRejectedError([v.model_dump() for v in report.violations])
        logger.warning("loading invalid model %s: %s", source, ", ".join(report.codes))
        return report

    def read_model(self, path: Union[str, Path]) -> CanonicalInsuranceModel:
        """Read and parse a model file without validating it."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(
                f"cannot read model file {path}: {exc.strerror}", field="model"
            ) from exc
        return self.loads(text, str(path))

    def load_model(
        self, path: Union[str, Path], allow_invalid: bool = False
    ) -> CanonicalInsuranceModel:
        """Read, parse and validate a model file."""
        path = Path(path)
        model = self.read_model(path)
        self.check(model, str(path), allow_invalid)
        logger.info("loaded model %s with %d states", path, len(model.states))
        return model

    # ===== Writing =====

    def to_document(self, model: CanonicalInsuranceModel) -> dict[str, Any]:
        """The JSON document of a model; programmatic rules cannot be written."""
        for key, rate in model.rates.items():
            if rate.rule is not None:
                raise ExportError("json", f"rate {key} is a path-dependent rule")
        for key, payment in model.cashflow.transition.items():
            if payment.adjustment is not None:
                raise ExportError("json", f"payment {key} carries a programmatic adjustment")
        document: dict[str, Any] = {
            "states": list(model.labels),
            "absorbing": list(model.states.absorbing_hint),
            "alpha": list(model.alpha),
            "lambda": {k: r.model_dump() for k, r in model.rates.items()},
            "phi": {str(i): m.model_dump() for i, m in model.phi.rates.items()},
            "sojourn": {str(i): m.model_dump() for i, m in model.cashflow.sojourn.items()},
            "transition": {k: b.model_dump() for k, b in model.cashflow.transition.items()},
            "horizon": model.horizon,
        }
        if model.cashflow.reserve_dependence is not None:
            document["reserve_dependence"] = model.cashflow.reserve_dependence.model_dump()
        return document

    def dumps(self, model: CanonicalInsuranceModel) -> str:
        """Serialize a model; output is byte-stable for equal models."""
        return json.dumps(self.to_document(model), indent=2) + "\n"

    def save_model(self, model: CanonicalInsuranceModel, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.dumps(model))
        except OSError as exc:
            raise ExportError("json", f"{path}: {exc.strerror}") from exc


# Type alias for cleaner imports
ModelLoader = ModelLoaderService
