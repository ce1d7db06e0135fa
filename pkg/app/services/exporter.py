"""
Exporter Service - Deterministic CSV and JSON reports.

CSV uses ',' separators, '.' decimals and LF line endings; numbers carry
SIGNIFICANT_DIGITS significant digits. JSON documents are sorted and indented.
"""

import csv
import io
import json
import logging
import sys
from pathlib import Path as FilePath
from typing import TYPE_CHECKING, Iterable, Optional, Union

from pydantic import BaseModel

from ..exceptions import ExportError
from ..models.grid import ReserveField
from ..models.paths import Path
from ..models.reports import DiscreteTable, McEstimate

if TYPE_CHECKING:
    from ..config import Settings

logger = logging.getLogger("thielekit.exporter")


class ExporterService:
    """Service for rendering reports."""

    def __init__(self, settings: "Settings" = None):
        if settings is None:
            from ..config import settings as default_settings

            settings = default_settings
        self._settings = settings

    def number(self, x: float) -> str:
        return f"{float(x):.{self._settings.SIGNIFICANT_DIGITS}g}"

    def _csv(self, header: list[str], rows: Iterable[Iterable]) -> str:
        output = io.StringIO()
        writer = csv.writer(output, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [self.number(v) if isinstance(v, float) else v for v in row]
            )
        return output.getvalue()

    # ===== CSV Reports =====

    def field_csv(self, field: ReserveField) -> str:
        """Every grid value of a reserve or probability field."""
        header = ["state", "time", "value"]
        if field.regime == "semi_markov":
            header = ["state", "time", "duration", "value"]
        return self._csv(header, field.rows())

    def points_csv(
        self,
        field: ReserveField,
        points: list[tuple[int, float]],
        duration: float = 0.0,
    ) -> str:
        """Field values at (state, time) points."""
        return self.values_csv([(s, float(t), field.value(s, t, duration)) for s, t in points])

    def values_csv(self, rows: Iterable[tuple[int, float, float]]) -> str:
        """Rows of (state, time, value)."""
        return self._csv(["state", "time", "value"], rows)

    def estimate_csv(self, points: list[tuple[int, float]], estimates: list[McEstimate]) -> str:
        """Monte Carlo estimates at (state, time) points."""
        rows = [
            (s, float(t), e.value, e.std_error, e.n) for (s, t), e in zip(points, estimates)
        ]
        return self._csv(["state", "time", "value", "std_error", "n"], rows)

    def table_csv(self, table: DiscreteTable) -> str:
        """Discrete recursion table, one row per (period, state)."""
        rows = [
            (n, state, float(table.values[n][k]))
            for n in range(table.horizon + 1)
            for k, state in enumerate(table.states)
        ]
        return self._csv(["n", "state", "probability"], rows)

    def paths_csv(self, paths: list[Path]) -> str:
        """Path dump; the initial mark of each path has an empty 'from'."""

        def rows():
            for index, path in enumerate(paths):
                t0, z0 = path.points[0]
                yield (index, float(t0), "", z0)
                for time, src, dst in path.jumps:
                    yield (index, float(time), src, dst)

        return self._csv(["path_id", "time", "from", "to"], rows())

    # ===== JSON Reports =====

    def to_json(self, report: Union[BaseModel, dict, list]) -> str:
        data = report.model_dump(mode="json") if isinstance(report, BaseModel) else report
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    # ===== Output =====

    def write(self, text: str, path: Optional[Union[str, FilePath]] = None) -> None:
        """Write a report to a file, or to stdout when no path is given."""
        if path is None:
            sys.stdout.write(text)
            sys.stdout.flush()
            return
        path = FilePath(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise ExportError(path.suffix.lstrip(".") or "text", f"{path}: {exc.strerror}") from exc
        logger.info("wrote %d bytes to %s", len(text), path)


# Type alias for cleaner imports
Exporter = ExporterService
