"""
Command handlers for the thielekit command line.

Each handler takes the parsed argparse namespace, writes its report and returns the
process exit code. `CommandRunner.run` turns exceptions into an error document on
stderr and keeps an audit record of every command.
"""

import argparse
import logging
import os
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler
from typing import TYPE_CHECKING, Optional

from ..dependencies import Container
from ..exceptions import EXIT_INVALID, EXIT_OK, InputError, handle_exception
from ..models.insurance import CanonicalInsuranceModel
from ..models.reports import RunLog, SimConfig

if TYPE_CHECKING:
    from ..config import Settings

TRANSFORMS = ("prune", "shorten", "cemetery", "reserve_dependent", "alpha")


class CommandRunner:
    """
    Runs commands against the shared services.
    Every run is written to the rotating audit log.
    """

    def __init__(self, settings: "Settings" = None):
        if settings is None:
            settings = Container.get_settings()
        self._settings = settings
        self.loader = Container.get_model_loader(settings)
        self.inspector = Container.get_model_inspector(settings)
        self.simulator = Container.get_simulator(settings)
        self.solver = Container.get_backward_solver(settings)
        self.comparison = Container.get_comparison(settings)
        self.exporter = Container.get_exporter(settings)
        self._setup_logging()
        self.run_logs: list[RunLog] = []

    def _setup_logging(self):
        """Setup the rotating file log for the command audit trail."""
        os.makedirs(os.path.dirname(self._settings.LOG_FILE) or ".", exist_ok=True)

        self.logger = logging.getLogger("thielekit")
        self.logger.setLevel(logging.DEBUG if self._settings.DEBUG else logging.INFO)

        if not self.logger.handlers:
            handler = RotatingFileHandler(
                self._settings.LOG_FILE,
                maxBytes=self._settings.LOG_MAX_SIZE,
                backupCount=self._settings.LOG_BACKUP_COUNT,
                encoding="utf-8",
            )
            handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(message)s"))
            self.logger.addHandler(handler)
            if self._settings.DEBUG:
                console = logging.StreamHandler(sys.stderr)
                console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
                self.logger.addHandler(console)

    def _get_current_user(self) -> Optional[str]:
        """Get current username for logging."""
        try:
            return os.getlogin()
        except OSError:
            return os.environ.get("USERNAME") or os.environ.get("USER")

    def _log_run(self, command: str, models: list[str], result: str, exit_code: int):
        """Log a command run to file and memory."""
        log_entry = RunLog(
            timestamp=datetime.now(),
            command=command,
            models=models,
            result=result,
            exit_code=exit_code,
            user=self._get_current_user(),
        )

        self.run_logs.append(log_entry)

        # Keep only last 1000 entries in memory
        if len(self.run_logs) > 1000:
            self.run_logs = self.run_logs[-1000:]

        self.logger.info(
            f"Command: {command} | Models: {', '.join(models) or '-'} | "
            f"Result: {result} | Exit: {exit_code} | User: {log_entry.user}"
        )

    def get_run_logs(self, limit: int = 100) -> list[RunLog]:
        """Most recent audit records, newest first."""
        return list(reversed(self.run_logs[-limit:]))

    # ===== Dispatch =====

    def run(self, args: argparse.Namespace) -> int:
        """Execute one parsed command and return its exit code."""
        models = [
            str(p) for p in (getattr(args, k, None) for k in ("model", "a", "b")) if p is not None
        ]
        handler = getattr(self, f"cmd_{args.command}")
        try:
            code = handler(args)
        except Exception as exc:
            code, response = handle_exception(exc)
            sys.stderr.write(response.model_dump_json(indent=2) + "\n")
            sys.stderr.flush()
            self._log_run(args.command, models, response.error_code, code)
            return code
        self._log_run(args.command, models, "ok" if code == EXIT_OK else "failed", code)
        return code

    # ===== Helpers =====

    def _load(self, args: argparse.Namespace, key: str = "model") -> CanonicalInsuranceModel:
        return self.loader.load_model(getattr(args, key), getattr(args, "allow_invalid", False))

    @staticmethod
    def _points(args: argparse.Namespace) -> list[tuple[int, float]]:
        if args.state is None and args.time is None:
            return []
        if args.state is None or args.time is None:
            raise InputError("--state and --time must be given together", field="state")
        return [(args.state, args.time)]

    def _sim_config(self, args: argparse.Namespace, horizon: float) -> SimConfig:
        if args.seed is None:
            raise InputError("simulation needs an explicit --seed", field="seed")
        if args.n is None:
            raise InputError("simulation needs --n", field="n")
        return SimConfig(n_paths=args.n, seed=args.seed, horizon=horizon, workers=args.workers)

    def _resolved(self, model: CanonicalInsuranceModel) -> CanonicalInsuranceModel:
        if model.cashflow.reserve_dependence is None:
            return model
        self.logger.info("resolving reserve-dependent payments before solving")
        return self.comparison.transform_reserve_dependent(model)

    def _reserves(self, model: CanonicalInsuranceModel, args: argparse.Namespace):
        if args.h is None and self.inspector.detect_regime(model) == "discrete":
            return self.solver.thiele_discrete_recursion(model)
        return self.solver.thiele_solve(model, h=args.h, scheme=args.scheme)

    # ===== Commands =====

    def cmd_validate(self, args: argparse.Namespace) -> int:
        """Print the validation report of a model file."""
        model = self.loader.read_model(args.model)
        report = self.inspector.validate_model(model)
        document = {
            "valid": report.valid,
            "regime": self.inspector.detect_regime(model),
            "violations": [v.model_dump(mode="json") for v in report.violations],
        }
        self.exporter.write(self.exporter.to_json(document), args.out)
        return EXIT_OK if report.valid else EXIT_INVALID

    def cmd_simulate(self, args: argparse.Namespace) -> int:
        """Dump simulated paths as CSV."""
        model = self._load(args)
        config = self._sim_config(args, args.horizon or model.horizon)
        paths = self.simulator.sample_paths(model, config)
        self.exporter.write(self.exporter.paths_csv(paths), args.out)
        return EXIT_OK

    def cmd_prob(self, args: argparse.Namespace) -> int:
        """Transition probabilities into --target at time --horizon."""
        model = self._load(args)
        T = model.horizon if args.horizon is None else args.horizon
        points = self._points(args)
        if args.mc:
            if not points:
                raise InputError("--mc needs --state and --time", field="mc")
            config = self._sim_config(args, T)
            estimates = [
                self.simulator.mc_transition_probability(model, t, s, T, args.target, config)
                for s, t in points
            ]
            text = self.exporter.estimate_csv(points, estimates)
        elif args.h is None and self.inspector.detect_regime(model) == "discrete":
            table = self.solver.kolmogorov_discrete_recursion(model, args.target, T)
            if points:
                text = self.exporter.values_csv(
                    (s, float(t), table.probability(s, self._period(t, table.horizon)))
                    for s, t in points
                )
            else:
                text = self.exporter.table_csv(table)
        else:
            field = self.solver.kolmogorov_solve(
                model, args.target, horizon=T, h=args.h, scheme=args.scheme
            )
            text = (
                self.exporter.points_csv(field, points, args.duration)
                if points
                else self.exporter.field_csv(field)
            )
        self.exporter.write(text, args.out)
        return EXIT_OK

    @staticmethod
    def _period(t: float, horizon: int) -> int:
        if not float(t).is_integer() or not 0 <= t <= horizon:
            raise InputError("discrete points need an integer time in [0, N]", field="time")
        return int(t)

    def cmd_reserve(self, args: argparse.Namespace) -> int:
        """State-wise prospective reserves."""
        model = self._resolved(self._load(args))
        points = self._points(args)
        if args.mc:
            if not points:
                raise InputError("--mc needs --state and --time", field="mc")
            config = self._sim_config(args, model.horizon)
            estimates = [self.simulator.mc_reserve(model, t, s, config) for s, t in points]
            text = self.exporter.estimate_csv(points, estimates)
        else:
            field = self._reserves(model, args)
            text = (
                self.exporter.points_csv(field, points, args.duration)
                if points
                else self.exporter.field_csv(field)
            )
        self.exporter.write(text, args.out)
        return EXIT_OK

    def cmd_compare(self, args: argparse.Namespace) -> int:
        """Safe-side and Cantelli verdict of basis --a judged against reference basis --b."""
        candidate = self._load(args, "a")
        reference = self._load(args, "b")
        report = self.comparison.compare_models(
            reference, candidate, h=args.h, include_interest=args.include_interest
        )
        self.exporter.write(self.exporter.to_json(report), args.out)
        return EXIT_OK

    def cmd_transform(self, args: argparse.Namespace) -> int:
        """Apply a model transformation and write the resulting model file."""
        model = self._load(args)
        keep = args.keep or []
        if args.op in ("prune", "shorten", "cemetery") and not keep:
            raise InputError(f"transform {args.op} needs --keep", field="keep")
        if args.op == "prune":
            result = self.comparison.prune_irrelevant(model, keep)
        elif args.op == "shorten":
            result = self.comparison.transform_shorten(model, keep, h=args.h, tabulate=True)
        elif args.op == "cemetery":
            result = self.comparison.transform_cemetery(model, keep)
        elif args.op == "reserve_dependent":
            result = self.comparison.transform_reserve_dependent(model)
        else:
            if not args.alpha:
                raise InputError("transform alpha needs --alpha", field="alpha")
            result = self.comparison.set_initial_distribution(model, args.alpha)
        self.exporter.write(self.loader.dumps(result), args.out)
        return EXIT_OK

    def cmd_residual(self, args: argparse.Namespace) -> int:
        """Path-wise Thiele residual of the solved reserves along simulated paths."""
        model = self._load(args)
        candidate = self._reserves(self._resolved(model), args)
        config = self._sim_config(args, model.horizon)
        worst, worst_path, worst_abs = 0.0, None, 0.0
        for index, path in enumerate(self.simulator.sample_paths(model, config)):
            report = self.solver.thiele_residual(model, candidate, path)
            worst_abs = max(worst_abs, report.max_abs)
            if worst_path is None or report.max_per_unit_time > worst:
                worst, worst_path = report.max_per_unit_time, index
        document = {
            "paths": config.n_paths,
            "max_abs": worst_abs,
            "max_per_unit_time": worst,
            "worst_path": worst_path,
        }
        if args.tolerance is not None:
            document["tolerance"] = args.tolerance
            document["passed"] = worst <= args.tolerance
        self.exporter.write(self.exporter.to_json(document), args.out)
        if args.tolerance is not None and worst > args.tolerance:
            return EXIT_INVALID
        return EXIT_OK
