"""
ThieleKit - Main Application Entry Point

Batch command line for canonical multi-state insurance models:

    python main.py validate  --model models/term.json
    python main.py reserve   --model models/term.json --state 0 --time 0 --h 1e-3
    python main.py simulate  --model models/term.json --n 1000 --seed 42
    python main.py compare   --a models/tech.json --b models/market.json

Exit codes: 0 success, 1 validation or precondition failure, 2 internal error.
"""

import argparse
import sys
from typing import Optional

from app.cli.commands import TRANSFORMS, CommandRunner
from app.config import settings
from app.exceptions import EXIT_INVALID, EXIT_OK


def _state_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated states, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _add_common(parser: argparse.ArgumentParser, model: bool = True) -> None:
    if model:
        parser.add_argument("--model", required=True, help="Model file (JSON)")
    parser.add_argument("--out", default=None, help="Output file (default: stdout)")
    parser.add_argument(
        "--allow-invalid",
        action="store_true",
        help="Load models that violate assumptions other than unbounded-rate cycles",
    )


def _add_grid(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--h", type=float, default=None, help="Maximal grid step")
    parser.add_argument(
        "--scheme",
        choices=("exact", "implicit_euler"),
        default=None,
        help=f"Stepping scheme (default: {settings.SOLVER_SCHEME})",
    )


def _add_simulation(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, default=None, help="Number of simulated paths")
    parser.add_argument("--seed", type=int, default=None, help="64-bit seed (required)")
    parser.add_argument("--workers", type=int, default=None, help="Simulation threads")


def _add_point(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--state", type=int, default=None, help="State of the point")
    parser.add_argument("--time", type=float, default=None, help="Time of the point")
    parser.add_argument(
        "--duration", type=float, default=0.0, help="Duration of the point (semi-Markov)"
    )
    parser.add_argument("--mc", action="store_true", help="Estimate by Monte Carlo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thielekit",
        description=f"{settings.APP_NAME} v{settings.APP_VERSION} - {settings.APP_DESCRIPTION}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="Check a model against the standing assumptions")
    _add_common(p)

    p = sub.add_parser("simulate", help="Dump simulated paths")
    _add_common(p)
    _add_simulation(p)
    p.add_argument("--horizon", type=float, default=None, help="Simulation horizon")

    p = sub.add_parser("prob", help="Transition probabilities into a target state")
    _add_common(p)
    _add_grid(p)
    _add_point(p)
    _add_simulation(p)
    p.add_argument("--target", type=int, required=True, help="Target state")
    p.add_argument("--horizon", type=float, default=None, help="Target time")

    p = sub.add_parser("reserve", help="State-wise prospective reserves")
    _add_common(p)
    _add_grid(p)
    _add_point(p)
    _add_simulation(p)

    p = sub.add_parser("compare", help="Compare two bases of the same contract")
    _add_common(p, model=False)
    p.add_argument("--a", required=True, help="Basis under judgement, e.g. the technical basis")
    p.add_argument("--b", required=True, help="Reference basis, e.g. the market basis")
    p.add_argument("--h", type=float, default=None, help="Maximal grid step")
    p.add_argument(
        "--include-interest",
        action="store_true",
        help="Let the Cantelli check absorb interest differences",
    )

    p = sub.add_parser("transform", help="Apply a model transformation")
    _add_common(p)
    p.add_argument("--op", choices=TRANSFORMS, required=True, help="Transformation")
    p.add_argument("--keep", type=_state_list, default=None, help="Kept states, e.g. 0,1")
    p.add_argument("--alpha", type=_float_list, default=None, help="New initial distribution")
    p.add_argument("--h", type=float, default=None, help="Grid step of substituted reserves")

    p = sub.add_parser("residual", help="Path-wise Thiele residual of the solved reserves")
    _add_common(p)
    _add_grid(p)
    _add_simulation(p)
    p.add_argument(
        "--tolerance",
        type=float,
        default=None,
        help="Fail when the residual per unit time exceeds it",
    )
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Run the application."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors are input errors; --help exits cleanly
        return EXIT_INVALID if exc.code else EXIT_OK
    return CommandRunner().run(args)


if __name__ == "__main__":
    sys.exit(main())
