"""
End-to-End Tests for the thielekit command line.
These tests run complete commands from argument parsing to the written reports.
"""

import json
import math
import os
from unittest.mock import patch

import pytest

from app.cli.commands import CommandRunner
from main import build_parser, main

MODELS = os.path.join(os.path.dirname(os.path.dirname(__file__)), "models")


def _model(name: str) -> str:
    return os.path.join(MODELS, f"{name}.json")


def _point_value(text: str) -> float:
    return float(text.splitlines()[1].split(",")[2])


class TestReserveFlow:
    """E2E tests for reserves and probabilities."""

    def test_term_reserve(self, cli_env, capsys):
        """Test the reserve point of the term insurance."""
        code = main(
            ["reserve", "--model", _model("term"), "--state", "0", "--time", "0", "--h", "0.01"]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith("state,time,value\n0,0,0.517913")

    def test_reserve_grid_to_file(self, cli_env):
        """Test the full reserve grid is written to --out."""
        target = cli_env / "reserves.csv"
        code = main(["reserve", "--model", _model("endowment"), "--h", "1", "--out", str(target)])
        assert code == 0
        lines = target.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "state,time,value"
        assert len(lines) == 1 + 2 * 11

    def test_reserve_dependence_is_resolved(self, cli_env, capsys):
        """Test surrender paying 90% of the reserve is solved through its explicit form."""
        code = main(
            ["reserve", "--model", _model("surrender"), "--state", "0", "--time", "0", "--h", "0.1"]
        )
        assert code == 0
        delta = 0.045
        expected = -0.05 * (1.0 - math.exp(-10 * delta)) / delta + math.exp(-10 * delta)
        assert _point_value(capsys.readouterr().out) == pytest.approx(expected, abs=1e-8)

    def test_monte_carlo_reserve(self, cli_env, capsys):
        """Test --mc reports an estimate with its standard error."""
        code = main(
            [
                "reserve",
                "--model",
                _model("term"),
                "--state",
                "0",
                "--time",
                "0",
                "--mc",
                "--n",
                "500",
                "--seed",
                "1",
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert out.splitlines()[0] == "state,time,value,std_error,n"
        assert out.splitlines()[1].endswith(",500")

    def test_transition_probability(self, cli_env, capsys):
        """Test P(Z(10) = 0 | Z(0) = 0) = exp(-1)."""
        code = main(
            [
                "prob",
                "--model",
                _model("term"),
                "--target",
                "0",
                "--state",
                "0",
                "--time",
                "0",
                "--h",
                "0.1",
            ]
        )
        assert code == 0
        assert _point_value(capsys.readouterr().out) == pytest.approx(math.exp(-1.0), abs=1e-10)

    def test_point_needs_both_coordinates(self, cli_env, capsys):
        """Test --state without --time is an input error."""
        code = main(["reserve", "--model", _model("term"), "--state", "0"])
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error_code"] == "INPUT_ERROR"


class TestSimulateFlow:
    """E2E tests for path dumps."""

    def test_output_independent_of_workers(self, cli_env):
        """Test the same seed gives byte-identical CSV for 1 and 4 workers."""
        outputs = []
        for workers in ("1", "4"):
            target = cli_env / f"paths_{workers}.csv"
            code = main(
                [
                    "simulate",
                    "--model",
                    _model("disability"),
                    "--n",
                    "300",
                    "--seed",
                    "42",
                    "--workers",
                    workers,
                    "--out",
                    str(target),
                ]
            )
            assert code == 0
            outputs.append(target.read_bytes())
        assert outputs[0] == outputs[1]
        assert outputs[0].startswith(b"path_id,time,from,to\n0,0,,0\n")

    def test_seed_is_required(self, cli_env, capsys):
        """Test simulations refuse to run without --seed."""
        code = main(["simulate", "--model", _model("term"), "--n", "10"])
        assert code == 1
        assert json.loads(capsys.readouterr().err)["details"]["field"] == "seed"


class TestCompareFlow:
    """E2E tests for basis comparison."""

    def test_technical_basis_is_pessimistic(self, cli_env, capsys):
        """Test tech (mu = 0.12) judged against market (mu = 0.1)."""
        code = main(["compare", "--a", _model("tech"), "--b", _model("market"), "--h", "0.1"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["classification"] == "pessimistic"
        assert report["identical_reset_points"] is True
        assert report["states"][0]["difference_at_start"] == pytest.approx(
            0.12 / 0.17 * (1.0 - math.exp(-1.7)) - 0.1 / 0.15 * (1.0 - math.exp(-1.5)), abs=1e-8
        )

    def test_market_against_tech_is_optimistic(self, cli_env, capsys):
        """Test swapping the bases swaps the verdict."""
        code = main(["compare", "--a", _model("market"), "--b", _model("tech"), "--h", "0.1"])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["classification"] == "optimistic"


class TestTransformFlow:
    """E2E tests for model transformations."""

    def test_cemetery_then_reserve(self, cli_env, capsys):
        """Test the transformed endowment file keeps the reserve exp(-1.5)."""
        target = cli_env / "folded.json"
        code = main(
            [
                "transform",
                "--model",
                _model("endowment"),
                "--op",
                "cemetery",
                "--keep",
                "0",
                "--out",
                str(target),
            ]
        )
        assert code == 0
        assert json.loads(target.read_text(encoding="utf-8"))["lambda"] == {}
        code = main(
            ["reserve", "--model", str(target), "--state", "0", "--time", "0", "--h", "0.1"]
        )
        assert code == 0
        assert _point_value(capsys.readouterr().out) == pytest.approx(math.exp(-1.5), abs=1e-10)

    def test_keep_is_required(self, cli_env):
        """Test prune without --keep is refused."""
        assert main(["transform", "--model", _model("term"), "--op", "prune"]) == 1

    def test_failed_precondition(self, cli_env, capsys):
        """Test cemetery on a death benefit reports the failed condition."""
        code = main(["transform", "--model", _model("term"), "--op", "cemetery", "--keep", "0"])
        assert code == 1
        error = json.loads(capsys.readouterr().err)
        assert error["error_code"] == "PRECONDITION_FAILED"
        assert "transition_payments_into" in error["details"]["witness"]


class TestResidualFlow:
    """E2E tests for the residual diagnostic."""

    def test_exact_reserves_pass(self, cli_env, capsys):
        """Test solved term reserves satisfy Thiele along sampled paths."""
        code = main(
            [
                "residual",
                "--model",
                _model("term"),
                "--n",
                "20",
                "--seed",
                "3",
                "--h",
                "0.01",
                "--tolerance",
                "1e-6",
            ]
        )
        report = json.loads(capsys.readouterr().out)
        assert code == 0
        assert report["passed"] is True
        assert report["paths"] == 20


class TestValidateFlow:
    """E2E tests for validation and exit codes."""

    def test_valid_model(self, cli_env, capsys):
        """Test a valid model reports its regime."""
        assert main(["validate", "--model", _model("semi_markov")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report == {"valid": True, "regime": "semi_markov", "violations": []}

    def test_invalid_model(self, cli_env, capsys):
        """Test violations exit with 1."""
        path = cli_env / "bad.json"
        with open(_model("term"), encoding="utf-8") as fh:
            document = json.load(fh)
        document["alpha"] = [0.9, 0.0]
        path.write_text(json.dumps(document), encoding="utf-8")
        assert main(["validate", "--model", str(path)]) == 1
        report = json.loads(capsys.readouterr().out)
        assert report["valid"] is False
        assert report["violations"][0]["code"] == "ALPHA_NOT_NORMALIZED"

    def test_schema_error(self, cli_env, capsys):
        """Test unparsable files exit with 1."""
        path = cli_env / "broken.json"
        path.write_text("{", encoding="utf-8")
        assert main(["validate", "--model", str(path)]) == 1
        assert json.loads(capsys.readouterr().err)["error_code"] == "SCHEMA_ERROR"

    def test_usage_error(self, cli_env):
        """Test unknown subcommands exit with 1."""
        assert main(["solve", "--model", _model("term")]) == 1

    def test_help_exits_cleanly(self, cli_env):
        """Test --help exits with 0."""
        assert main(["--help"]) == 0

    def test_internal_error(self, cli_env, capsys):
        """Test unexpected exceptions exit with 2."""
        with patch.object(CommandRunner, "cmd_validate", side_effect=RuntimeError("boom")):
            code = main(["validate", "--model", _model("term")])
        assert code == 2
        assert json.loads(capsys.readouterr().err)["error_code"] == "INTERNAL_ERROR"


class TestRunLog:
    """Tests for the command audit trail."""

    def test_run_is_logged(self, cli_env):
        """Test a run is kept in memory and written to the log file."""
        with patch("os.getlogin", return_value="actuary"):
            runner = CommandRunner()
            code = runner.run(build_parser().parse_args(["validate", "--model", _model("term")]))
        assert code == 0
        entry = runner.get_run_logs()[0]
        assert entry.command == "validate"
        assert entry.result == "ok"
        assert entry.user == "actuary"
        assert entry.models == [_model("term")]
        log_text = (cli_env / "logs" / "cli.log").read_text(encoding="utf-8")
        assert "Command: validate" in log_text

    def test_failed_run_records_error_code(self, cli_env):
        """Test failures are logged with their error code."""
        runner = CommandRunner()
        code = runner.run(build_parser().parse_args(["simulate", "--model", _model("term")]))
        assert code == 1
        assert runner.get_run_logs()[0].result == "INPUT_ERROR"

    def test_user_fallback(self, cli_env):
        """Test the user comes from the environment when getlogin fails."""
        with patch("os.getlogin", side_effect=OSError):
            with patch.dict(os.environ, {"USERNAME": "", "USER": "fallback"}):
                runner = CommandRunner()
                assert runner._get_current_user() == "fallback"

    def test_log_limit(self, cli_env):
        """Test get_run_logs returns the newest entries first."""
        runner = CommandRunner()
        for _ in range(3):
            runner.run(build_parser().parse_args(["validate", "--model", _model("term")]))
        assert len(runner.get_run_logs(limit=2)) == 2
