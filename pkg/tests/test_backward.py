"""
Unit tests for the BackwardSolverService: Thiele and Kolmogorov solvers, discrete
recursions and the path-wise residual.
"""

import math

import numpy as np
import pytest

from app.exceptions import InputError, PreconditionError, RegimeError
from app.models.paths import Path
from app.models.rates import INF, Atom, CumulativeRate, LinearDensity, PoleDensity
from app.models.reports import SimConfig
from app.services.backward import MarkovSystem

from tests.factories import (
    build_model,
    constant_rate,
    discrete_model,
    endowment_model,
    measure,
    payment,
    term_model,
)

TERM_RESERVE = 0.1 / 0.15 * (1.0 - math.exp(-1.5))
ENDOWMENT_RESERVE = math.exp(-1.5)


def _term_reserve(t: float, mu: float = 0.1, r: float = 0.05) -> float:
    return mu / (mu + r) * (1.0 - math.exp(-(mu + r) * (10.0 - t)))


class TestBuildGrid:
    """Tests for grid construction."""

    def test_step_and_endpoints(self, solver):
        """Test the grid spans [0, T] with step at most h."""
        grid = solver.build_grid(term_model(), h=0.3)
        assert grid.points[0] == 0.0
        assert grid.points[-1] == 10.0
        assert max(np.diff(grid.array)) <= 0.3 + 1e-12

    def test_mandatory_points_included(self, solver):
        """Test atoms and segment ends are grid points."""
        model = build_model(
            [0, 1], {"0->1": CumulativeRate(atoms=[Atom(time=3.3, mass=0.1)])}, horizon=10.0
        )
        grid = solver.build_grid(model, h=1.0)
        assert 3.3 in grid.points
        assert 3.3 in grid.mandatory

    def test_non_positive_step(self, solver):
        """Test h must be positive."""
        with pytest.raises(InputError):
            solver.build_grid(term_model(), h=-1.0)


class TestThieleSolve:
    """Tests for thiele_solve against closed forms."""

    def test_term_insurance(self, solver):
        """Test the term insurance reserve at time 0."""
        field = solver.thiele_solve(term_model(), h=0.01)
        assert field.value(0, 0.0) == pytest.approx(TERM_RESERVE, abs=1e-8)
        assert field.value(1, 0.0) == 0.0

    def test_term_insurance_between_grid_points(self, solver):
        """Test dense output off the grid."""
        field = solver.thiele_solve(term_model(), h=0.5)
        assert field.value(0, 3.3) == pytest.approx(_term_reserve(3.3), abs=1e-8)

    def test_pure_endowment(self, solver):
        """Test exp(-1.5) and the jump of the reserve at the endowment atom."""
        field = solver.thiele_solve(endowment_model(), h=0.01)
        assert field.value(0, 0.0) == pytest.approx(ENDOWMENT_RESERVE, abs=1e-8)
        assert field.value(0, 10.0) == 0.0
        assert field.value(0, 10.0, left=True) == pytest.approx(1.0)

    def test_implicit_euler_converges(self, solver):
        """Test the first-order scheme is close to the exact one."""
        field = solver.thiele_solve(term_model(), h=0.01, scheme="implicit_euler")
        assert field.value(0, 0.0) == pytest.approx(TERM_RESERVE, abs=5e-3)

    def test_unknown_scheme(self, solver):
        """Test scheme names are checked."""
        with pytest.raises(InputError):
            solver.thiele_solve(term_model(), scheme="rk4")

    def test_time_varying_rate(self, solver):
        """Test a linear mortality rate with premiums against a brute-force integral."""
        seg_rate = LinearDensity(start=0.0, end=10.0, intercept=0.05, slope=0.01)
        model = build_model(
            [0, 1],
            {"0->1": CumulativeRate(segments=[seg_rate])},
            phi={0: measure(0.03)},
            sojourn={0: measure(-0.02)},
            transition={"0->1": payment(1.0)},
        )
        field = solver.thiele_solve(model, h=0.05)
        u = np.linspace(0.0, 10.0, 200001)
        mu = 0.05 + 0.01 * u
        survival_discount = np.exp(-(0.05 * u + 0.005 * u * u) - 0.03 * u)
        f = survival_discount * (mu - 0.02)
        expected = float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(u)))
        assert field.value(0, 0.0) == pytest.approx(expected, abs=1e-5)

    def test_interest_atoms(self, solver):
        """Test a deterministic payment of 1 at 2 discounted by two 5% atoms."""
        model = build_model(
            [0, 1],
            {},
            horizon=3.0,
            phi={0: measure(atoms={1.0: 0.05, 2.0: 0.05})},
            sojourn={0: measure(atoms={2.0: 1.0})},
        )
        field = solver.thiele_solve(model, h=0.1)
        assert field.value(0, 0.0) == pytest.approx(1.0 / 1.1025, rel=1e-12)

    def test_pole_rate(self, solver):
        """Test a forced exit before the reset collects the benefit with certainty."""
        rate = CumulativeRate(
            segments=[PoleDensity(start=0.0, end=1.0, strength=1.0)], resets=[1.0]
        )
        model = build_model([0, 1], {"0->1": rate}, horizon=1.0, transition={"0->1": payment(1.0)})
        field = solver.thiele_solve(model, h=0.001)
        assert field.value(0, 0.0) == pytest.approx(1.0, abs=1e-3)

    def test_alpha_is_ignored(self, solver, comparison):
        """Test solvers never read the initial distribution."""
        model = term_model()
        moved = comparison.set_initial_distribution(model, [0.5, 0.5])
        assert solver.thiele_solve(model, h=0.1).identical_to(solver.thiele_solve(moved, h=0.1))

    def test_path_dependent_refused(self, solver):
        """Test path-dependent models go to Monte Carlo."""
        rate = CumulativeRate(dependence="path_dependent", rule=lambda ctx: constant_rate(0.1))
        with pytest.raises(RegimeError):
            solver.thiele_solve(build_model([0, 1], {"0->1": rate}))

    def test_reserve_dependence_refused(self, solver, loader, models_dir):
        """Test reserve-linked payments must be resolved first."""
        model = loader.load_model(models_dir / "surrender.json")
        with pytest.raises(PreconditionError):
            solver.thiele_solve(model)


class TestSemiMarkov:
    """Tests for the semi-Markov solver."""

    def test_duration_rate_matches_markov_when_constant(self, solver):
        """Test a constant duration rate reproduces the Markov reserve."""
        model = build_model(
            [0, 1],
            {"0->1": constant_rate(0.1, dependence="semi_markov")},
            phi={0: measure(0.05), 1: measure(0.05)},
            transition={"0->1": payment(1.0)},
        )
        field = solver.thiele_solve(model, h=0.01)
        assert field.regime == "semi_markov"
        assert field.value(0, 0.0, duration=0.0) == pytest.approx(TERM_RESERVE, abs=5e-3)

    def test_duration_survival(self, solver):
        """Test staying probability exp(-1) under mu(u) = 0.02 u."""
        rate = CumulativeRate(
            segments=[LinearDensity(start=0.0, end=10.0, intercept=0.0, slope=0.02)],
            dependence="semi_markov",
        )
        model = build_model([0, 1], {"0->1": rate})
        field = solver.kolmogorov_solve(model, 0, horizon=10.0, h=0.01)
        assert field.kind == "kolmogorov"
        assert field.value(0, 0.0, duration=0.0) == pytest.approx(math.exp(-1.0), abs=5e-3)

    def test_duration_atoms_refused(self, solver):
        """Test duration atoms need Monte Carlo."""
        rate = CumulativeRate(atoms=[Atom(time=1.0, mass=0.5)], dependence="semi_markov")
        with pytest.raises(RegimeError):
            solver.thiele_solve(build_model([0, 1], {"0->1": rate}))


class TestKolmogorov:
    """Tests for transition probabilities."""

    def test_survival_probability(self, solver):
        """Test P(Z(10) = 0 | Z(0) = 0) = exp(-1)."""
        field = solver.kolmogorov_solve(term_model(), 0, h=0.1)
        assert field.value(0, 0.0) == pytest.approx(math.exp(-1.0), abs=1e-10)
        assert field.value(1, 0.0) == pytest.approx(0.0, abs=1e-14)

    def test_rows_sum_to_one(self, solver, loader, models_dir):
        """Test probabilities into all targets sum to one."""
        model = loader.load_model(models_dir / "disability.json")
        fields = solver.kolmogorov_solve_all(model, h=0.1)
        for state in model.labels:
            total = sum(fields[k].value(state, 5.0) for k in model.labels)
            assert total == pytest.approx(1.0, abs=1e-10)

    def test_target_time_zero(self, solver):
        """Test T = 0 gives the identity."""
        field = solver.kolmogorov_solve(term_model(), 1, horizon=0.0)
        assert field.value(1, 0.0) == 1.0
        assert field.value(0, 0.0) == 0.0

    def test_unknown_target(self, solver):
        """Test targets must be states."""
        with pytest.raises(InputError):
            solver.kolmogorov_solve(term_model(), 7)

    def test_horizon_outside_model(self, solver):
        """Test target times beyond the model horizon."""
        with pytest.raises(InputError):
            solver.kolmogorov_solve(term_model(), 0, horizon=11.0)


class TestDiscreteRecursions:
    """Tests for the exact period recursions."""

    def test_one_period(self, solver):
        """Test q = 0.5 pays 0.5 over one period."""
        field = solver.thiele_discrete_recursion(discrete_model(q=0.5, periods=1))
        assert field.value(0, 0.0) == pytest.approx(0.5)

    def test_two_periods(self, solver):
        """Test two periods without interest."""
        field = solver.thiele_discrete_recursion(discrete_model(q=0.5, periods=2))
        assert field.value(0, 0.0) == pytest.approx(0.75)
        assert field.value(0, 1.0) == pytest.approx(0.5)

    def test_two_periods_with_interest(self, solver):
        """Test 5% interest atoms at the period ends."""
        field = solver.thiele_discrete_recursion(discrete_model(q=0.5, periods=2, interest=0.05))
        assert field.value(0, 0.0) == pytest.approx(0.7029478, abs=1e-7)

    def test_continuous_solver_agrees(self, solver):
        """Test the grid solver reproduces the recursion."""
        model = discrete_model(q=0.5, periods=2, interest=0.05)
        exact = solver.thiele_discrete_recursion(model).value(0, 0.0)
        assert solver.thiele_solve(model, h=0.25).value(0, 0.0) == pytest.approx(exact, abs=1e-12)

    def test_kolmogorov_two_periods(self, solver):
        """Test surviving two periods at q = 0.5."""
        table = solver.kolmogorov_discrete_recursion(discrete_model(q=0.5, periods=2), 0)
        assert table.probability(0, 0) == pytest.approx(0.25)
        assert table.probability(0, 2) == 1.0

    def test_kolmogorov_three_states(self, solver):
        """Test 0 -> 1 -> 2 within two periods: 0.3 * 0.4."""
        atoms = lambda q: CumulativeRate(atoms=[Atom(time=1.0, mass=q), Atom(time=2.0, mass=q)])  # noqa: E731
        model = build_model([0, 1, 2], {"0->1": atoms(0.3), "1->2": atoms(0.4)}, horizon=2.0)
        table = solver.kolmogorov_discrete_recursion(model, 2)
        assert table.probability(0, 0) == pytest.approx(0.12)

    def test_non_discrete_model_refused(self, solver):
        """Test continuous models have no period recursion."""
        with pytest.raises(RegimeError):
            solver.thiele_discrete_recursion(term_model())

    def test_horizon_must_be_integer(self, solver):
        """Test fractional horizons are refused."""
        with pytest.raises(InputError):
            solver.kolmogorov_discrete_recursion(discrete_model(periods=2), 0, horizon=1.5)


class TestThieleResidual:
    """Tests for the path-wise Thiele residual."""

    def test_exact_reserves_have_no_residual(self, solver):
        """Test the solved reserves satisfy the Thiele equation along fixed paths."""
        model = term_model()
        field = solver.thiele_solve(model, h=0.01)
        for path in (
            Path(points=[(0.0, 0)], horizon=10.0),
            Path(points=[(0.0, 0), (3.7, 1)], horizon=10.0),
        ):
            assert solver.thiele_residual(model, field, path).max_per_unit_time <= 1e-6

    def test_wrong_candidate_detected(self, solver):
        """Test scaled reserves leave a residual of about 1e-3 per unit time."""
        model = term_model()
        field = solver.thiele_solve(model, h=0.01)
        wrong = field.model_copy(
            update={"values": field.values * 1.01, "left_values": field.left_values * 1.01}
        )
        path = Path(points=[(0.0, 0), (5.0, 1)], horizon=10.0)
        assert solver.thiele_residual(model, wrong, path).max_per_unit_time > 5e-4

    def test_endowment_atom_residual(self, solver):
        """Test the atom at the horizon balances the reserve jump."""
        model = endowment_model()
        field = solver.thiele_solve(model, h=0.01)
        report = solver.thiele_residual(model, field, Path(points=[(0.0, 0)], horizon=10.0))
        assert report.max_abs <= 1e-6

    def test_disability_paths(self, solver, simulator, loader, models_dir):
        """Test simulated disability paths stay within 1e-5 per unit time."""
        model = loader.load_model(models_dir / "disability.json")
        field = solver.thiele_solve(model, h=0.02)
        paths = simulator.sample_paths(model, SimConfig(n_paths=30, seed=17, horizon=model.horizon))
        worst = max(solver.thiele_residual(model, field, p).max_per_unit_time for p in paths)
        assert worst <= 1e-5

    def test_reserve_dependent_model(self, solver, comparison, loader, models_dir):
        """Test reserves of the resolved model satisfy the reserve-linked equation."""
        model = loader.load_model(models_dir / "surrender.json")
        field = solver.thiele_solve(comparison.transform_reserve_dependent(model), h=0.01)
        for path in (
            Path(points=[(0.0, 0)], horizon=10.0),
            Path(points=[(0.0, 0), (4.0, 2)], horizon=10.0),
        ):
            assert solver.thiele_residual(model, field, path).max_per_unit_time <= 1e-6


class TestMarkovSystem:
    """Tests for the coefficient assembly."""

    def test_coefficients(self):
        """Test A and c of the term model."""
        A, c = MarkovSystem(term_model()).coefficients(1.0)
        assert A[0, 0] == pytest.approx(0.15)
        assert A[0, 1] == pytest.approx(-0.1)
        assert c[0] == pytest.approx(-0.1)

    def test_atom_update(self):
        """Test the left limit at an atom."""
        system = MarkovSystem(discrete_model(q=0.5, periods=1))
        assert system.atom_update(1.0, np.zeros(2))[0] == pytest.approx(0.5)
        assert system.atom_update(0.5, np.ones(2))[0] == 1.0
