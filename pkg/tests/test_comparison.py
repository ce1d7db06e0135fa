"""
Unit tests for the ComparisonService: Cantelli checks, safe-side classification and
reserve-preserving transforms.
"""

import math

import pytest

from app.exceptions import (
    CoefficientBoundError,
    InputError,
    PreconditionError,
    ResetMismatchError,
)
from app.models.insurance import ReserveLinkedTransition
from app.models.rates import ConstantDensity, CumulativeRate, PoleDensity

from tests.factories import build_model, constant_rate, measure, payment, term_model

TERM_RESERVE = 0.1 / 0.15 * (1.0 - math.exp(-1.5))
TECH_RESERVE = 0.12 / 0.17 * (1.0 - math.exp(-1.7))


def _sojourn_basis(level: float):
    """Same reserves as term_model when level = 0.1: the benefit moved into B."""
    return build_model(
        [0, 1],
        {"0->1": constant_rate(0.1)},
        phi={0: measure(0.05), 1: measure(0.05)},
        sojourn={0: measure(level)},
        absorbing=[1],
    )


def _with_mortality(model, mu: float):
    rate = CumulativeRate(segments=[ConstantDensity(start=0.0, end=10.0, rate=mu)])
    return model.with_updates(rates={"0->1": rate})


class TestResetPoints:
    """Tests for identical_reset_points."""

    def test_identical_without_resets(self, comparison):
        """Test models without reset points agree."""
        assert comparison.identical_reset_points(term_model(), term_model(0.2)).identical

    def test_witness_of_first_difference(self, comparison):
        """Test the earliest unmatched reset is reported."""
        late = CumulativeRate(
            segments=[PoleDensity(start=0.0, end=1.0, strength=1.0)], resets=[1.0]
        )
        early = CumulativeRate(
            segments=[
                PoleDensity(start=0.0, end=0.5, strength=1.0),
                ConstantDensity(start=0.5, end=1.0, rate=0.1),
            ],
            resets=[0.5],
        )
        a = build_model([0, 1], {"0->1": late}, horizon=1.0)
        b = build_model([0, 1], {"0->1": early}, horizon=1.0)
        result = comparison.identical_reset_points(a, b)
        assert not result.identical
        assert result.witness.time == 0.5
        assert result.witness.present_in == "b"
        assert (result.witness.source, result.witness.target) == (0, 1)

    def test_mismatch_blocks_cantelli(self, comparison):
        """Test Cantelli checks require the same reset points."""
        pole = CumulativeRate(
            segments=[PoleDensity(start=0.0, end=1.0, strength=1.0)], resets=[1.0]
        )
        a = build_model([0, 1], {"0->1": pole}, horizon=1.0)
        b = build_model([0, 1], {"0->1": constant_rate(0.1, end=1.0)}, horizon=1.0)
        with pytest.raises(ResetMismatchError):
            comparison.cantelli_check(a, b, h=0.1)


class TestCantelli:
    """Tests for cantelli_check and compare_reserves."""

    def test_benefit_moved_into_sojourn_payments(self, comparison):
        """Test paying mu continuously instead of 1 on death keeps the reserves."""
        report = comparison.cantelli_check(term_model(), _sojourn_basis(0.1), h=0.1)
        assert report.holds
        assert report.max_deviation <= report.tolerance

    def test_perturbed_basis_fails(self, comparison):
        """Test a perturbed sojourn payment breaks the equality in state 0."""
        report = comparison.cantelli_check(term_model(), _sojourn_basis(0.11), h=0.1)
        assert not report.holds
        assert report.worst_state == 0

    def test_reserve_difference_of_perturbed_basis(self, comparison):
        """Test V_b - V_a = 0.01 (1 - exp(-1.5)) / 0.15 at time 0."""
        result = comparison.compare_reserves(term_model(), _sojourn_basis(0.11), h=0.1)
        expected = 0.01 * (1.0 - math.exp(-1.5)) / 0.15
        assert result.of(0).difference_at_start == pytest.approx(expected, abs=1e-8)
        assert result.of(1).max_difference == 0.0

    def test_interest_must_match(self, comparison):
        """Test differing interest needs include_interest."""
        other = term_model(r=0.04)
        with pytest.raises(PreconditionError):
            comparison.cantelli_check(term_model(), other, h=0.1)
        report = comparison.cantelli_check(term_model(), other, h=0.1, include_interest=True)
        assert not report.holds
        assert report.include_interest

    def test_state_spaces_must_match(self, comparison):
        """Test both models share the state space."""
        three = build_model([0, 1, 2], {"0->1": constant_rate(0.1)})
        with pytest.raises(PreconditionError):
            comparison.compare_reserves(term_model(), three, h=0.1)


class TestSafeSide:
    """Tests for safe_side_classify and basis_delta."""

    def test_higher_mortality_is_pessimistic(self, comparison, loader, models_dir):
        """Test the technical basis with mu = 0.12 is on the safe side for term insurance."""
        market = loader.load_model(models_dir / "market.json")
        tech = loader.load_model(models_dir / "tech.json")
        verdict = comparison.safe_side_classify(market, tech, h=0.1)
        assert verdict.classification == "pessimistic"
        assert not verdict.tie_break
        assert verdict.witnesses
        assert all(w.basis == "optimistic" for w in verdict.witnesses)
        assert len(verdict.witnesses) <= 20

    def test_lower_mortality_is_optimistic(self, comparison, loader, models_dir):
        """Test mu = 0.08 underestimates the term reserve."""
        market = loader.load_model(models_dir / "market.json")
        verdict = comparison.safe_side_classify(market, _with_mortality(market, 0.08), h=0.1)
        assert verdict.classification == "optimistic"

    def test_identical_bases_tie_to_pessimistic(self, comparison, loader, models_dir):
        """Test a zero delta qualifies both ways and reports pessimistic."""
        market = loader.load_model(models_dir / "market.json")
        verdict = comparison.safe_side_classify(market, market, h=0.1)
        assert verdict.classification == "pessimistic"
        assert verdict.tie_break
        assert verdict.witnesses == []

    def test_payments_must_match(self, comparison):
        """Test safe-side bases share the payment stream."""
        with pytest.raises(PreconditionError):
            comparison.safe_side_classify(term_model(), term_model(benefit=2.0), h=0.1)

    def test_reserves_follow_the_verdict(self, comparison, loader, models_dir):
        """Test the pessimistic basis carries the larger reserve."""
        market = loader.load_model(models_dir / "market.json")
        tech = loader.load_model(models_dir / "tech.json")
        result = comparison.compare_reserves(market, tech, h=0.1)
        assert result.of(0).difference_at_start == pytest.approx(
            TECH_RESERVE - TERM_RESERVE, abs=1e-8
        )
        assert result.of(0).min_difference >= -1e-12

    def test_basis_delta(self, comparison, loader, models_dir):
        """Test cell increments of the rate difference are 0.02 h."""
        market = loader.load_model(models_dir / "market.json")
        tech = loader.load_model(models_dir / "tech.json")
        delta = comparison.basis_delta(market, tech, h=0.5)
        assert len(delta.rates["0->1"]) == len(delta.times) - 1
        assert delta.rates["0->1"] == pytest.approx([0.01] * 20)
        assert all(v == 0.0 for v in delta.interest[0])


class TestCompareModels:
    """Tests for the full comparison report."""

    def test_report_of_market_against_tech(self, comparison, loader, models_dir):
        """Test verdict, Cantelli check and differences in one report."""
        market = loader.load_model(models_dir / "market.json")
        tech = loader.load_model(models_dir / "tech.json")
        report = comparison.compare_models(market, tech, h=0.1)
        assert report.classification == "pessimistic"
        assert report.identical_reset_points
        assert report.cantelli is not None
        assert not report.cantelli.holds
        assert report.states[0].difference_at_start == pytest.approx(
            TECH_RESERVE - TERM_RESERVE, abs=1e-8
        )

    def test_not_applicable_without_shared_payments(self, comparison):
        """Test no verdict is drawn when payments differ."""
        report = comparison.compare_models(term_model(), _sojourn_basis(0.1), h=0.1)
        assert report.classification == "not_applicable"
        assert report.cantelli.holds


class TestTransforms:
    """Tests for the reserve-preserving transforms."""

    def test_set_initial_distribution(self, comparison):
        """Test alpha is replaced and checked."""
        assert comparison.set_initial_distribution(term_model(), [0.25, 0.75]).alpha == [0.25, 0.75]
        with pytest.raises(InputError):
            comparison.set_initial_distribution(term_model(), [0.5, 0.4])
        with pytest.raises(InputError):
            comparison.set_initial_distribution(term_model(), [1.0])
        with pytest.raises(InputError):
            comparison.set_initial_distribution(term_model(), [1.5, -0.5])

    def test_prune_keeps_reserves(self, comparison, solver):
        """Test dropping a state that never feeds back leaves V^0 and V^1 unchanged."""
        model = build_model(
            [0, 1, 2],
            {"0->1": constant_rate(0.1), "2->0": constant_rate(0.2)},
            phi={0: measure(0.05), 1: measure(0.05), 2: measure(0.05)},
            sojourn={2: measure(0.5)},
            transition={"0->1": payment(1.0)},
        )
        pruned = comparison.prune_irrelevant(model, [0, 1])
        assert "2->0" not in pruned.rates
        assert 2 not in pruned.cashflow.sojourn
        assert pruned.labels == [0, 1, 2]
        before = solver.thiele_solve(model, h=0.1)
        after = solver.thiele_solve(pruned, h=0.1)
        assert before.max_abs_difference(after, states=[0, 1]) <= 1e-12

    def test_prune_needs_closed_subset(self, comparison):
        """Test a rate out of the kept states is refused."""
        with pytest.raises(PreconditionError):
            comparison.prune_irrelevant(term_model(), [0])

    def test_prune_unknown_state(self, comparison):
        """Test kept states must exist."""
        with pytest.raises(InputError):
            comparison.prune_irrelevant(term_model(), [0, 9])

    def _annuity_after_death(self):
        return build_model(
            [0, 1],
            {"0->1": constant_rate(0.1)},
            phi={0: measure(0.05), 1: measure(0.05)},
            sojourn={1: measure(0.5)},
            transition={"0->1": payment(1.0)},
        )

    def test_shorten_with_reserve_adjustment(self, comparison, solver):
        """Test the death benefit absorbs V^1(t) = 10 (1 - exp(-0.05 (10 - t)))."""
        model = self._annuity_after_death()
        reserves = solver.thiele_solve(model, h=0.1)
        assert reserves.value(1, 4.0) == pytest.approx(10.0 * (1.0 - math.exp(-0.3)), abs=1e-10)
        short = comparison.transform_shorten(model, [0], reserves=reserves)
        assert 1 not in short.cashflow.sojourn
        assert short.transition(0, 1).value(4.0) == pytest.approx(1.0 + reserves.value(1, 4.0))
        shortened = solver.thiele_solve(short, h=0.1)
        assert shortened.value(0, 0.0) == pytest.approx(reserves.value(0, 0.0), abs=1e-8)

    def test_shorten_tabulated(self, comparison, solver):
        """Test the tabulated variant stays within interpolation error."""
        model = self._annuity_after_death()
        reserves = solver.thiele_solve(model, h=0.1)
        short = comparison.transform_shorten(model, [0], reserves=reserves, tabulate=True)
        assert short.transition(0, 1).adjustment is None
        shortened = solver.thiele_solve(short, h=0.1)
        assert shortened.value(0, 0.0) == pytest.approx(reserves.value(0, 0.0), abs=1e-4)

    def test_shorten_refuses_return_to_kept_states(self, comparison):
        """Test dropped states may not lead back."""
        model = build_model(
            [0, 1], {"0->1": constant_rate(0.1), "1->0": constant_rate(0.1)}
        )
        with pytest.raises(PreconditionError):
            comparison.transform_shorten(model, [0], h=0.1)

    def test_cemetery_folds_mortality_into_interest(self, comparison, solver, endowment):
        """Test the endowment reserve exp(-1.5) with death folded into the discount."""
        folded = comparison.transform_cemetery(endowment, [0])
        assert folded.rates == {}
        assert folded.interest(0).density(5.0) == pytest.approx(0.15)
        field = solver.thiele_solve(folded, h=0.1)
        assert field.value(0, 0.0) == pytest.approx(math.exp(-1.5), abs=1e-10)

    def test_cemetery_keeps_extrapolated_mortality(self, comparison, solver):
        """Test mortality declared on [0, 5) still discounts [5, 10) after folding."""
        model = build_model(
            [0, 1],
            {"0->1": constant_rate(0.1, end=5.0)},
            phi={0: measure(0.05)},
            sojourn={0: measure(atoms={10.0: 1.0})},
            absorbing=[1],
        )
        folded = comparison.transform_cemetery(model, [0])
        assert folded.interest(0).density(7.5) == pytest.approx(0.15)
        before = solver.thiele_solve(model, h=0.1)
        after = solver.thiele_solve(folded, h=0.1)
        assert before.value(0, 0.0) == pytest.approx(math.exp(-1.5), abs=1e-10)
        assert before.max_abs_difference(after, states=[0]) <= 1e-10

    def test_cemetery_refuses_death_benefits(self, comparison, term):
        """Test benefits paid on the exit cannot be folded."""
        with pytest.raises(PreconditionError) as exc_info:
            comparison.transform_cemetery(term, [0])
        assert "transition_payments_into" in exc_info.value.details["witness"]

    def test_reserve_dependent_surrender(self, comparison, solver, loader, models_dir):
        """Test surrender paying 90% of the reserve becomes a 10% exit rate without payment."""
        model = loader.load_model(models_dir / "surrender.json")
        resolved = comparison.transform_reserve_dependent(model)
        assert resolved.rate(0, 2).segments[0].rate == pytest.approx(0.005)
        assert resolved.transition(0, 2).is_zero
        assert resolved.rate(0, 1) == model.rate(0, 1)
        delta = 0.03 + 0.01 + 0.005
        expected = -0.05 * (1.0 - math.exp(-10 * delta)) / delta + math.exp(-10 * delta)
        field = solver.thiele_solve(resolved, h=0.1)
        assert field.value(0, 0.0) == pytest.approx(expected, abs=1e-8)

    def test_reserve_dependent_without_links(self, comparison, term):
        """Test a model without reserve dependence is returned as is."""
        assert comparison.transform_reserve_dependent(term) is term

    def test_coefficient_bound(self, comparison, loader, models_dir):
        """Test a1 above c1 is refused."""
        model = loader.load_model(models_dir / "surrender.json")
        dep = model.cashflow.reserve_dependence.model_copy(
            update={"transitions": [ReserveLinkedTransition(source=0, target=2, a1=0.99)]}
        )
        broken = model.with_updates(
            cashflow=model.cashflow.model_copy(update={"reserve_dependence": dep})
        )
        with pytest.raises(CoefficientBoundError):
            comparison.transform_reserve_dependent(broken)
