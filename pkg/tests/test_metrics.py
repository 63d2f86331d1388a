import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fairlend.errors import ConfigError
from fairlend.metrics import (
    METRICS_COLUMNS,
    EconomicParams,
    EfficiencyContext,
    WeightSpec,
    check_four_fifths,
    compute_profit,
    demographic_parity_diff,
    disparate_impact_ratio,
    efficiency_score,
    equal_opportunity_diff,
    evaluate,
    format_cell,
    individual_consistency,
    write_reports_csv,
)
from fairlend.model import BASELINE_SCHEMA, UNAWARE_SCHEMA, FeatureSchema, Standardizer, TrainedModel
from fairlend.policy import DecisionPolicy, decide
from tests.conftest import make_pop

bools = st.lists(st.booleans(), min_size=1, max_size=20)


def brute_profit(approved, labels, r, d, L):
    total = 0.0
    for a, y in zip(reversed(approved), reversed(labels)):
        if a:
            total += r * L if y == 1 else -d * L
    return total


@st.composite
def instances(draw):
    n = draw(st.integers(1, 20))
    approved = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    econ = EconomicParams(draw(st.floats(0, 1)), draw(st.floats(0, 1)), draw(st.floats(1, 1e6)))
    return np.array(approved), np.array(labels), econ


class TestEconomicParams:
    @pytest.mark.parametrize(
        "args, field", [((-0.1, 0.5, 1), "interest_rate"), ((0.1, 1.2, 1), "default_loss_rate"), ((0.1, 0.5, 0), "loan_amount")]
    )
    def test_invalid(self, args, field):
        with pytest.raises(ConfigError) as info:
            EconomicParams(*args)
        assert info.value.field == field


class TestProfit:
    def test_zero_approvals(self):
        rep = compute_profit(np.zeros(4, bool), np.ones(4), EconomicParams())
        assert (rep.net_profit, rep.roi, rep.default_rate, rep.approved_count) == (0.0, 0.0, 0.0, 0)

    def test_three_loans(self):
        rep = compute_profit(np.ones(3, bool), np.array([1, 1, 0]), EconomicParams(0.10, 0.70, 10_000))
        assert rep.net_profit == pytest.approx(-5_000)
        assert rep.roi == pytest.approx(-5_000 / 30_000)
        assert rep.default_rate == pytest.approx(1 / 3)

    def test_accepts_decision_set(self):
        d = decide(DecisionPolicy.uniform(0.5), [0.9, 0.1])
        assert compute_profit(d, [1, 1], EconomicParams()).approved_count == 1

    @given(instances())
    def test_brute_force_oracle(self, inst):
        approved, labels, econ = inst
        rep = compute_profit(approved, labels, econ)
        expected = brute_profit(approved, labels, econ.interest_rate, econ.default_loss_rate, econ.loan_amount)
        assert abs(rep.net_profit - expected) <= 1e-9 * max(1.0, abs(expected))
        if approved.any():
            assert rep.roi == pytest.approx(rep.net_profit / (approved.sum() * econ.loan_amount), rel=1e-12, abs=1e-15)

    @given(instances(), st.data())
    def test_linearity_over_disjoint_parts(self, inst, data):
        approved, labels, econ = inst
        mask = np.array(data.draw(st.lists(st.booleans(), min_size=len(labels), max_size=len(labels))))
        whole = compute_profit(approved, labels, econ).net_profit
        parts = compute_profit(approved & mask, labels, econ).net_profit + compute_profit(approved & ~mask, labels, econ).net_profit
        assert whole == pytest.approx(parts, abs=1e-6)

    @given(instances(), st.one_of(st.just(0.0), st.floats(1e-3, 1)), st.floats(0, 1))
    def test_monotone_in_r_and_d(self, inst, bump_r, bump_d):
        approved, labels, econ = inst
        base = compute_profit(approved, labels, econ).net_profit
        more_r = compute_profit(approved, labels, EconomicParams(econ.interest_rate + bump_r, econ.default_loss_rate, econ.loan_amount)).net_profit
        d2 = min(1.0, econ.default_loss_rate + bump_d)
        more_d = compute_profit(approved, labels, EconomicParams(econ.interest_rate, d2, econ.loan_amount)).net_profit
        assert more_r >= base and more_d <= base
        if bump_r > 0 and np.any(approved & (labels == 1)):
            assert more_r > base


class TestFairness:
    def test_dp_counts(self):
        approved = np.r_[np.arange(100) < 30, np.arange(100) < 18]
        groups = np.repeat([0, 1], 100)
        assert demographic_parity_diff(approved, groups) == pytest.approx(0.12)

    def test_dp_equal(self):
        assert demographic_parity_diff([True, False, True, False], [0, 0, 1, 1]) == 0.0

    def test_eo_counts(self):
        approved = np.array([1, 1, 1, 1, 0, 1, 1, 0, 0, 0], bool)
        groups = np.repeat([0, 1], 5)
        assert equal_opportunity_diff(approved, groups, np.ones(10)) == pytest.approx(0.4)

    def test_eo_without_positives(self):
        with pytest.raises(ValueError):
            equal_opportunity_diff([True, True], [0, 1], [1, 0])

    def test_empty_group(self):
        with pytest.raises(ValueError):
            demographic_parity_diff([True], [0])

    def test_di_values(self):
        g = np.repeat([0, 1], 50)
        a = np.r_[np.arange(50) < 20, np.arange(50) < 6]
        assert disparate_impact_ratio(a, g) == pytest.approx(0.30)
        assert disparate_impact_ratio(np.ones(100, bool), g) == 1.0
        assert disparate_impact_ratio(np.zeros(100, bool), g) == 1.0
        assert disparate_impact_ratio(np.r_[np.zeros(50, bool), np.ones(50, bool)], g) == math.inf

    @pytest.mark.parametrize("di, ok", [(0.939, True), (0.8, True), (0.7999, False), (0.274, False), (1.044, True), (math.inf, True)])
    def test_four_fifths(self, di, ok):
        assert check_four_fifths(di) is ok

    @given(bools, st.data())
    def test_symmetry_under_group_swap(self, approved, data):
        n = len(approved)
        groups = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
        labels = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
        approved = np.array(approved)
        assume(0 < groups.sum() < n)
        swapped = 1 - groups
        assert demographic_parity_diff(approved, groups) == demographic_parity_diff(approved, swapped)
        if np.any((groups == 0) & (labels == 1)) and np.any((groups == 1) & (labels == 1)):
            assert equal_opportunity_diff(approved, groups, labels) == equal_opportunity_diff(approved, swapped, labels)
        di, di_swapped = disparate_impact_ratio(approved, groups), disparate_impact_ratio(approved, swapped)
        if 0 < di < math.inf:
            assert di_swapped == pytest.approx(1 / di)


class TestConsistency:
    def hand(self, w_gender):
        schema = FeatureSchema(("gender", "credit_score"))
        return TrainedModel(schema, Standardizer(np.array([0.0, 600.0]), np.array([1.0, 50.0])), np.array([w_gender, 1.0]), -0.5, "observed")

    def test_hand_computed(self):
        pop = make_pop(gender=[0, 1, 0], credit_score=[550.0, 600.0, 700.0])
        m = self.hand(0.8)

        def s(g, c):
            return 1 / (1 + math.exp(-(-0.5 + 0.8 * g + (c - 600) / 50)))

        expected = 1 - np.mean([abs(s(0, 550) - s(1, 550)), abs(s(1, 600) - s(0, 600)), abs(s(0, 700) - s(1, 700))])
        assert abs(individual_consistency(m, pop) - expected) <= 1e-12

    def test_zero_weights(self):
        pop = make_pop(gender=[0, 1, 0], credit_score=[550.0, 600.0, 700.0])
        m = TrainedModel(BASELINE_SCHEMA, Standardizer(np.zeros(8), np.ones(8)), np.zeros(8), 0.3, "observed")
        assert individual_consistency(m, pop) == 1.0

    def test_unaware_exactly_one(self):
        pop = make_pop(gender=[0, 1], race=[1, 0], credit_score=[500.0, 800.0])
        m = TrainedModel(UNAWARE_SCHEMA, Standardizer(np.zeros(6), np.ones(6)), np.arange(6.0), 0.0, "observed")
        assert individual_consistency(m, pop) == 1.0

    def test_bounded(self):
        pop = make_pop(gender=[0, 1, 0, 1], race=[0, 0, 1, 1])
        assert 0.0 <= individual_consistency(self.hand(50.0), pop) <= 1.0


class TestEfficiency:
    def test_extremes_and_two_model_example(self):
        ctx = EfficiencyContext.from_values([-100, -200], [0.05, 0.10])
        for w in (0.0, 0.3, 1.0):
            assert efficiency_score(-100, 0.05, ctx, WeightSpec(w)) == 1.0
            assert efficiency_score(-200, 0.10, ctx, WeightSpec(w)) == 0.0
        half = WeightSpec(0.5)
        assert [efficiency_score(p, g, ctx, half) for p, g in ((-100, 0.05), (-200, 0.10))] == [1.0, 0.0]

    def test_flat_axes(self):
        ctx = EfficiencyContext.from_values([5, 5], [0.1, 0.1])
        assert efficiency_score(5, 0.1, ctx, WeightSpec(0.4)) == 1.0

    @given(
        st.lists(st.tuples(st.integers(-1000, 1000), st.integers(0, 1000)), min_size=2, max_size=8),
        st.integers(1, 100),
        st.integers(-10**5, 10**5),
        st.sampled_from([0.3, 0.5, 0.7, 0.9]),
    )
    def test_ranking_invariant_under_affine_profit_rescale(self, rows, scale, shift, w):
        # dollar-valued profits (multiples of 1000) and gaps on a 1e-3 grid
        profits = [p * 1000.0 for p, _ in rows]
        gaps = [g / 1000 for _, g in rows]
        scaled = [p * scale + shift for p in profits]
        ctx = EfficiencyContext.from_values(profits, gaps)
        ctx2 = EfficiencyContext.from_values(scaled, gaps)
        a = [efficiency_score(p, g, ctx, WeightSpec(w)) for p, g in zip(profits, gaps)]
        b = [efficiency_score(p, g, ctx2, WeightSpec(w)) for p, g in zip(scaled, gaps)]
        assert np.allclose(a, b, atol=1e-9)
        assert int(np.argmax(np.round(a, 9))) == int(np.argmax(np.round(b, 9)))

    def test_weight_bounds(self):
        with pytest.raises(ValueError):
            WeightSpec(1.2)
        assert WeightSpec(0.3).fairness_weight == pytest.approx(0.7)


class TestReports:
    def test_csv_columns_and_cells(self, tmp_path):
        pop = make_pop(gender=[0, 1, 0, 1], race=[0, 0, 1, 1], true_repaid=[1, 1, 0, 1])
        d = decide(DecisionPolicy.uniform(0.5), [0.9, 0.1, 0.8, 0.2])
        rep = evaluate("Baseline", "baseline", d, pop, EconomicParams(), "true", 1.0)
        path = tmp_path / "r.csv"
        write_reports_csv([rep], path)
        header, row = path.read_text().splitlines()
        assert tuple(header.split(",")) == METRICS_COLUMNS
        flat = dict(zip(METRICS_COLUMNS, row.split(",")))
        assert flat["di_gender"] == "0.0" and flat["ff_gender"] == "false" and flat["labels"] == "true"
        assert float(flat["net_profit"]) == pytest.approx(1000 - 7000)

    def test_format_cell(self):
        assert format_cell(math.inf) == "inf"
        assert format_cell(True) == "true"
        assert format_cell(0.1) == "0.1"
