"""Tests for battlesim.economics: bond parameters, schedules and the capital book."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from battlesim.economics import (
    BondError,
    BondNotPosted,
    BondParams,
    CapitalTrace,
    IncompleteTrace,
    InsufficientCapital,
    Phase2Schedule,
    ScheduleError,
    amic,
    challenger_unit_cost,
    concurrency_from_publication,
    net_gain,
    rounds_needed,
    simulate_challenger_load,
    unit_cost,
)


# ── Parameters ───────────────────────────────────────────────


class TestBondParams:
    def test_defaults(self):
        p = BondParams()
        assert unit_cost(p) == 15
        assert amic(p) == 16
        assert net_gain(p) == 18
        assert challenger_unit_cost(p) == 30

    def test_bond_must_cover_publication(self):
        with pytest.raises(BondError):
            BondParams(aosb=2)

    def test_negative_rejected(self):
        with pytest.raises(BondError):
            BondParams(fee=-1)

    def test_explicit_reward(self):
        p = BondParams(adr=5)
        assert p.reward_for(24) == 5

    def test_reward_out_of_range(self):
        with pytest.raises(BondError):
            BondParams(adr=11)

    def test_concurrency_from_publication(self):
        assert concurrency_from_publication(10, 2, 1) == 3
        with pytest.raises(BondError):
            concurrency_from_publication(10, 0, 0)


# ── Schedules ────────────────────────────────────────────────


class TestPhase2Schedule:
    def test_doubling(self):
        assert Phase2Schedule().sizes(7) == [1, 2, 4]

    def test_gradual(self):
        assert Phase2Schedule("gradual").sizes(7) == [1, 2, 3, 1]

    def test_maintain(self):
        assert Phase2Schedule("maintain", first=2).sizes(5) == [2, 2, 1]

    def test_custom_repeats_last(self):
        assert Phase2Schedule("custom", custom=(1, 3)).sizes(10) == [1, 3, 3, 3]

    def test_custom_decreasing_rejected(self):
        with pytest.raises(ScheduleError):
            Phase2Schedule("custom", custom=(3, 1))

    def test_unknown_rule(self):
        with pytest.raises(ScheduleError):
            Phase2Schedule("exponential")

    def test_round_of(self):
        s = Phase2Schedule()
        assert [s.round_of(j, 7) for j in range(7)] == [1, 2, 2, 3, 3, 3, 3]
        with pytest.raises(IndexError):
            s.round_of(7, 7)

    def test_describe(self):
        assert Phase2Schedule().describe() == "doubling(first=1)"
        assert Phase2Schedule("custom", custom=(2,)).describe() == "custom[2]"

    @given(st.integers(min_value=0, max_value=200), st.sampled_from(["doubling", "gradual", "maintain"]))
    def test_sizes_cover_every_challenger(self, c, rule):
        assert sum(Phase2Schedule(rule).sizes(c)) == c


class TestRoundsNeeded:
    def test_doubling_seven(self):
        assert rounds_needed(7) == 3

    def test_no_challengers(self):
        assert rounds_needed(0) == 0

    def test_below_amic(self):
        with pytest.raises(InsufficientCapital):
            rounds_needed(3, starting_capital=15)

    def test_capital_limits_round_size(self):
        # AMIC funds one dispute at a time until rewards arrive.
        assert rounds_needed(3, Phase2Schedule("maintain", first=3)) == 2


# ── Capital trace ────────────────────────────────────────────


class TestCapitalTrace:
    def setup_method(self):
        self.trace = CapitalTrace()
        self.trace.fund("a", 50)
        self.trace.fund("b", 50)
        self.trace.lock_bond("a", "d", 10)
        self.trace.lock_bond("b", "d", 10)

    def test_settle_pays_reward(self):
        reward = self.trace.settle_dispute("d", "a", "b")
        assert reward == 9
        assert self.trace.free("a") == 59
        assert self.trace.free("b") == 40
        assert self.trace.fee_sink == 1
        assert self.trace.is_conserved()

    def test_settle_requires_bonds(self):
        with pytest.raises(BondNotPosted):
            self.trace.settle_dispute("other", "a", "b")

    def test_double_lock_rejected(self):
        with pytest.raises(BondError):
            self.trace.lock_bond("a", "d", 1)

    def test_lock_beyond_balance(self):
        with pytest.raises(InsufficientCapital):
            self.trace.lock_bond("a", "e", 100)

    def test_refund_bonds(self):
        assert sorted(self.trace.refund_bonds("d")) == ["a", "b"]
        assert self.trace.free("a") == 50

    def test_peak_needs_close(self):
        with pytest.raises(IncompleteTrace):
            self.trace.peak_capital("a")

    def test_peak(self):
        self.trace.settle_dispute("d", "a", "b")
        assert self.trace.close().peak_capital("a") == 10

    def test_fronting_reported_separately(self):
        trace = CapitalTrace()
        trace.fund("op", 10)
        trace.front("op", 5)
        trace.close()
        assert trace.peak_capital("op") == 0
        assert trace.peak_capital("op", include_fronting=True) == 5
        assert trace.reimburse("op") == 5
        assert trace.is_conserved()

    def test_persistent_bond_slash(self):
        self.trace.post_apsb("a", 7)
        assert self.trace.slash_apsb("a") == 7
        assert self.trace.apsb("a") == 0
        assert self.trace.is_conserved()

    def test_fees_and_publication(self):
        self.trace.charge_fee("a")
        self.trace.charge_publication("a")
        assert self.trace.account("a").fees == 1
        assert self.trace.account("a").publication == 2
        assert self.trace.is_conserved()

    def test_report_row(self):
        row = self.trace.close().report_row("a", 7, Phase2Schedule(), 3)
        assert row["C"] == 7
        assert row["peak"] == 10


class TestChallengerLoad:
    def test_linear_in_tournaments(self):
        assert simulate_challenger_load(1) == 30
        assert simulate_challenger_load(3) == 90
