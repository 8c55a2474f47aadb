"""Tests for battlesim.lottery: commit-reveal brackets without assertions."""

import pytest

from battlesim.lottery import (
    RevealMismatch,
    commit,
    lottery_template_count,
    run_lottery,
    selector,
    verify_reveal,
    win_distribution,
)


class TestCommitReveal:
    def test_commit_is_stable(self):
        assert commit(7) == commit(7)
        assert commit(7) != commit(8)

    def test_verify_reveal(self):
        assert verify_reveal("1", commit(42), 42) == 42

    def test_mismatch(self):
        with pytest.raises(RevealMismatch, match="does not open"):
            verify_reveal("1", commit(42), 43)

    @pytest.mark.parametrize("a,b,expected", [(1, 1, 0), (2, 4, 0), (1, 2, 1), (4, 3, 1)])
    def test_selector(self, a, b, expected):
        assert selector(a, b) == expected


class TestRunLottery:
    def test_left_wins_on_odd_sum(self):
        outcome = run_lottery(2, {"1": 1, "2": 2})
        assert outcome.winner == "1"
        assert outcome.matches[0]["reason"] == "selector"

    def test_right_wins_on_even_sum(self):
        assert run_lottery(2, {"1": 2, "2": 4}).winner == "2"

    def test_withheld_reveal_loses(self):
        outcome = run_lottery(2, {"1": 3, "2": 5}, withhold={"1"})
        assert outcome.winner == "2"
        assert outcome.matches[0]["reason"] == "timeout"

    def test_bad_reveal_forfeits(self):
        outcome = run_lottery(2, {"1": 2, "2": 4}, reveals={"2": 6})
        assert outcome.winner == "1"

    def test_both_forfeit(self):
        outcome = run_lottery(2, {"1": 1, "2": 2}, withhold={"1", "2"})
        assert outcome.winner is None
        assert outcome.matches[0]["reason"] == "both_forfeit"

    def test_missing_commitment_is_a_walkover(self):
        outcome = run_lottery(2, {"1": 5})
        assert outcome.winner == "1"
        assert outcome.matches[0]["reason"] == "walkover"

    def test_padded_bracket(self):
        outcome = run_lottery(3, {"1": 1, "2": 1, "3": 1})
        assert outcome.winner is not None
        assert any(m["reason"] == "walkover" for m in outcome.matches)

    def test_template_count(self):
        assert lottery_template_count(4) == 18
        assert run_lottery(4, {}).template_count == 18


class TestFairness:
    def test_uniform_over_parities(self):
        assert win_distribution(4) == {"1": 4, "2": 4, "3": 4, "4": 4}

    def test_uniform_for_eight(self):
        wins = win_distribution(8)
        assert set(wins.values()) == {32}

    @pytest.mark.parametrize(
        "n, expected",
        [
            (3, {"1": 2, "2": 2, "3": 4}),
            (5, {"1": 4, "2": 4, "3": 4, "4": 4, "5": 16}),
        ],
    )
    def test_padding_walkovers_favour_the_bye(self, n, expected):
        wins = win_distribution(n)
        assert wins == expected
        assert sum(wins.values()) == 2**n
