"""Tests for battlesim.runner: scenario runs, report files and enumeration."""

import json

import pytest

from battlesim.config import expand_sweep, load_scenario, load_space, parse_scenario
from battlesim.runner import (
    REPORT_FILES,
    SpaceTooLarge,
    enumerate_space,
    run_batch,
    run_scenario,
    summary_text,
    write_batch,
    write_report,
)

FIXTURES = "fixtures"


def _load(name):
    return load_scenario(f"{FIXTURES}/{name}.yaml")


# ── Single runs ──────────────────────────────────────────────


class TestRunScenario:
    def test_three_participants(self):
        report = run_scenario(_load("three_participants"))
        p1 = report.outcome["phase1"]
        assert p1["winner"] == "1"
        assert p1["registered"] == ["1", "4", "8"]
        assert p1["makespan"] == 18
        assert report.ok
        assert report.trace

    def test_false_challengers_are_beaten(self):
        report = run_scenario(_load("false_challengers"))
        assert report.outcome["phase1"]["winner"] == "4"
        assert report.ok

    def test_full_run_refunds_honest_asserter(self):
        report = run_scenario(_load("phase2_honest"))
        p2 = report.outcome["phase2"]
        assert p2["asserter"] == "1"
        assert p2["refunded"]
        assert report.ok
        assert {row["phase"] for row in report.capital} == {"phase1", "phase2"}

    def test_disable_commitments_published(self):
        report = run_scenario(_load("phase2_honest"))
        commitments = report.outcome["disable_commitments"]
        assert [c["party"] for c in commitments] == ["1", "2"]
        assert all(c["method"] == "direct" for c in commitments)
        assert report.outcome["disabled"] == []

    def test_losing_challenger_is_disabled(self):
        scenario = parse_scenario(
            {"operators": 2, "strategies": {2: "always_challenge"}, "mode": "phase1", "disable": {"method": "pairwise"}}
        )
        report = run_scenario(scenario)
        assert report.outcome["disabled"] == ["2"]
        assert report.outcome["phase1"]["disabled"] == ["2"]
        assert report.outcome["phase1"]["blocked"] == []
        assert report.ok

    def test_lottery_mode(self):
        report = run_scenario(_load("lottery"))
        assert report.outcome["mode"] == "lottery"
        assert report.outcome["winner"] in {"1", "2", "3", "4"}
        assert report.outcome["template_count"] == 18

    def test_parallel_brackets(self):
        report = run_scenario(parse_scenario({"operators": 16, "concurrency": 4, "mode": "phase1"}))
        assert report.outcome["phase1"]["winner"] == "1"
        assert report.trace == []

    def test_dishonest_winner_with_true_assertion_is_sound(self):
        scenario = parse_scenario(
            {"operators": 2, "mode": "phase1", "strategies": {1: "always_challenge", 2: "honest"}, "truths": {1: True, 2: True}}
        )
        report = run_scenario(scenario)
        assert report.outcome["phase1"]["winner"] == "1"
        assert report.violations == []

    def test_true_staller_may_force_dual_cut(self):
        scenario = parse_scenario(
            {
                "operators": 2,
                "mode": "phase1",
                "watchtowers": 1,
                "strategies": {1: "stall_after_round:1", 2: "honest"},
                "truths": {1: True, 2: True},
            }
        )
        report = run_scenario(scenario)
        assert report.outcome["phase1"]["winner"] is None
        assert report.outcome["phase1"]["cases"][0]["case"] == "1.2b"
        assert report.violations == []

    def test_same_seed_same_result(self):
        scenario = parse_scenario({"operators": 4, "strategies": {2: "always_challenge"}, "reorder": True, "seed": 3})
        first, second = run_scenario(scenario), run_scenario(scenario)
        assert first.outcome == second.outcome
        assert first.trace == second.trace

    def test_cost_report(self):
        report = run_scenario(_load("three_participants"))
        assert report.cost["scenario_digest"] == report.digest
        assert report.cost["verifiers_per_circuit"] == 1
        assert report.cost["witness_bytes"] == {"lamport": 51_200, "winternitz": 5_376}


# ── Report files ─────────────────────────────────────────────


class TestReports:
    def test_write_report(self, tmp_path):
        report = run_scenario(_load("three_participants"))
        paths = write_report(report, tmp_path / "out")
        assert [p.name for p in paths] == list(REPORT_FILES)
        header = json.loads(paths[0].read_text().splitlines()[0])
        assert header == {"scenario_digest": report.digest}
        outcome = json.loads(paths[1].read_text())
        assert outcome["phase1"]["winner"] == "1"

    def test_summary_text(self):
        text = summary_text(run_scenario(_load("phase2_honest")))
        assert "winner     : 1" in text
        assert "refunded   : True" in text
        assert "violations : 0" in text

    def test_write_batch(self, tmp_path):
        reports = run_batch(expand_sweep(_load("capital_sweep")))
        table = write_batch(reports, tmp_path)
        rows = [json.loads(line) for line in table.read_text().splitlines()]
        assert [r["C"] for r in rows] == [1, 3, 7]
        assert all(r["violations"] == 0 for r in rows)
        assert (tmp_path / "0002" / "outcome.json").exists()

    def test_parallel_batch_keeps_order(self):
        points = expand_sweep(parse_scenario({"operators": 2, "mode": "phase1", "sweep": {"seed": [1, 2, 3]}}))
        serial = run_batch(points)
        parallel = run_batch(points, jobs=2)
        assert [r.digest for r in serial] == [r.digest for r in parallel]
        assert [r.outcome for r in serial] == [r.outcome for r in parallel]


# ── Enumeration ──────────────────────────────────────────────


class TestEnumerate:
    def test_two_operator_space_is_sound(self):
        summary = enumerate_space(load_space(f"{FIXTURES}/space_n2.yaml"))
        assert summary.points == 121
        assert summary.violations == []
        assert set(summary.case_coverage) == {"1-dispute", "1.1", "1.2a", "1.2b", "2", "3", "4"}

    def test_cap(self):
        with pytest.raises(SpaceTooLarge, match="121 points"):
            enumerate_space(load_space(f"{FIXTURES}/space_n2.yaml"), cap=10)

    def test_empty_space(self):
        summary = enumerate_space(load_space(f"{FIXTURES}/space_empty.yaml"))
        assert summary.record() == {"points": 0, "violations": [], "case_coverage": {}}
