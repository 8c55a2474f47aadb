"""Tests for battlesim.config: scenario parsing, sweeps and enumeration spaces."""

import pytest

from battlesim.config import (
    ConfigError,
    expand_sweep,
    load_scenario,
    load_space,
    parse_scenario,
    parse_space,
)

FIXTURES = "fixtures"


# ── Scenarios ────────────────────────────────────────────────


class TestParseScenario:
    def test_defaults(self):
        scenario = parse_scenario({})
        assert scenario.data["operators"] == 4
        assert scenario.data["mode"] == "full"
        assert scenario.participant_ids() == ["1", "2", "3", "4"]
        assert scenario.bond_params.aosb == 10
        assert scenario.phase2_schedule.rule == "doubling"

    def test_nested_merge_keeps_defaults(self):
        scenario = parse_scenario({"bonds": {"aosb": 12}})
        assert scenario.data["bonds"]["aosb"] == 12
        assert scenario.data["bonds"]["fee"] == 1

    def test_participants_are_sorted_strings(self):
        scenario = parse_scenario({"operators": 8, "participants": [8, 1, 4]})
        assert scenario.data["participants"] == ["1", "4", "8"]

    def test_strategy_specs_fill_in(self):
        scenario = parse_scenario({"operators": 3, "participants": [1, 2], "strategies": {2: "always_challenge"}})
        assert scenario.strategy_specs() == {"1": "honest", "2": "always_challenge", "3": "abstain"}

    def test_digest_ignores_key_order(self):
        a = parse_scenario({"seed": 1, "operators": 2})
        b = parse_scenario({"operators": 2, "seed": 1})
        assert a.digest == b.digest
        assert a.digest != parse_scenario({"seed": 2, "operators": 2}).digest

    def test_with_overrides(self):
        scenario = parse_scenario({"operators": 2}).with_overrides({"schedule.rule": "gradual", "seed": 9})
        assert scenario.data["schedule"]["rule"] == "gradual"
        assert scenario.data["seed"] == 9


class TestScenarioErrors:
    @pytest.mark.parametrize(
        "raw,path",
        [
            ({"operatorz": 4}, "operatorz"),
            ({"bonds": {"aosbb": 1}}, "bonds.aosbb"),
            ({"operators": 1}, "operators"),
            ({"operators": True}, "operators"),
            ({"concurrency": 3}, "concurrency"),
            ({"mode": "phase3"}, "mode"),
            ({"strategies": {9: "honest"}}, "strategies.9"),
            ({"strategies": {1: "sneaky"}}, "strategies.1"),
            ({"truths": {1: "yes"}}, "truths.1"),
            ({"censor": {2: 1.5}}, "censor.2"),
            ({"schedule": {"rule": "tripling"}}, "schedule.rule"),
            ({"contest": {"method": "C"}}, "contest.method"),
            ({"disable": {"method": "magic"}}, "disable.method"),
            ({"tc": {"links": 0}}, "tc.links"),
            ({"bonds": "high"}, "bonds"),
            ({"sweep": {"colour": [1]}}, "sweep.colour"),
            ({"sweep": {"challengers": []}}, "sweep.challengers"),
        ],
    )
    def test_bad_field_is_named(self, raw, path):
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(raw)
        assert excinfo.value.path == path

    def test_not_a_mapping(self):
        with pytest.raises(ConfigError, match="must be a mapping"):
            parse_scenario([1, 2])


class TestLoadScenario:
    def test_fixture(self):
        scenario = load_scenario(f"{FIXTURES}/three_participants.yaml")
        assert scenario.data["name"] == "three-participants"
        assert scenario.participant_ids() == ["1", "4", "8"]
        assert scenario.source.endswith("three_participants.yaml")

    def test_unknown_key_fixture(self):
        with pytest.raises(ConfigError, match="operatorz"):
            load_scenario(f"{FIXTURES}/bad_key.yaml")

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_scenario(f"{FIXTURES}/nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("operators: [1, 2\n")
        with pytest.raises(ConfigError, match="not valid YAML"):
            load_scenario(path)


# ── Sweeps ───────────────────────────────────────────────────


class TestSweep:
    def test_no_sweep_is_single_point(self):
        scenario = parse_scenario({})
        assert expand_sweep(scenario) == [scenario]

    def test_cartesian_product_in_order(self):
        scenario = parse_scenario({"sweep": {"challengers": [1, 3], "schedule.rule": ["doubling", "gradual"]}})
        points = expand_sweep(scenario)
        assert [(p.data["challengers"], p.data["schedule"]["rule"]) for p in points] == [
            (1, "doubling"),
            (1, "gradual"),
            (3, "doubling"),
            (3, "gradual"),
        ]
        assert len({p.digest for p in points}) == 4

    def test_fixture(self):
        points = expand_sweep(load_scenario(f"{FIXTURES}/capital_sweep.yaml"))
        assert [p.data["challengers"] for p in points] == [1, 3, 7]


# ── Spaces ───────────────────────────────────────────────────


class TestSpace:
    def test_subsets_size(self):
        space = load_space(f"{FIXTURES}/space_n2.yaml")
        assert space.size() == 121
        assert len(list(space.points())) == 121

    def test_all_participate(self):
        space = load_space(f"{FIXTURES}/space_n4.yaml")
        assert space.size() == 16
        first = next(space.points())
        assert first["participants"] == [1, 2, 3, 4]
        assert first["strategies"] == {"1": "honest", "2": "honest", "3": "honest", "4": "honest"}

    def test_base_is_copied_into_points(self):
        space = parse_space({"operators": [2], "base": {"seed": 4}})
        assert all(p["seed"] == 4 for p in space.points())

    def test_empty(self):
        space = load_space(f"{FIXTURES}/space_empty.yaml")
        assert space.size() == 0
        assert list(space.points()) == []

    @pytest.mark.parametrize(
        "raw,match",
        [
            ({"operatorz": [2]}, "operatorz"),
            ({"operators": 2}, "expected a list"),
            ({"operators": [1]}, "operators.0"),
            ({"strategies": ["sneaky"]}, "strategies.0"),
            ({"participation": "some"}, "participation"),
            ({"cap": 0}, "cap"),
        ],
    )
    def test_errors(self, raw, match):
        with pytest.raises(ConfigError, match=match):
            parse_space(raw)
