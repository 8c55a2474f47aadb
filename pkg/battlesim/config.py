"""Scenario and enumeration-space files.

A scenario is one YAML mapping; every key is checked, unknown keys are
errors. Example::

    name: three-participants
    seed: 7
    operators: 8
    participants: [1, 4, 8]
    strategies:
      1: always_challenge
    truths:
      1: false
    challengers: 7
    schedule: {rule: doubling}
    bonds: {aosb: 10, fee: 1}
    sweep:
      challengers: [1, 2, 4]
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

import yaml

from battlesim.economics import SCHEDULE_RULES, BondError, BondParams, Phase2Schedule, ScheduleError
from battlesim.ledger import SimulationError
from battlesim.strategy import UnknownStrategy, make_strategy

MODES = ("full", "phase1", "lottery")
CONTEST_METHODS = ("A", "B")
DISABLE_METHODS = ("direct", "pairwise", "threshold")


class ConfigError(SimulationError):
    """Invalid scenario content; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# ── Schema ───────────────────────────────────────────────────

_DEFAULTS: dict[str, Any] = {
    "name": "scenario",
    "seed": 0,
    "operators": 4,
    "participants": None,
    "strategies": {},
    "truths": {},
    "challengers": 0,
    "challenger_strategy": "honest",
    "concurrency": 1,
    "mode": "full",
    "watchtowers": 0,
    "censor": {},
    "reorder": False,
    "schedule": {"rule": "doubling", "first": 1, "custom": []},
    "bonds": {"aosb": 10, "fee": 1, "publication_cost": 2, "challenger_aosb": 24, "adr": None},
    "phase2": {
        "asserter_strategy": "honest",
        "skip_cancellations": False,
        "premature_refund": False,
        "fronted": 0,
    },
    "tc": {"links": 4, "starts_per_link": 1, "inter_link_timelock": None, "t_z": None, "rate_limited": False},
    "contest": {"method": "B", "input_bytes": 128},
    "disable": {"method": None, "threshold": None},
}

_NESTED = ("schedule", "bonds", "phase2", "tc", "contest", "disable")


def _check_keys(raw: Mapping, allowed: Mapping, prefix: str = "") -> None:
    for key in raw:
        if key not in allowed:
            raise ConfigError("unknown key", f"{prefix}{key}")


def _int(value: Any, path: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", path)
    if value < minimum:
        raise ConfigError(f"must be >= {minimum}", path)
    return value


def _party_map(raw: Any, path: str, operators: int) -> dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError("expected a mapping of operator id to value", path)
    out: dict[str, Any] = {}
    for key, value in raw.items():
        party = str(key)
        if not party.isdigit() or not 1 <= int(party) <= operators:
            raise ConfigError(f"no operator {party} among 1..{operators}", f"{path}.{party}")
        out[party] = value
    return out


# ── Scenario ─────────────────────────────────────────────────


@dataclass
class Scenario:
    """A normalized scenario; :meth:`to_dict` is what the digest covers."""

    data: dict[str, Any]
    source: str = ""
    sweep: dict[str, list] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self.data)

    @property
    def digest(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def bond_params(self) -> BondParams:
        return BondParams(**self.data["bonds"])

    @property
    def phase2_schedule(self) -> Phase2Schedule:
        s = self.data["schedule"]
        return Phase2Schedule(rule=s["rule"], first=s["first"], custom=tuple(s["custom"]))

    def participant_ids(self) -> list[str]:
        ops = [str(i) for i in range(1, self.data["operators"] + 1)]
        chosen = self.data["participants"]
        return ops if chosen is None else [x for x in ops if x in chosen]

    def strategy_specs(self) -> dict[str, str]:
        """Strategy per operator: explicit entries, else honest participants and abstaining others."""
        participating = set(self.participant_ids())
        specs = {}
        for x in (str(i) for i in range(1, self.data["operators"] + 1)):
            specs[x] = self.data["strategies"].get(x, "honest" if x in participating else "abstain")
        return specs

    def truth_map(self) -> dict[str, bool]:
        return dict(self.data["truths"])

    def with_overrides(self, overrides: Mapping[str, Any]) -> Scenario:
        raw = self.to_dict()
        for dotted, value in overrides.items():
            target = raw
            *parents, leaf = dotted.split(".")
            for p in parents:
                target = target[p]
            target[leaf] = value
        return parse_scenario(raw, source=self.source)


def parse_scenario(raw: Any, source: str = "") -> Scenario:
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError("scenario must be a mapping")
    _check_keys(raw, {**_DEFAULTS, "sweep": None})

    data = copy.deepcopy(_DEFAULTS)
    for key, value in raw.items():
        if key == "sweep":
            continue
        if key in _NESTED:
            if value is None:
                continue
            if not isinstance(value, Mapping):
                raise ConfigError("expected a mapping", key)
            _check_keys(value, _DEFAULTS[key], f"{key}.")
            data[key].update(value)
        else:
            data[key] = value

    data["name"] = str(data["name"])
    data["seed"] = _int(data["seed"], "seed")
    n = data["operators"] = _int(data["operators"], "operators", 2)
    data["challengers"] = _int(data["challengers"], "challengers")
    data["watchtowers"] = _int(data["watchtowers"], "watchtowers")
    q = data["concurrency"] = _int(data["concurrency"], "concurrency", 1)
    if q & (q - 1):
        raise ConfigError("must be a power of two", "concurrency")
    if data["mode"] not in MODES:
        raise ConfigError(f"expected one of {', '.join(MODES)}", "mode")
    data["reorder"] = bool(data["reorder"])

    if data["participants"] is not None:
        if not isinstance(data["participants"], list):
            raise ConfigError("expected a list of operator ids", "participants")
        data["participants"] = sorted(_party_map({p: True for p in data["participants"]}, "participants", n), key=int)

    data["strategies"] = {k: str(v) for k, v in _party_map(data["strategies"], "strategies", n).items()}
    for party, spec in data["strategies"].items():
        try:
            make_strategy(spec)
        except (UnknownStrategy, SimulationError, ValueError) as e:
            raise ConfigError(str(e), f"strategies.{party}") from e
    try:
        make_strategy(str(data["challenger_strategy"]))
        make_strategy(str(data["phase2"]["asserter_strategy"]))
    except (UnknownStrategy, SimulationError, ValueError) as e:
        raise ConfigError(str(e), "challenger_strategy") from e

    truths = _party_map(data["truths"], "truths", n)
    for party, value in truths.items():
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", f"truths.{party}")
    data["truths"] = truths

    censor = _party_map(data["censor"], "censor", n)
    for party, value in censor.items():
        if not isinstance(value, (int, float)) or not 0 <= value < 1:
            raise ConfigError("censorship fraction must lie in [0, 1)", f"censor.{party}")
    data["censor"] = {k: float(v) for k, v in censor.items()}

    if data["schedule"]["rule"] not in SCHEDULE_RULES:
        raise ConfigError(f"expected one of {', '.join(SCHEDULE_RULES)}", "schedule.rule")
    data["schedule"]["custom"] = list(data["schedule"]["custom"] or [])
    if data["contest"]["method"] not in CONTEST_METHODS:
        raise ConfigError("expected A or B", "contest.method")
    if data["disable"]["method"] is not None and data["disable"]["method"] not in DISABLE_METHODS:
        raise ConfigError(f"expected one of {', '.join(DISABLE_METHODS)}", "disable.method")
    _int(data["tc"]["links"], "tc.links", 1)
    _int(data["tc"]["starts_per_link"], "tc.starts_per_link", 1)

    scenario = Scenario(data, source=source, sweep=_parse_sweep(raw.get("sweep")))
    try:
        scenario.bond_params
    except BondError as e:
        raise ConfigError(str(e), "bonds") from e
    try:
        scenario.phase2_schedule
    except ScheduleError as e:
        raise ConfigError(str(e), "schedule") from e
    return scenario


def _parse_sweep(raw: Any) -> dict[str, list]:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError("expected a mapping of field to values", "sweep")
    sweep: dict[str, list] = {}
    for key, values in raw.items():
        head, _, leaf = str(key).partition(".")
        if head not in _DEFAULTS or head == "sweep" or (leaf and (head not in _NESTED or leaf not in _DEFAULTS[head])):
            raise ConfigError("unknown sweep field", f"sweep.{key}")
        if not isinstance(values, list) or not values:
            raise ConfigError("expected a non-empty list", f"sweep.{key}")
        sweep[str(key)] = values
    return sweep


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"not valid YAML: {e}") from e
    return parse_scenario(raw, source=str(path))


def expand_sweep(scenario: Scenario) -> list[Scenario]:
    """One scenario per point of the sweep's cartesian product, in declaration order."""
    if not scenario.sweep:
        return [scenario]
    keys = list(scenario.sweep)
    points = []
    for values in itertools.product(*(scenario.sweep[k] for k in keys)):
        point = scenario.with_overrides(dict(zip(keys, values)))
        points.append(point)
    return points


# ── Enumeration spaces ───────────────────────────────────────

_SPACE_KEYS = {"operators", "strategies", "truths", "participation", "cap", "base"}


@dataclass
class Space:
    operators: list[int]
    strategies: list[str]
    truths: list[bool]
    participation: str = "all"  # all | subsets
    cap: int | None = None
    base: dict[str, Any] = field(default_factory=dict)

    def points(self) -> Iterator[dict[str, Any]]:
        """Raw scenario mappings, one per point of the space."""
        for n in self.operators:
            ops = [str(i) for i in range(1, n + 1)]
            subsets: list[list[str]] = [ops]
            if self.participation == "subsets":
                subsets = [list(c) for k in range(n + 1) for c in itertools.combinations(ops, k)]
            for subset in subsets:
                strategy_space = itertools.product(self.strategies, repeat=len(subset)) if self.strategies else [()]
                for assignment in strategy_space:
                    truth_space = itertools.product(self.truths, repeat=len(subset)) if self.truths else [()]
                    for truths in truth_space:
                        raw = copy.deepcopy(self.base)
                        raw.update(
                            {
                                "name": f"n{n}",
                                "operators": n,
                                "participants": [int(x) for x in subset],
                                "strategies": dict(zip(subset, assignment)),
                                "truths": dict(zip(subset, truths)),
                            }
                        )
                        yield raw

    def size(self) -> int:
        total = 0
        for n in self.operators:
            sizes = [n] if self.participation != "subsets" else range(n + 1)
            for k in sizes:
                subsets = 1 if self.participation != "subsets" else math.comb(n, k)
                total += subsets * max(len(self.strategies), 1) ** k * max(len(self.truths), 1) ** k
        return total


def parse_space(raw: Any) -> Space:
    raw = raw or {}
    if not isinstance(raw, Mapping):
        raise ConfigError("space must be a mapping")
    _check_keys(raw, dict.fromkeys(_SPACE_KEYS))
    operators = raw.get("operators", [])
    if not isinstance(operators, list):
        raise ConfigError("expected a list", "operators")
    for i, n in enumerate(operators):
        _int(n, f"operators.{i}", 2)
    strategies = [str(s) for s in raw.get("strategies", [])]
    for i, spec in enumerate(strategies):
        try:
            make_strategy(spec)
        except (UnknownStrategy, SimulationError, ValueError) as e:
            raise ConfigError(str(e), f"strategies.{i}") from e
    participation = raw.get("participation", "all")
    if participation not in ("all", "subsets"):
        raise ConfigError("expected all or subsets", "participation")
    cap = raw.get("cap")
    if cap is not None:
        cap = _int(cap, "cap", 1)
    base = raw.get("base") or {}
    if not isinstance(base, Mapping):
        raise ConfigError("expected a mapping", "base")
    return Space(
        operators=list(operators),
        strategies=strategies,
        truths=[bool(t) for t in raw.get("truths", [])],
        participation=participation,
        cap=cap,
        base=dict(base),
    )


def load_space(path: str | Path) -> Space:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return parse_space(yaml.safe_load(path.read_text(encoding="utf-8")))
