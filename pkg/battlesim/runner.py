"""Scenario execution, batch sweeps, exhaustive enumeration and report files."""

from __future__ import annotations

import json
import random
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import structlog

from battlesim.config import Scenario, Space, parse_scenario
from battlesim.contest import WITNESS_BYTES_PER_BYTE, OtsScheme, verifier_cost
from battlesim.costmodel import CostParams, cost_table, publication_bytes
from battlesim.dag import build_deployment, build_phase1, operator_ids
from battlesim.disable import DisableBook, DisableMethod
from battlesim.economics import CapitalTrace
from battlesim.ledger import Ledger, SimulationError
from battlesim.lottery import run_lottery
from battlesim.phase2 import run_phase2
from battlesim.strategy import Abstain, make_strategy
from battlesim.tournament import run_parallel_brackets, run_phase1

logger = structlog.get_logger()

REPORT_FILES = ("trace.jsonl", "outcome.json", "capital.jsonl", "cost.json", "summary.txt")


class SpaceTooLarge(SimulationError):
    def __init__(self, size: int, cap: int) -> None:
        self.size = size
        self.cap = cap
        super().__init__(f"space has {size} points, cap is {cap}")


@dataclass
class RunReport:
    scenario: Scenario
    outcome: dict
    trace: list[dict] = field(default_factory=list)
    capital: list[dict] = field(default_factory=list)
    cost: dict = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    @property
    def digest(self) -> str:
        return self.scenario.digest

    @property
    def ok(self) -> bool:
        return not self.violations


# ── Single run ───────────────────────────────────────────────


def _capital_rows(trace: CapitalTrace | None, phase: str) -> list[dict]:
    if trace is None:
        return []
    return [{"phase": phase, **s.record()} for s in trace.samples]


def _asserts_truth(scenario: Scenario, specs: dict[str, str], party: str) -> bool:
    return scenario.truth_map().get(party, make_strategy(specs[party]).honest)


def _honest_truthful(scenario: Scenario, specs: dict[str, str], registered: Sequence[str]) -> set[str]:
    truths = scenario.truth_map()
    return {x for x in registered if make_strategy(specs[x]).honest and truths.get(x, True)}


def _honest_wins_problem(
    scenario: Scenario, specs: dict[str, str], registered: Sequence[str], winner: str | None
) -> str | None:
    """A true assertion must win once an honest operator registers one.

    A registered dishonest operator with a true assertion may force a dual cut
    of its own match, so a bracket without a winner is only flagged when every
    true assertion belongs to an honest operator.
    """
    expected = _honest_truthful(scenario, specs, registered)
    if not expected:
        return None
    if winner is not None:
        if _asserts_truth(scenario, specs, winner):
            return None
        return f"winner {winner} holds a false assertion although {sorted(expected)} hold true ones"
    spoilers = [x for x in registered if x not in expected and _asserts_truth(scenario, specs, x)]
    if spoilers:
        return None
    return f"no winner although honest operators {sorted(expected)} hold true assertions"


def _cost_report(scenario: Scenario) -> dict:
    data = scenario.data
    n, q = data["operators"], data["concurrency"]
    method = data["contest"]["method"]
    input_bytes = data["contest"]["input_bytes"]
    params = CostParams(operators=n, concurrency=q if q <= n // 2 else 1, input_bytes=input_bytes)
    return {
        "scenario_digest": scenario.digest,
        "contest_method": method,
        "verifiers_per_circuit": verifier_cost(method),
        "witness_bytes": {
            scheme.value: publication_bytes(input_bytes, WITNESS_BYTES_PER_BYTE[scheme]) for scheme in OtsScheme
        },
        "rows": cost_table(params),
    }


def _disable_book(scenario: Scenario) -> DisableBook | None:
    method = scenario.data["disable"]["method"]
    if method is None:
        return None
    rng = random.Random(scenario.data["seed"])
    ops = operator_ids(scenario.data["operators"])
    return DisableBook.create(ops, DisableMethod(method), rng, threshold=scenario.data["disable"]["threshold"])


def _run_lottery(scenario: Scenario) -> RunReport:
    data = scenario.data
    rng = random.Random(data["seed"])
    specs = scenario.strategy_specs()
    seeds = {x: rng.getrandbits(64) for x in scenario.participant_ids()}
    withhold = [x for x in seeds if isinstance(make_strategy(specs[x]), Abstain)]
    outcome = run_lottery(data["operators"], seeds, withhold=withhold)
    return RunReport(scenario, {"mode": "lottery", **outcome.record()}, cost=_cost_report(scenario))


def run_scenario(scenario: Scenario) -> RunReport:
    """Execute one scenario deterministically from its seed."""
    data = scenario.data
    if data["mode"] == "lottery":
        return _run_lottery(scenario)

    n = data["operators"]
    params = scenario.bond_params
    schedule = scenario.phase2_schedule
    specs = scenario.strategy_specs()
    truths = scenario.truth_map()
    reorder_seed = data["seed"] if data["reorder"] else None
    book = _disable_book(scenario)
    with_disable = book is not None
    violations: list[str] = []

    if data["concurrency"] > 1:
        p1 = run_parallel_brackets(n, data["concurrency"], specs, truths=truths, params=params)
        ledger = None
    else:
        ledger = Ledger()
        for party, fraction in data["censor"].items():
            ledger.censor(party, fraction)
        if data["mode"] == "phase1":
            dag = build_phase1(n, with_disable=with_disable)
        else:
            dag = build_deployment(
                n, data["challengers"], schedule=schedule, seed=data["seed"], with_disable=with_disable
            )
        p1 = run_phase1(
            dag,
            specs,
            ledger,
            truths=truths,
            params=params,
            watchtowers=data["watchtowers"],
            reorder_seed=reorder_seed,
            disable=book,
        )
    violations.extend(p1.violations)

    problem = _honest_wins_problem(scenario, specs, p1.registered, p1.winner)
    if problem:
        violations.append(problem)

    outcome: dict = {"mode": data["mode"], "scenario_digest": scenario.digest, "phase1": p1.record()}
    capital = _capital_rows(p1.capital, "phase1")
    if p1.capital is not None and not p1.capital.is_conserved():
        violations.append("phase1 capital not conserved")

    if data["mode"] == "full" and ledger is not None and p1.winner is not None:
        winner = p1.winner
        truth = _asserts_truth(scenario, specs, winner)
        owners = dag.metadata["slot_owners"]
        p2 = run_phase2(
            dag,
            winner,
            {w: data["challenger_strategy"] for w in owners},
            schedule,
            ledger=ledger,
            truth=truth,
            asserter_strategy=data["phase2"]["asserter_strategy"],
            params=params,
            bindings=p1.bindings,
            skip_cancellations=data["phase2"]["skip_cancellations"],
            premature_refund=data["phase2"]["premature_refund"],
            fronted=data["phase2"]["fronted"],
            reorder_seed=reorder_seed,
            disable=book,
        )
        violations.extend(p2.violations)
        outcome["phase2"] = p2.record()
        capital += _capital_rows(p2.capital, "phase2")
        honest_asserter = make_strategy(data["phase2"]["asserter_strategy"]).honest
        if truth and honest_asserter and not data["phase2"]["premature_refund"] and not p2.refunded:
            violations.append(f"honest asserter {winner} with a true assertion was not refunded")
        if not truth and owners and make_strategy(data["challenger_strategy"]).honest and p2.refunded:
            violations.append(f"asserter {winner} was refunded on a false assertion")
        if p2.capital is not None and not p2.capital.is_conserved():
            violations.append("phase2 capital not conserved")

    if book is not None:
        outcome["disable_commitments"] = book.registry.export()
        outcome["disabled"] = book.disabled()
    outcome["violations"] = violations
    for v in violations:
        logger.warning("invariant_violation", scenario=data["name"], detail=v)
    logger.info("scenario_finished", scenario=data["name"], winner=p1.winner, violations=len(violations))
    return RunReport(
        scenario=scenario,
        outcome=outcome,
        trace=ledger.trace_records() if ledger is not None else [],
        capital=capital,
        cost=_cost_report(scenario),
        violations=violations,
    )


def run_batch(scenarios: Sequence[Scenario], jobs: int = 1) -> list[RunReport]:
    """Run every scenario; results keep input order."""
    if jobs <= 1 or len(scenarios) <= 1:
        return [run_scenario(s) for s in scenarios]
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(run_scenario, scenarios))


# ── Report files ─────────────────────────────────────────────


def _write_json(path: Path, data: object) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, header: dict, rows: Sequence[dict]) -> None:
    lines = [json.dumps(header, sort_keys=True)] + [json.dumps(row, sort_keys=True) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def summary_text(report: RunReport) -> str:
    data = report.scenario.data
    p1 = report.outcome.get("phase1", {})
    lines = [
        f"scenario   : {data['name']}",
        f"digest     : {report.digest}",
        f"mode       : {data['mode']}",
        f"operators  : {data['operators']}",
        f"winner     : {p1.get('winner', report.outcome.get('winner'))}",
    ]
    if "makespan" in p1:
        lines.append(f"makespan   : {p1['makespan']}")
    if "phase2" in report.outcome:
        p2 = report.outcome["phase2"]
        lines.append(f"refunded   : {p2['refunded']} ({p2['refund_kind']})")
        lines.append(f"rounds     : {p2['rounds_used']}")
        lines.append(f"peak       : {p2['peak']}")
    lines.append(f"violations : {len(report.violations)}")
    lines.extend(f"  - {v}" for v in report.violations)
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = {"scenario_digest": report.digest}
    paths = [out / name for name in REPORT_FILES]
    _write_jsonl(paths[0], header, report.trace)
    _write_json(paths[1], report.outcome)
    _write_jsonl(paths[2], header, report.capital)
    _write_json(paths[3], report.cost)
    paths[4].write_text(summary_text(report), encoding="utf-8")
    return paths


def write_batch(reports: Sequence[RunReport], out_dir: str | Path) -> Path:
    """One report directory per point plus a capital sweep table."""
    out = Path(out_dir)
    rows = []
    for i, report in enumerate(reports):
        write_report(report, out / f"{i:04d}")
        p2 = report.outcome.get("phase2")
        rows.append(
            {
                "point": i,
                "scenario_digest": report.digest,
                "C": report.scenario.data["challengers"],
                "schedule": report.scenario.phase2_schedule.describe(),
                "winner": report.outcome.get("phase1", {}).get("winner"),
                "peak": p2["peak"] if p2 else None,
                "rounds": p2["rounds_used"] if p2 else None,
                "violations": len(report.violations),
            }
        )
    table = out / "sweep.jsonl"
    table.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")
    return table


# ── Enumeration ──────────────────────────────────────────────


@dataclass
class EnumerationSummary:
    points: int = 0
    violations: list[dict] = field(default_factory=list)
    case_coverage: Counter = field(default_factory=Counter)

    def record(self) -> dict:
        return {
            "points": self.points,
            "violations": self.violations,
            "case_coverage": dict(sorted(self.case_coverage.items())),
        }


def enumerate_space(space: Space, cap: int | None = None, jobs: int = 1) -> EnumerationSummary:
    """Run every point of *space* and collect soundness violations and case coverage."""
    cap = cap if cap is not None else space.cap
    size = space.size() if space.operators else 0
    if cap is not None and size > cap:
        raise SpaceTooLarge(size, cap)
    scenarios = []
    for raw in space.points():
        raw.setdefault("mode", "phase1")
        scenarios.append(parse_scenario(raw))
    summary = EnumerationSummary(points=len(scenarios))
    for report in run_batch(scenarios, jobs):
        for case in report.outcome.get("phase1", {}).get("cases", []):
            summary.case_coverage[case["case"]] += 1
        for v in report.violations:
            summary.violations.append(
                {
                    "scenario_digest": report.digest,
                    "operators": report.scenario.data["operators"],
                    "participants": report.scenario.data["participants"],
                    "strategies": report.scenario.data["strategies"],
                    "truths": report.scenario.data["truths"],
                    "violation": v,
                }
            )
    logger.info("enumeration_finished", points=summary.points, violations=len(summary.violations))
    return summary
