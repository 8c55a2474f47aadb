"""DAG builders: Tournament Chain links, the Phase 1 bracket, Phase 2 templates, stats.

Every builder returns a :class:`TemplateDag` whose template ids and output
roles follow the naming helpers below, so engines can address templates
without searching. A :class:`Deployment` realizes templates into concrete
ledger instances.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from battlesim.analyzer import shape_bytes, template_bytes
from battlesim.economics import Phase2Schedule
from battlesim.graph import InputRef, OutputSpec, TemplateDag, TemplateKind, TxTemplate
from battlesim.ledger import ANYONE, Outpoint, Output, SimulationError, TemplateInstance, TxInput

ROUND_PERIODS = 6  # one bracket round
TC_TICK = ROUND_PERIODS  # one unit of the inter-link timelock
PHASE2_ROUND_PERIODS = 5


class InvalidN(SimulationError):
    pass


class InvalidParams(SimulationError):
    pass


def rounds_for(n: int) -> int:
    """⌈log2 n⌉ for n ≥ 1."""
    if n < 1:
        raise InvalidN(f"operator count must be positive, got {n}")
    return (n - 1).bit_length()


def tc_timelock(n: int) -> int:
    """Inter-link timelock that keeps one tournament per link from overlapping the next."""
    return 2 + 2 * rounds_for(n)


def operator_ids(n: int) -> list[str]:
    return [str(i) for i in range(1, n + 1)]


def setup_permutation(count: int, slot: str, seed: int) -> list[int]:
    """Challenger order fixed at setup for one TC slot."""
    order = list(range(count))
    random.Random(f"{seed}:{slot}").shuffle(order)
    return order


# ── Bracket ──────────────────────────────────────────────────


@dataclass(frozen=True)
class Match:
    round: int
    index: int
    left: tuple[str, ...]
    right: tuple[str, ...]

    @property
    def pairings(self) -> list[tuple[str, str]]:
        """(alice, bob) for every superimposed pairing of this match."""
        return [(a, b) for a in self.left for b in self.right]

    @property
    def participants(self) -> tuple[str, ...]:
        return self.left + self.right


@dataclass
class Bracket:
    participants: list[str]
    size: int
    rounds: list[list[Match]]
    winner_selectors: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._positions = {p: i for i, p in enumerate(self.participants)}
        self._matches = {(m.round, m.index): m for rnd in self.rounds for m in rnd}
        if not self.winner_selectors:
            self.winner_selectors = sorted(self._matches)

    @property
    def depth(self) -> int:
        return len(self.rounds)

    def position(self, party: str) -> int:
        """1-based bracket position."""
        return self._positions[party] + 1

    def match_index(self, party: str, round_no: int) -> int:
        return self._positions[party] >> round_no

    def match(self, round_no: int, index: int) -> Match | None:
        return self._matches.get((round_no, index))

    def match_of(self, party: str, round_no: int) -> Match:
        return self._matches[(round_no, self.match_index(party, round_no))]

    def is_alice(self, party: str, round_no: int) -> bool:
        """Left half defends; in round 1 that is every odd position."""
        return (self._positions[party] >> (round_no - 1)) & 1 == 0

    def opponents(self, party: str, round_no: int) -> tuple[str, ...]:
        match = self.match_of(party, round_no)
        return match.right if self.is_alice(party, round_no) else match.left

    def sibling(self, round_no: int, index: int) -> Match | None:
        if round_no >= self.depth:
            return None
        return self.match(round_no, index ^ 1)

    def meeting_round(self, a: str, b: str) -> int:
        return (self._positions[a] ^ self._positions[b]).bit_length()


def build_bracket(participants: Sequence[str]) -> Bracket:
    """Fixed single-elimination bracket padded to the next power of two."""
    n = len(participants)
    if n < 2:
        raise InvalidN(f"a bracket needs at least 2 operators, got {n}")
    depth = rounds_for(n)
    size = 1 << depth
    rounds: list[list[Match]] = []
    for r in range(1, depth + 1):
        span, half = 1 << r, 1 << (r - 1)
        matches = []
        for m in range(size // span):
            lo = m * span
            left = tuple(participants[p] for p in range(lo, lo + half) if p < n)
            right = tuple(participants[p] for p in range(lo + half, lo + span) if p < n)
            if left or right:
                matches.append(Match(r, m, left, right))
        rounds.append(matches)
    return Bracket(participants=list(participants), size=size, rounds=rounds)


# ── Naming ───────────────────────────────────────────────────


@dataclass(frozen=True)
class Phase1Names:
    slot: str

    def _p(self, *parts: str) -> str:
        return "/".join((self.slot, "p1") + parts)

    @property
    def funding(self) -> str:
        return self._p("out", "funding")

    @property
    def kickoff(self) -> str:
        return self._p("kickoff")

    def registration(self, x: str) -> str:
        return self._p("reg", x)

    def no_assertion(self, x: str) -> str:
        return self._p("no_assertion", x)

    def enable(self, x: str, r: int) -> str:
        return self.registration(x) if r == 1 else self._p("enable", x, f"r{r}")

    def win(self, x: str) -> str:
        return self._p("win", x)

    def pairing(self, r: int, a: str, b: str, step: str) -> str:
        return self._p(f"r{r}", f"{a}v{b}", step)

    def reg_out(self, x: str) -> str:
        return self._p("out", "reg", x)

    def selector(self, r: int, m: int) -> str:
        return self._p("out", "sel", f"r{r}", f"m{m}")

    def challenge_enabler(self, x: str, r: int) -> str:
        return self._p("out", "C", x, f"r{r}")

    def next_enabler(self, x: str, r: int) -> str:
        return self._p("out", "N", x, f"r{r}")

    def mark(self, x: str) -> str:
        return self._p("out", "mark", x)

    def activation(self, x: str) -> str:
        return self._p("out", "activation", x)

    def stage(self, r: int, a: str, b: str, name: str) -> str:
        return self._p("out", f"r{r}", f"{a}v{b}", name)


@dataclass(frozen=True)
class Phase2Names:
    slot: str
    asserter: str

    def _p(self, *parts: str) -> str:
        return "/".join((self.slot, "p2", self.asserter) + parts)

    @property
    def start(self) -> str:
        return self._p("start")

    @property
    def try_early_refund(self) -> str:
        return self._p("try_early_refund")

    @property
    def early_refund(self) -> str:
        return self._p("early_refund")

    @property
    def refund(self) -> str:
        return self._p("refund")

    def slot_step(self, j: int, step: str) -> str:
        return self._p(f"s{j}", step)

    @property
    def reimburse_enabler(self) -> str:
        return self._p("out", "reimburse")

    @property
    def refund_timer(self) -> str:
        return self._p("out", "refund_timer")

    @property
    def early_gate(self) -> str:
        return self._p("out", "early_gate")

    @property
    def reimbursement_tried(self) -> str:
        return self._p("out", "reimbursement_tried")

    def reg_slot(self, j: int) -> str:
        return self._p("out", f"s{j}", "reg_slot")

    def bob_enabler(self, j: int) -> str:
        return self._p("out", f"s{j}", "bob_enabler")

    def stage(self, j: int, name: str) -> str:
        return self._p("out", f"s{j}", name)


@dataclass(frozen=True)
class TcNames:
    namespace: str

    @property
    def funding(self) -> str:
        return f"{self.namespace}/out/funding"

    @property
    def start(self) -> str:
        return f"{self.namespace}/start"

    def link(self, i: int) -> str:
        return f"{self.namespace}/L{i}"

    def next_out(self, i: int) -> str:
        return f"{self.namespace}/out/L{i}/next"

    def start_output(self, i: int, k: int) -> str:
        return f"{self.namespace}/out/L{i}/start/{k}"

    def slot(self, i: int, k: int) -> str:
        return f"{self.namespace}/L{i}/s{k}"


# ── FLEX core ────────────────────────────────────────────────

# Steps shared by every two-party dispute component.
BOB_BOND = "bob_bond"
ALICE_BOND = "alice_bond"
ALICE_INPUT = "alice_input"
BOB_INPUT = "bob_input"
ALICE_COSIGN = "alice_cosign"
ALICE_WINS = "alice_wins"
BOB_WINS = "bob_wins"
ASSERTER_TIMEOUT_BOND = "asserter_timeout_bond"
ASSERTER_TIMEOUT_INPUT = "asserter_timeout_input"
CHALLENGER_TIMEOUT_BOND = "challenger_timeout_bond"
CHALLENGER_TIMEOUT_INPUT = "challenger_timeout_input"
BOB_CHALLENGE = "bob_challenge"
NO_BOB_CHALLENGE = "no_bob_challenge"
DISPUTE_TIMEOUT = "dispute_timeout"
ALICE_WAS_DISABLED = "alice_was_disabled"
BOB_WAS_DISABLED = "bob_was_disabled"
STILL_OPEN_STAGES = ("bob_bonded", "alice_bonded", "alice_input", "bob_input")


@dataclass(frozen=True)
class FlexWiring:
    """How one dispute component hooks into its surrounding DAG."""

    template_id: object  # callable(step) -> template id
    role: object  # callable(name) -> output role
    alice: str
    bob: str
    alice_can_win: str
    next_bob: str
    delay_a: int
    delay_b: int
    signers: frozenset[str]
    slot: str
    cosign: bool = False
    params: dict[str, str] = field(default_factory=dict, hash=False)


def _add_flex_core(dag: TemplateDag, w: FlexWiring) -> str:
    """Bonds, inputs, win claims and stage timeouts. Returns the resolution gate role."""
    tid, role = w.template_id, w.role
    alice, bob = frozenset({w.alice}), frozenset({w.bob})

    def add(step: str, kind: TemplateKind, inputs, outputs, authorized) -> None:
        dag.add(
            TxTemplate(
                id=tid(step),
                kind=kind,
                inputs=inputs,
                outputs=[OutputSpec(o) for o in outputs],
                authorized=authorized,
                signers=w.signers,
                slot=w.slot,
                step=step,
                params={"alice": w.alice, "bob": w.bob, **w.params},
            )
        )

    add(BOB_BOND, TemplateKind.FLEX_INTERNAL, [InputRef(role("challenged"))], [role("bob_bonded")], bob)
    add(ALICE_BOND, TemplateKind.FLEX_INTERNAL, [InputRef(role("bob_bonded"))], [role("alice_bonded")], alice)
    add(ALICE_INPUT, TemplateKind.ALICE_INPUT, [InputRef(role("alice_bonded"))], [role("alice_input")], alice)
    add(BOB_INPUT, TemplateKind.BOB_INPUT, [InputRef(role("alice_input"))], [role("bob_input")], bob)
    gate = role("bob_input")
    if w.cosign:
        add(ALICE_COSIGN, TemplateKind.ALICE_INPUT_COSIG, [InputRef(gate)], [role("cosigned")], alice)
        gate = role("cosigned")

    next_bob = InputRef(w.next_bob, optional=True)
    add(ALICE_WINS, TemplateKind.FLEX_INTERNAL, [InputRef(gate), next_bob], [], alice)
    add(BOB_WINS, TemplateKind.FLEX_INTERNAL, [InputRef(gate), InputRef(w.alice_can_win)], [], bob)
    add(
        ASSERTER_TIMEOUT_BOND,
        TemplateKind.ASSERTER_TIMEOUT,
        [InputRef(role("bob_bonded"), PHASE2_ROUND_PERIODS * w.delay_a + 1), InputRef(w.alice_can_win)],
        [],
        bob,
    )
    add(
        ASSERTER_TIMEOUT_INPUT,
        TemplateKind.ASSERTER_TIMEOUT,
        [InputRef(role("alice_bonded"), 2), InputRef(w.alice_can_win)],
        [],
        bob,
    )
    add(
        CHALLENGER_TIMEOUT_BOND,
        TemplateKind.FLEX_INTERNAL,
        [InputRef(role("challenged"), PHASE2_ROUND_PERIODS * w.delay_b + 1), next_bob],
        [],
        alice,
    )
    add(
        CHALLENGER_TIMEOUT_INPUT,
        TemplateKind.FLEX_INTERNAL,
        [InputRef(role("alice_input"), 2), next_bob],
        [],
        alice,
    )
    return gate


# ── Tournament Chain ─────────────────────────────────────────


def build_tc(
    links: int,
    inter_link_timelock: int,
    starts_per_link: int,
    *,
    operators: int = 2,
    namespace: str = "tc",
    rate_limited: bool = False,
) -> TemplateDag:
    """TCStart → OpenTournament_1 → … → OpenTournament_W.

    The next-link output of every link carries ``inter_link_timelock`` TC
    ticks of six periods each. A rate-limited chain leaves that output free
    and sets the delay per advancement through the leaf timelock instead.
    """
    if links < 1 or inter_link_timelock < 1 or starts_per_link < 1:
        raise InvalidParams("links, inter-link timelock and starts per link must all be >= 1")
    names = TcNames(namespace)
    signers = frozenset(operator_ids(operators))
    dag = TemplateDag()
    dag.declare_external(names.funding)
    dag.add(
        TxTemplate(
            id=names.start,
            kind=TemplateKind.TC_START,
            inputs=[InputRef(names.funding)],
            outputs=[OutputSpec(names.next_out(0))],
            signers=signers,
            slot=namespace,
        )
    )
    link_timelock = 0 if rate_limited else TC_TICK * inter_link_timelock
    for i in range(1, links + 1):
        outputs = [OutputSpec(names.next_out(i), timelock=link_timelock)]
        outputs += [OutputSpec(names.start_output(i, k)) for k in range(starts_per_link)]
        dag.add(
            TxTemplate(
                id=names.link(i),
                kind=TemplateKind.OPEN_TOURNAMENT,
                inputs=[InputRef(names.next_out(i - 1))],
                outputs=outputs,
                signers=signers,
                slot=names.link(i),
                params={"link": str(i)},
            )
        )
    dag.metadata.update(
        {
            "namespace": namespace,
            "links": links,
            "inter_link_timelock": inter_link_timelock,
            "tc_tick_periods": TC_TICK,
            "starts_per_link": starts_per_link,
            "rate_limited": rate_limited,
        }
    )
    return dag


# ── Phase 1 ──────────────────────────────────────────────────


def build_phase1(
    n: int,
    slot: str = "L1",
    *,
    funding_role: str | None = None,
    with_disable: bool = False,
    mark_registrants: bool = False,
) -> TemplateDag:
    """Phase 1 bracket: enabler chains, superimposed dispute components, selectors."""
    if n < 2:
        raise InvalidN(f"Phase 1 needs at least 2 operators, got {n}")
    names = Phase1Names(slot)
    ops = operator_ids(n)
    bracket = build_bracket(ops)
    depth = bracket.depth
    everyone = frozenset(ops)
    dag = TemplateDag()

    funding = funding_role or names.funding
    dag.declare_external(funding)

    kickoff_outputs = [OutputSpec(names.reg_out(x)) for x in ops]
    kickoff_outputs += [
        OutputSpec(names.selector(r, m), timelock=ROUND_PERIODS * r) for r, m in bracket.winner_selectors
    ]
    dag.add(
        TxTemplate(
            id=names.kickoff,
            kind=TemplateKind.START_PHASE1,
            inputs=[InputRef(funding)],
            outputs=kickoff_outputs,
            signers=everyone,
            slot=slot,
        )
    )

    for x in ops:
        own = frozenset({x})
        reg_outputs = [OutputSpec(names.challenge_enabler(x, 1)), OutputSpec(names.next_enabler(x, 1))]
        if mark_registrants:
            reg_outputs.append(OutputSpec(names.mark(x)))
        dag.add(
            TxTemplate(
                id=names.registration(x),
                kind=TemplateKind.REGISTRATION_PHASE1,
                inputs=[InputRef(names.reg_out(x))],
                outputs=reg_outputs,
                authorized=own,
                signers=own,
                slot=slot,
                params={"party": x, "round": "1"},
            )
        )
        dag.add(
            TxTemplate(
                id=names.no_assertion(x),
                kind=TemplateKind.NO_ASSERTION,
                inputs=[InputRef(names.reg_out(x), 1)],
                outputs=[],
                signers=own,
                slot=slot,
                params={"party": x},
            )
        )
        for r in range(2, depth + 1):
            prev = bracket.match_index(x, r - 1)
            dag.add(
                TxTemplate(
                    id=names.enable(x, r),
                    kind=TemplateKind.ENABLE_ROUND,
                    inputs=[
                        InputRef(names.next_enabler(x, r - 1)),
                        InputRef(names.selector(r - 1, prev), ROUND_PERIODS * (r - 1)),
                    ],
                    outputs=[OutputSpec(names.challenge_enabler(x, r)), OutputSpec(names.next_enabler(x, r))],
                    signers=own,
                    slot=slot,
                    params={"party": x, "round": str(r)},
                )
            )
        dag.add(
            TxTemplate(
                id=names.win(x),
                kind=TemplateKind.WIN_PHASE1,
                inputs=[
                    InputRef(names.next_enabler(x, depth)),
                    InputRef(names.selector(depth, 0), ROUND_PERIODS * depth),
                ],
                outputs=[OutputSpec(names.activation(x))],
                signers=own,
                slot=slot,
                params={"party": x},
            )
        )

    for rnd in bracket.rounds:
        for match in rnd:
            for a, b in match.pairings:
                _add_phase1_pairing(dag, names, match, a, b, with_disable)

    dag.metadata.update(
        {
            "slot": slot,
            "operators": n,
            "rounds": depth,
            "round_periods": ROUND_PERIODS,
            "assumptions": {
                "uniform_round_timelock": (
                    "the 6-period enabler link timelock is applied to every round, round 1 included"
                ),
                "bracket_padding": f"{n} operators padded to {bracket.size} positions",
            },
        }
    )
    return dag


def _add_phase1_pairing(
    dag: TemplateDag, names: Phase1Names, match: Match, a: str, b: str, with_disable: bool
) -> None:
    r = match.round
    pair = frozenset({a, b})
    c_a, c_b = names.challenge_enabler(a, r), names.challenge_enabler(b, r)
    n_a, n_b = names.next_enabler(a, r), names.next_enabler(b, r)

    def tid(step: str) -> str:
        return names.pairing(r, a, b, step)

    def role(name: str) -> str:
        return names.stage(r, a, b, name)

    def add(step: str, kind: TemplateKind, inputs, outputs, authorized) -> None:
        dag.add(
            TxTemplate(
                id=tid(step),
                kind=kind,
                inputs=inputs,
                outputs=[OutputSpec(o) for o in outputs],
                authorized=authorized,
                signers=pair,
                slot=names.slot,
                step=step,
                params={"alice": a, "bob": b, "round": str(r), "match": str(match.index)},
            )
        )

    add(BOB_CHALLENGE, TemplateKind.BOB_CHALLENGE, [InputRef(c_b), InputRef(c_a)], [role("challenged")], frozenset({b}))
    add(
        NO_BOB_CHALLENGE,
        TemplateKind.NO_BOB_CHALLENGE,
        [InputRef(c_a, 1), InputRef(c_b, 1), InputRef(n_b)],
        [],
        frozenset({a}),
    )
    add(
        DISPUTE_TIMEOUT,
        TemplateKind.DISPUTE_TIMEOUT,
        [InputRef(names.selector(r, match.index), ROUND_PERIODS * r), InputRef(n_a), InputRef(n_b)],
        [],
        frozenset({ANYONE}),
    )
    _add_flex_core(
        dag,
        FlexWiring(
            template_id=tid,
            role=role,
            alice=a,
            bob=b,
            alice_can_win=n_a,
            next_bob=n_b,
            delay_a=0,
            delay_b=0,
            signers=pair,
            slot=names.slot,
        ),
    )
    if with_disable:
        add(ALICE_WAS_DISABLED, TemplateKind.ALICE_WAS_DISABLED, [InputRef(c_a), InputRef(n_a)], [], frozenset({ANYONE}))
        add(BOB_WAS_DISABLED, TemplateKind.BOB_WAS_DISABLED, [InputRef(c_b), InputRef(n_b)], [], frozenset({ANYONE}))


# ── Phase 2 ──────────────────────────────────────────────────


def slot_delays(challengers: int, schedule: Phase2Schedule) -> list[int]:
    """Alice's bond delay in epochs for every slot position: its round index − 1."""
    delays: list[int] = []
    for round_no, size in enumerate(schedule.sizes(challengers)):
        delays.extend([round_no] * size)
    return delays


def build_phase2(
    n: int,
    max_challengers: int,
    rounds: int | None = None,
    slot: str = "L1",
    *,
    challengers: Sequence[str] | None = None,
    schedule: Phase2Schedule | None = None,
    seed: int = 0,
    activation_roles: dict[str, str] | None = None,
    dual_proof: bool = False,
    exclude_phase1_losers: bool = False,
) -> TemplateDag:
    """One mutually exclusive Phase 2 template per potential asserter."""
    if n < 1 or max_challengers < 0:
        raise InvalidParams("Phase 2 needs n >= 1 and a non-negative challenger count")
    schedule = schedule or Phase2Schedule()
    delays = slot_delays(max_challengers, schedule)
    needed = (max(delays) + 1) if delays else 1
    rounds = needed if rounds is None else rounds
    if rounds < 1 or rounds < needed:
        raise InvalidParams(f"{max_challengers} challengers need {needed} rounds under {schedule}, got {rounds}")
    challenger_ids = list(challengers) if challengers is not None else [f"W{j}" for j in range(1, max_challengers + 1)]
    if len(challenger_ids) != max_challengers:
        raise InvalidParams("challenger list does not match max_challengers")
    owners = [challenger_ids[p] for p in setup_permutation(max_challengers, slot, seed)]
    p1 = Phase1Names(slot)

    dag = TemplateDag()
    for x in operator_ids(n):
        activation = (activation_roles or {}).get(x, p1.activation(x))
        if activation_roles is None or x not in activation_roles:
            dag.declare_external(activation)
        _add_phase2_template(
            dag,
            Phase2Names(slot, x),
            x,
            activation,
            owners,
            delays,
            rounds,
            slot,
            dual_proof=dual_proof,
            loser_marks={y: p1.mark(y) for y in operator_ids(n)} if exclude_phase1_losers else None,
        )
    dag.metadata.update(
        {
            "slot": slot,
            "challengers": max_challengers,
            "phase2_rounds": rounds,
            "refund_timelock": PHASE2_ROUND_PERIODS * rounds + 2,
            "slot_owners": owners,
            "slot_delays": delays,
        }
    )
    return dag


def _add_phase2_template(
    dag: TemplateDag,
    names: Phase2Names,
    asserter: str,
    activation: str,
    owners: list[str],
    delays: list[int],
    rounds: int,
    slot: str,
    *,
    dual_proof: bool,
    loser_marks: dict[str, str] | None,
) -> None:
    own = frozenset({asserter})
    outputs = [
        OutputSpec(names.reimburse_enabler),
        OutputSpec(names.refund_timer, timelock=PHASE2_ROUND_PERIODS * rounds + 2),
        OutputSpec(names.early_gate, timelock=1),
    ]
    for j in range(len(owners)):
        outputs += [OutputSpec(names.reg_slot(j)), OutputSpec(names.bob_enabler(j))]

    def single(tid: str, kind: TemplateKind, inputs, outs) -> None:
        dag.add(
            TxTemplate(
                id=tid,
                kind=kind,
                inputs=inputs,
                outputs=[OutputSpec(o) for o in outs],
                authorized=own,
                signers=own,
                slot=slot,
                params={"asserter": asserter},
            )
        )

    dag.add(
        TxTemplate(
            id=names.start,
            kind=TemplateKind.START_TOURNAMENT,
            inputs=[InputRef(activation)],
            outputs=outputs,
            authorized=own,
            signers=own,
            slot=slot,
            params={"asserter": asserter},
        )
    )
    single(names.try_early_refund, TemplateKind.TRY_EARLY_REFUND, [InputRef(names.early_gate, 1)], [names.reimbursement_tried])
    single(
        names.early_refund,
        TemplateKind.EARLY_REFUND,
        [InputRef(names.reimbursement_tried, 1), InputRef(names.reimburse_enabler)],
        [],
    )
    single(
        names.refund,
        TemplateKind.REFUND,
        [InputRef(names.refund_timer, PHASE2_ROUND_PERIODS * rounds + 2), InputRef(names.reimburse_enabler)],
        [],
    )

    for j, owner in enumerate(owners):
        pair = frozenset({asserter, owner})
        challenger = frozenset({owner})

        def tid(step: str, j: int = j) -> str:
            return names.slot_step(j, step)

        def role(name: str, j: int = j) -> str:
            return names.stage(j, name)

        def add(step: str, kind: TemplateKind, inputs, outs, authorized, j: int = j, owner: str = owner) -> None:
            dag.add(
                TxTemplate(
                    id=names.slot_step(j, step),
                    kind=kind,
                    inputs=inputs,
                    outputs=[OutputSpec(o) for o in outs],
                    authorized=authorized,
                    signers=frozenset({asserter, owner}),
                    slot=slot,
                    step=step,
                    params={"alice": asserter, "bob": owner, "position": str(j)},
                )
            )

        add("reg_in", TemplateKind.REG_IN_PHASE2, [InputRef(names.reg_slot(j))], [role("registered")], challenger)
        add(
            "reg_timeout",
            TemplateKind.REG_TIMEOUT,
            [InputRef(names.reg_slot(j), 1), InputRef(names.bob_enabler(j))],
            [],
            own,
        )
        add(
            BOB_CHALLENGE,
            TemplateKind.BOB_CHALLENGE,
            [InputRef(names.bob_enabler(j)), InputRef(role("registered"))],
            [role("challenged")],
            challenger,
        )
        add(NO_BOB_CHALLENGE, TemplateKind.NO_BOB_CHALLENGE, [InputRef(names.bob_enabler(j), 1)], [], own)
        gate = _add_flex_core(
            dag,
            FlexWiring(
                template_id=tid,
                role=role,
                alice=asserter,
                bob=owner,
                alice_can_win=names.reimburse_enabler,
                next_bob=role("next_bob_enabler"),
                delay_a=delays[j],
                delay_b=0,
                signers=pair,
                slot=slot,
                cosign=dual_proof,
                params={"position": str(j)},
            ),
        )
        for stage in STILL_OPEN_STAGES:
            stage_role = gate if stage == "bob_input" else role(stage)
            inputs = [InputRef(names.reimbursement_tried), InputRef(stage_role)]
            if stage in ("alice_input", "bob_input"):
                inputs.append(InputRef(names.reimburse_enabler))
            add(f"still_open_{stage}", TemplateKind.STILL_OPEN, inputs, [], challenger)
        if loser_marks and owner in loser_marks and owner != asserter:
            add(
                "exclude_loser",
                TemplateKind.EXCLUDE_LOSER,
                [InputRef(role("registered")), InputRef(loser_marks[owner])],
                [],
                own,
            )


# ── Full deployment ──────────────────────────────────────────


def build_deployment(
    n: int,
    max_challengers: int = 0,
    slot: str = "L1",
    *,
    schedule: Phase2Schedule | None = None,
    seed: int = 0,
    funding_role: str | None = None,
    with_disable: bool = False,
    exclude_phase1_losers: bool = False,
    dual_proof: bool = False,
    challengers: Sequence[str] | None = None,
) -> TemplateDag:
    """Phase 1 wired to the N Phase 2 templates through the WinPhase1 outputs."""
    dag = build_phase1(
        n, slot, funding_role=funding_role, with_disable=with_disable, mark_registrants=exclude_phase1_losers
    )
    names = Phase1Names(slot)
    phase2 = build_phase2(
        n,
        max_challengers,
        slot=slot,
        schedule=schedule,
        seed=seed,
        challengers=challengers,
        activation_roles={x: names.activation(x) for x in operator_ids(n)},
        dual_proof=dual_proof,
        exclude_phase1_losers=exclude_phase1_losers,
    )
    return dag.merge(phase2)


# ── Realization ──────────────────────────────────────────────


class Deployment:
    """Concrete ledger instances for the templates of one DAG.

    External roles (funding, TC start outputs) are bound to outpoints with
    :meth:`bind`; everything else is derived from producer transaction ids.
    """

    def __init__(self, dag: TemplateDag, bindings: dict[str, Outpoint] | None = None) -> None:
        self.dag = dag
        self.bindings: dict[str, Outpoint] = dict(bindings or {})
        self._cache: dict[str, TemplateInstance] = {}

    def bind(self, role: str, outpoint: Outpoint) -> None:
        self.bindings[role] = outpoint
        self._cache.clear()

    def outpoint(self, role: str) -> Outpoint:
        producer = self.dag.producer(role)
        if producer is not None:
            return Outpoint(self.instance(producer[0]).tx_id, producer[1])
        if role in self.bindings:
            return self.bindings[role]
        raise KeyError(f"external input {role!r} is not bound")

    def instance(self, template_id: str) -> TemplateInstance:
        cached = self._cache.get(template_id)
        if cached is not None:
            return cached
        template = self.dag.get(template_id)
        inputs = tuple(
            TxInput(self.outpoint(ref.role), self.dag.input_timelock(ref))
            for ref in self.dag.wired_inputs(template_id)
        )
        outputs = tuple(Output(o.role, o.value, o.timelock) for o in template.outputs)
        inst = TemplateInstance(
            kind=template.kind.value,
            template_id=template.id,
            inputs=inputs,
            outputs=outputs,
            authorized=template.authorized,
            params=(("slot", template.slot), ("template", template.id)),
        )
        self._cache[template_id] = inst
        return inst

    def __contains__(self, template_id: str) -> bool:
        return template_id in self.dag


# ── Stats ────────────────────────────────────────────────────


@dataclass(frozen=True)
class DagStats:
    template_count: int
    signature_count: int
    per_party_storage_bytes: int


def stats(dag: TemplateDag) -> DagStats:
    """Exact counts; per-party storage is the largest relevant-subgraph encoding."""
    per_party: dict[str, int] = {}
    signatures = 0
    for template in dag.templates():
        size = template_bytes(dag, template)
        signatures += len(template.signers)
        for party in template.signers:
            per_party[party] = per_party.get(party, 0) + size
    return DagStats(
        template_count=dag.node_count(),
        signature_count=signatures,
        per_party_storage_bytes=max(per_party.values(), default=0),
    )


# (inputs, outputs) of the 13 templates of one Phase 1 pairing
_PAIRING_SHAPES = [(2, 1), (3, 0), (3, 0), (1, 1), (1, 1), (1, 1), (1, 1), (2, 0), (2, 0), (2, 0), (2, 0), (2, 0), (2, 0)]
# (inputs, outputs) of the 18 templates of one Phase 2 slot, unwired next-Bob input dropped
_SLOT_SHAPES = [
    (1, 1), (2, 0), (2, 1), (1, 0),
    (1, 1), (1, 1), (1, 1), (1, 1),
    (1, 0), (2, 0), (2, 0), (2, 0), (1, 0), (1, 0),
    (2, 0), (2, 0), (3, 0), (3, 0),
]


def estimate_stats(n: int, challengers: int | None = None) -> DagStats:
    """Closed-form :func:`stats` of ``build_phase1(n)`` (plus Phase 2 with *challengers*).

    Sized for operator counts where building the DAG is impractical; equals
    the built figures exactly for default flags.
    """
    if n < 2:
        raise InvalidN(f"Phase 1 needs at least 2 operators, got {n}")
    depth = rounds_for(n)
    pairings = n * (n - 1) // 2
    selectors = sum(math.ceil(n / (1 << r)) for r in range(1, depth + 1))
    templates = 1 + n * (depth + 2) + len(_PAIRING_SHAPES) * pairings
    signatures = n + n * (depth + 2) + 2 * len(_PAIRING_SHAPES) * pairings

    per_pairing = sum(shape_bytes(i, o, 2) for i, o in _PAIRING_SHAPES)
    chain = shape_bytes(1, 2, 1) + shape_bytes(1, 0, 1) + (depth - 1) * shape_bytes(2, 2, 1) + shape_bytes(2, 1, 1)
    operator_bytes = shape_bytes(1, n + selectors, n) + chain + (n - 1) * per_pairing
    challenger_bytes = 0

    if challengers is not None:
        per_slot = sum(shape_bytes(i, o, 2) for i, o in _SLOT_SHAPES)
        shared = (
            shape_bytes(1, 3 + 2 * challengers, 1)
            + shape_bytes(1, 1, 1)
            + shape_bytes(2, 0, 1)
            + shape_bytes(2, 0, 1)
        )
        templates += n * (4 + len(_SLOT_SHAPES) * challengers)
        signatures += n * (4 + 2 * len(_SLOT_SHAPES) * challengers)
        operator_bytes += shared + challengers * per_slot
        challenger_bytes = n * per_slot if challengers else 0

    return DagStats(
        template_count=templates,
        signature_count=signatures,
        per_party_storage_bytes=max(operator_bytes, challenger_bytes),
    )


def what_if_opener_bonds(dag_stats: DagStats, n: int) -> DagStats:
    """Cost of opener-funded admission bonds: one DAG variant per possible opener."""
    return DagStats(
        template_count=dag_stats.template_count * n,
        signature_count=dag_stats.signature_count * n,
        per_party_storage_bytes=dag_stats.per_party_storage_bytes * n,
    )


def buffered_template_count(links: int, n: int) -> int:
    """Templates pre-created when every one of *links* TC links carries a full Phase 1 DAG."""
    return (links + 1) + links * estimate_stats(n).template_count
