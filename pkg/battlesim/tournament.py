"""Phase 1 engine: the single-elimination bracket played against the ledger.

Every broadcast goes through the ledger; dispute transactions are also
checked against the :mod:`battlesim.flex` state machine before they are
queued, which stands in for the verification script of the pre-signed
template. Confirmations are mirrored back into per-pairing
:class:`~battlesim.flex.FlexInstance` objects and into the capital book.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

import structlog

from battlesim import flex
from battlesim.dag import (
    ALICE_BOND,
    ALICE_INPUT,
    ALICE_WAS_DISABLED,
    ALICE_WINS,
    ASSERTER_TIMEOUT_BOND,
    ASSERTER_TIMEOUT_INPUT,
    BOB_BOND,
    BOB_CHALLENGE,
    BOB_INPUT,
    BOB_WINS,
    BOB_WAS_DISABLED,
    CHALLENGER_TIMEOUT_BOND,
    CHALLENGER_TIMEOUT_INPUT,
    DISPUTE_TIMEOUT,
    NO_BOB_CHALLENGE,
    ROUND_PERIODS,
    Deployment,
    InvalidN,
    InvalidParams,
    Match,
    Phase1Names,
    build_bracket,
    build_phase1,
    operator_ids,
    rounds_for,
)
from battlesim.disable import DisableBook, enforce_disable
from battlesim.economics import BondParams, CapitalTrace, InsufficientCapital, amic, unit_cost
from battlesim.flex import Avp, FlexEvent, FlexInputs, FlexInstance, FlexState, Move
from battlesim.graph import TemplateDag, TemplateKind, TxTemplate
from battlesim.ledger import Confirmation, Ledger, Output, funding_instance
from battlesim.strategy import Strategy, make_strategy

logger = structlog.get_logger()

TRUE_STATE = "state:correct"
MAX_PASSES = 16  # broadcast/settle rounds within one period
DISABLE_GUARDS = {BOB_CHALLENGE: BOB_WAS_DISABLED, NO_BOB_CHALLENGE: ALICE_WAS_DISABLED}

CASE_DISPUTE = "1-dispute"
CASE_CHALLENGE_STALLED = "1.1"
CASE_NO_CHALLENGE = "1.2a"
CASE_DUAL_ABSTENTION = "1.2b"
CASE_ALICE_ONLY = "2"
CASE_BOB_ONLY = "3"
CASE_NEITHER = "4"


# ── Shared dispute plumbing ──────────────────────────────────

# template step -> (flex event, side that moves; None for anyone)
STEP_MOVES: dict[str, tuple[FlexEvent, str | None]] = {
    BOB_CHALLENGE: (FlexEvent.BOB_CHALLENGE, flex.BOB),
    NO_BOB_CHALLENGE: (FlexEvent.NO_BOB_CHALLENGE, flex.ALICE),
    BOB_BOND: (FlexEvent.POST_BOND, flex.BOB),
    ALICE_BOND: (FlexEvent.POST_BOND, flex.ALICE),
    ALICE_INPUT: (FlexEvent.ALICE_INPUT, flex.ALICE),
    BOB_INPUT: (FlexEvent.BOB_INPUT, flex.BOB),
    ALICE_WINS: (FlexEvent.RESOLVE_BY_AVP, flex.ALICE),
    BOB_WINS: (FlexEvent.RESOLVE_BY_AVP, flex.BOB),
    ASSERTER_TIMEOUT_BOND: (FlexEvent.TIMEOUT, flex.BOB),
    ASSERTER_TIMEOUT_INPUT: (FlexEvent.TIMEOUT, flex.BOB),
    CHALLENGER_TIMEOUT_BOND: (FlexEvent.TIMEOUT, flex.ALICE),
    CHALLENGER_TIMEOUT_INPUT: (FlexEvent.TIMEOUT, flex.ALICE),
    DISPUTE_TIMEOUT: (FlexEvent.DISPUTE_TIMEOUT, None),
}

_STILL_OPEN_STAGE = {
    FlexState.BOB_BONDED: "bob_bonded",
    FlexState.BONDS_POSTED: "alice_bonded",
    FlexState.ALICE_INPUT: "alice_input",
    FlexState.INPUTS_PUBLISHED: "bob_input",
}


def dispute_id(template: TxTemplate) -> str:
    return template.id.rsplit("/", 1)[0]


def move_for_step(template: TxTemplate, by: str) -> Move | None:
    """The FLEX move a dispute template performs when *by* broadcasts it."""
    step = template.step or ""
    alice, bob = template.params.get("alice"), template.params.get("bob")
    if step.startswith("still_open_"):
        return Move(FlexEvent.STILL_OPEN, bob)
    spec = STEP_MOVES.get(step)
    if spec is None:
        return None
    event, side = spec
    party = by if side is None else (alice if side == flex.ALICE else bob)
    return Move(event, party)


def step_for_move(instance: FlexInstance, move: Move) -> str | None:
    """Inverse of :func:`move_for_step` for the instance's current state."""
    event, state = move.event, instance.state
    if event is FlexEvent.POST_BOND:
        return BOB_BOND if move.party == instance.bob else ALICE_BOND
    if event is FlexEvent.RESOLVE_BY_AVP:
        return ALICE_WINS if move.party == instance.alice else BOB_WINS
    if event is FlexEvent.TIMEOUT:
        return {
            FlexState.BOB_BONDED: ASSERTER_TIMEOUT_BOND,
            FlexState.BONDS_POSTED: ASSERTER_TIMEOUT_INPUT,
            FlexState.CHALLENGED: CHALLENGER_TIMEOUT_BOND,
            FlexState.ALICE_INPUT: CHALLENGER_TIMEOUT_INPUT,
        }.get(state)
    if event is FlexEvent.STILL_OPEN:
        stage = _STILL_OPEN_STAGE.get(state)
        return f"still_open_{stage}" if stage else None
    for step, (mapped, _) in STEP_MOVES.items():
        if mapped is event:
            return step
    return None


def book_dispute_step(
    capital: CapitalTrace, template: TxTemplate, dispute: str, alice_bond: int, bob_bond: int
) -> None:
    """Apply the capital effect of one confirmed dispute template."""
    a, b = template.params["alice"], template.params["bob"]
    step = template.step or ""
    if step == BOB_BOND:
        capital.lock_bond(b, dispute, bob_bond)
    elif step == ALICE_BOND:
        capital.lock_bond(a, dispute, alice_bond)
    elif step == ALICE_INPUT:
        capital.charge_publication(a)
    elif step == BOB_INPUT:
        capital.charge_publication(b)
    elif step in (ALICE_WINS, CHALLENGER_TIMEOUT_INPUT):
        capital.settle_dispute(dispute, a, b)
    elif step in (BOB_WINS, ASSERTER_TIMEOUT_INPUT, "still_open_alice_input", "still_open_bob_input"):
        capital.settle_dispute(dispute, b, a)
    elif step in (ASSERTER_TIMEOUT_BOND, CHALLENGER_TIMEOUT_BOND, DISPUTE_TIMEOUT) or step.startswith("still_open_"):
        capital.refund_bonds(dispute)


class VerdictView:
    """AVP verdicts of each operator's assertion, dispute by dispute."""

    def __init__(
        self,
        strategies: Mapping[str, Strategy],
        truths: Mapping[str, bool] | None = None,
        avp: Avp | None = None,
    ) -> None:
        self.strategies = strategies
        truths = truths or {}
        self.base = {
            x: TRUE_STATE if truths.get(x, s.honest) else f"state:forged:{x}" for x, s in strategies.items()
        }
        self.avp = avp or Avp.from_truths({TRUE_STATE: True})

    def assertion(self, party: str, dispute: str | None = None) -> str:
        return self.strategies[party].assertion(party, self.base[party], dispute)

    def verdict(self, party: str, dispute: str | None = None) -> int:
        return self.avp(self.assertion(party, dispute))


# ── Outcome ──────────────────────────────────────────────────


@dataclass(frozen=True)
class MatchCase:
    round: int
    index: int
    label: str
    outcome: str
    parties: tuple[str, ...] = ()

    def record(self) -> dict:
        return {
            "round": self.round,
            "match": self.index,
            "case": self.label,
            "outcome": self.outcome,
            "parties": list(self.parties),
        }


@dataclass
class Phase1Outcome:
    winner: str | None
    eliminated: dict[str, int]
    registered: list[str]
    makespan: int | None
    rounds: int
    started_at: int = 0
    trace: list[dict] = field(default_factory=list)
    cases: list[MatchCase] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    dispute_timeouts: dict[tuple[str, int], int] = field(default_factory=dict)
    blocked: list[str] = field(default_factory=list)
    disabled: list[str] = field(default_factory=list)
    flex_log: list[dict] = field(default_factory=list)
    capital: CapitalTrace | None = None
    bindings: dict = field(default_factory=dict)

    def case_labels(self) -> list[str]:
        return [c.label for c in self.cases]

    def record(self) -> dict:
        return {
            "winner": self.winner,
            "eliminated": dict(sorted(self.eliminated.items())),
            "registered": self.registered,
            "makespan": self.makespan,
            "rounds": self.rounds,
            "started_at": self.started_at,
            "cases": [c.record() for c in self.cases],
            "violations": self.violations,
            "dispute_timeouts": {f"{p}:r{r}": n for (p, r), n in sorted(self.dispute_timeouts.items())},
            "blocked": self.blocked,
            "disabled": self.disabled,
        }


# ── Engine ───────────────────────────────────────────────────


class Phase1Engine:
    """Drives one Phase 1 bracket period by period until WinPhase1 matures."""

    def __init__(
        self,
        dag: TemplateDag,
        strategies: Mapping[str, Strategy | str],
        ledger: Ledger,
        *,
        truths: Mapping[str, bool] | None = None,
        avp: Avp | None = None,
        params: BondParams | None = None,
        watchtowers: int = 0,
        reorder_seed: int | None = None,
        capital: CapitalTrace | None = None,
        bindings: Mapping | None = None,
        opener: str | None = None,
        disable: DisableBook | None = None,
    ) -> None:
        meta = dag.metadata
        if "operators" not in meta:
            raise InvalidParams("not a Phase 1 DAG: operator count missing from metadata")
        self.dag = dag
        self.ledger = ledger
        self.slot = meta.get("slot", "L1")
        self.names = Phase1Names(self.slot)
        self.prefix = self.names.kickoff.rsplit("/", 1)[0] + "/"
        self.operators = operator_ids(meta["operators"])
        self.bracket = build_bracket(self.operators)
        self.depth = self.bracket.depth
        self.strategies = {x: make_strategy(strategies.get(x, "abstain")) for x in self.operators}
        self.watchtowers = [f"T{i}" for i in range(1, watchtowers + 1)]
        self.view = VerdictView(self.strategies, truths, avp)
        self.params = params or BondParams()
        self.capital = capital or CapitalTrace(self.params)
        self.deployment = Deployment(dag, dict(bindings or {}))
        self.opener = opener or self.operators[0]
        self.instances: dict[str, FlexInstance] = {}
        self.rng = random.Random(reorder_seed) if reorder_seed is not None else None
        self.disable = disable
        self.blocked: list[str] = []
        self.violations: list[str] = []
        self.dispute_timeouts: Counter[tuple[str, int]] = Counter()
        self.t0 = ledger.now
        self._first_record = len(ledger.confirmed)
        self._queued = 0
        self._parties = set(self.operators) | set(self.watchtowers)
        ledger.on_confirm(self._on_confirm)

    # ── Ledger views ──────────────────────────────────────────

    def _live(self, role: str) -> bool:
        return self.ledger.is_live(self.deployment.outpoint(role))

    def _done(self, template_id: str) -> bool:
        return self.ledger.is_confirmed(self.deployment.instance(template_id).tx_id)

    def _dispute(self, r: int, alice: str, bob: str) -> str:
        return self.names.pairing(r, alice, bob, "").rstrip("/")

    def _current_round(self, x: str) -> int | None:
        for r in range(self.depth, 0, -1):
            if self._done(self.names.enable(x, r)):
                return r if self._live(self.names.next_enabler(x, r)) else None
        return None

    # ── Confirmation listener ────────────────────────────────

    def _on_confirm(self, confirmation: Confirmation) -> None:
        tid = confirmation.tx.template_id
        if not tid.startswith(self.prefix) or tid not in self.dag:
            return
        template = self.dag.get(tid)
        self.capital.at(confirmation.period)
        if confirmation.by in self._parties:
            self.capital.charge_fee(confirmation.by)
        if template.step:
            self._mirror(template, confirmation)
        if template.kind in (TemplateKind.REGISTRATION_PHASE1, TemplateKind.ENABLE_ROUND):
            self._open_pairings(template.params["party"], int(template.params["round"]), confirmation.period)

    def _open_pairings(self, x: str, r: int, period: int) -> None:
        names = self.names
        for y in self.bracket.opponents(x, r):
            if not self._live(names.challenge_enabler(y, r)):
                continue
            a, b = (x, y) if self.bracket.is_alice(x, r) else (y, x)
            dispute = self._dispute(r, a, b)
            self.instances[dispute] = FlexInstance(
                id=dispute,
                alice=a,
                bob=b,
                inputs=FlexInputs(
                    alice_can_win=names.next_enabler(a, r),
                    bob_enabler=names.challenge_enabler(b, r),
                    alice_enabler=names.challenge_enabler(a, r),
                    next_bob=names.next_enabler(b, r),
                ),
                verdict=self.view.verdict(a, dispute),
                opened_at=period,
                match_deadline=self.t0 + ROUND_PERIODS * r,
                bonds=self.params,
            )
            logger.debug("pairing_opened", dispute=dispute, period=period)

    def _mirror(self, template: TxTemplate, confirmation: Confirmation) -> None:
        dispute = dispute_id(template)
        inst = self.instances.get(dispute)
        move = move_for_step(template, confirmation.by)
        if inst is None or move is None:
            return
        try:
            self.instances[dispute] = flex.step(inst, move, confirmation.period)
        except (flex.IllegalTransition, flex.DeadlineExceeded) as e:
            self.violations.append(f"{template.id}: {e}")
            logger.warning("flex_mirror_rejected", template=template.id, error=str(e))
            return
        self._reveal_loss(self.instances[dispute])
        try:
            book_dispute_step(self.capital, template, dispute, self.params.aosb, self.params.aosb)
        except InsufficientCapital as e:
            self.violations.append(f"{template.id}: {e}")

    # ── Disable secrets ───────────────────────────────────────

    def _reveal_loss(self, inst: FlexInstance) -> None:
        if self.disable is not None and self.disable.on_resolved(inst):
            logger.info("operator_disabled", party=inst.loser, dispute=inst.id)

    def _guarded(self, template: TxTemplate, actor: str) -> bool:
        """A disabled operator's opening move, to be front-run by its WasDisabled transaction."""
        if self.disable is None or not self.disable.registry.is_disabled(actor):
            return False
        guard = DISABLE_GUARDS.get(template.step or "")
        return guard is not None and f"{dispute_id(template)}/{guard}" in self.dag

    # ── Broadcasting ──────────────────────────────────────────

    def _dispute_allows(self, template: TxTemplate, actor: str) -> bool:
        inst = self.instances.get(dispute_id(template))
        move = move_for_step(template, actor)
        if inst is None or move is None:
            return False
        if move.event is not FlexEvent.DISPUTE_TIMEOUT and move.party != actor:
            return False
        try:
            flex.step(inst, move, self.ledger.now)
        except (flex.IllegalTransition, flex.DeadlineExceeded):
            return False
        if template.step in (BOB_BOND, ALICE_BOND):
            return self.capital.can_afford(actor, self.params.aosb)
        return True

    def _try(self, template_id: str, actor: str, *, front_run: bool = False) -> bool:
        tx = self.deployment.instance(template_id)
        status = self.ledger.check(tx, actor)
        if status == "conflict" and front_run and self.ledger.is_mature(tx):
            status = None
        if status is not None:
            return False
        template = self.dag.get(template_id)
        if template.step and not self._dispute_allows(template, actor):
            return False
        if self._guarded(template, actor):
            enforce_disable(self.ledger, self.deployment, self.disable.registry, template_id, actor, settle=False)
            self.blocked.append(template_id)
            self._queued += 1
            return True
        self.ledger.broadcast(tx, actor, front_run=front_run)
        self._queued += 1
        return True

    # ── Operator behaviour ───────────────────────────────────

    def _act(self, x: str) -> None:
        s = self.strategies[x]
        now = self.ledger.now
        if now >= self.t0 + s.register_delay() and s.registers(self.view, x):
            self._try(self.names.registration(x), x)
        r = self._current_round(x)
        if r is None:
            return
        self._play(x, s, r)
        self._advance(x, s, r)
        if s.duties(x):
            self._duties(x, r)

    def _play(self, x: str, s: Strategy, r: int) -> None:
        alice_side = self.bracket.is_alice(x, r)
        for y in self.bracket.opponents(x, r):
            a, b = (x, y) if alice_side else (y, x)
            inst = self.instances.get(self._dispute(r, a, b))
            if inst is None or inst.is_terminal:
                continue
            for move in self._decide(x, s, inst, r, alice_side):
                step = step_for_move(inst, move)
                if step and self._try(self.names.pairing(r, a, b, step), x):
                    break

    def _decide(self, x: str, s: Strategy, inst: FlexInstance, r: int, alice_side: bool) -> list[Move]:
        now = self.ledger.now
        if inst.state is FlexState.DORMANT:
            if alice_side:
                if s.moves(x, r) and now >= inst.opened_at + 1:
                    return [Move(FlexEvent.NO_BOB_CHALLENGE, x)]
                return []
            if s.challenges(self.view, x, inst.alice, inst.id, r):
                return [Move(FlexEvent.BOB_CHALLENGE, x)]
            return []
        if not s.moves(x, r):
            return []
        return flex.honest_policy(flex.ALICE if alice_side else flex.BOB)(inst, now)

    def _advance(self, x: str, s: Strategy, r: int) -> None:
        names = self.names
        if self.ledger.now < self.t0 + ROUND_PERIODS * r:
            return
        if s.honest and any(self._live(names.next_enabler(y, r)) for y in self.bracket.opponents(x, r)):
            return
        if r == self.depth:
            self._try(names.win(x), x)
        elif s.enables(x, r + 1):
            self._try(names.enable(x, r + 1), x)

    def _duties(self, x: str, r: int) -> None:
        now = self.ledger.now
        if r == 1 and now >= self.t0 + 1:
            for y in self.bracket.opponents(x, 1):
                self._try(self.names.no_assertion(y), x, front_run=True)
        for rr in range(1, r + 1):
            sibling = self.bracket.sibling(rr, self.bracket.match_index(x, rr))
            if sibling is None:
                continue
            if now >= self.t0 + ROUND_PERIODS * rr:
                self._cut_stall(x, sibling)
            if now >= self.t0 + ROUND_PERIODS * rr + 1:
                self._liveness(x, sibling)

    def _watch(self, w: str) -> None:
        now = self.ledger.now
        if now >= self.t0 + 1:
            for y in self.operators:
                self._try(self.names.no_assertion(y), w, front_run=True)
        for rnd in self.bracket.rounds:
            for match in rnd:
                if now >= self.t0 + ROUND_PERIODS * match.round:
                    self._cut_stall(w, match)
                if now >= self.t0 + ROUND_PERIODS * match.round + 1:
                    self._liveness(w, match)

    def _cut_stall(self, actor: str, match: Match) -> None:
        """DisputeTimeout for a match whose two enabled sides both stopped moving."""
        r = match.round
        for a, b in match.pairings:
            if not (self._live(self.names.next_enabler(a, r)) and self._live(self.names.next_enabler(b, r))):
                continue
            if self._try(self.names.pairing(r, a, b, DISPUTE_TIMEOUT), actor, front_run=True):
                self.dispute_timeouts[(actor, r)] += 1
                logger.debug("stall_cut", actor=actor, round=r, alice=a, bob=b)
            return

    def _liveness(self, actor: str, match: Match) -> None:
        r = match.round
        if r >= self.depth:
            return
        live = [z for z in match.participants if self._live(self.names.next_enabler(z, r))]
        if len(live) == 1:
            self._try(self.names.enable(live[0], r + 1), actor)

    # ── Main loop ─────────────────────────────────────────────

    def _kickoff(self) -> None:
        kickoff = self.dag.get(self.names.kickoff)
        funding_role = kickoff.inputs[0].role
        if funding_role not in self.deployment.bindings:
            funding = funding_instance(f"{self.slot}/phase1-funding", [Output(funding_role)])
            self.ledger.fund(funding)
            self.deployment.bind(funding_role, funding.outpoint(0))
        self.capital.at(self.t0)
        for x in self.operators:
            if not self.capital.account(x).funded:
                self.capital.fund(x, amic(self.params) * (self.depth + 1))
        everyone = self.operators + self.watchtowers
        for x in self.operators:
            self.strategies[x].setup(self.ledger, x, everyone)
        self.ledger.broadcast(self.deployment.instance(self.names.kickoff), self.opener)
        self.ledger.settle()

    def _period(self) -> None:
        for _ in range(MAX_PASSES):
            self._queued = 0
            for x in self.operators:
                self._act(x)
            for w in self.watchtowers:
                self._watch(w)
            if not self._queued:
                return
            if self.rng is not None:
                order = list(range(len(self.ledger.reorderable())))
                self.rng.shuffle(order)
                self.ledger.permute_pending(order)
            self.ledger.settle()

    def run(self) -> Phase1Outcome:
        self._kickoff()
        horizon = self.t0 + ROUND_PERIODS * self.depth + 1
        while True:
            self._period()
            if self.ledger.now >= horizon:
                break
            self.ledger.advance(1)
        outcome = self._outcome()
        logger.info(
            "phase1_finished",
            slot=self.slot,
            winner=outcome.winner,
            makespan=outcome.makespan,
            violations=len(outcome.violations),
        )
        return outcome

    # ── Outcome ───────────────────────────────────────────────

    def _eliminations(self) -> dict[str, int]:
        names = self.names
        eliminated: dict[str, int] = {}
        for x in self.operators:
            if not self._done(names.registration(x)):
                continue
            for r in range(1, self.depth + 1):
                op = self.deployment.outpoint(names.next_enabler(x, r))
                spender = self.ledger.spender_of(op)
                advance = names.win(x) if r == self.depth else names.enable(x, r + 1)
                if spender != self.deployment.instance(advance).tx_id:
                    eliminated[x] = r
                    break
        return eliminated

    def _soundness(self, eliminated: dict[str, int], records: list[Confirmation]) -> list[str]:
        found: list[str] = []
        wins = [c for c in records if c.tx.kind == TemplateKind.WIN_PHASE1.value]
        if len(wins) > 1:
            found.append(f"{len(wins)} WinPhase1 transactions confirmed")
        for c in records:
            tid = c.tx.template_id
            if tid not in self.dag or not tid.startswith(self.prefix):
                continue
            template = self.dag.get(tid)
            involved = {template.params.get(k) for k in ("party", "alice", "bob")}
            later = int(template.params.get("round", 0) or 0)
            for x, r in eliminated.items():
                if x not in involved:
                    continue
                if later > r or template.kind is TemplateKind.WIN_PHASE1:
                    found.append(f"eliminated operator {x} (round {r}) confirmed {tid}")
        return found

    def _classify(self) -> list[MatchCase]:
        names, cases = self.names, []
        for rnd in self.bracket.rounds:
            for m in rnd:
                r = m.round
                left = [x for x in m.left if self._done(names.enable(x, r))]
                right = [x for x in m.right if self._done(names.enable(x, r))]
                if left and right:
                    dispute = self._dispute(r, left[0], right[0])
                    if self._guard_fired(dispute, ALICE_WAS_DISABLED):
                        left = []
                    if self._guard_fired(dispute, BOB_WAS_DISABLED):
                        right = []
                if left and right:
                    inst = self.instances.get(self._dispute(r, left[0], right[0]))
                    label, outcome = self._dispute_case(inst)
                elif left:
                    label, outcome = CASE_ALICE_ONLY, "walkover"
                elif right:
                    label, outcome = CASE_BOB_ONLY, "walkover"
                else:
                    label, outcome = CASE_NEITHER, "no action"
                cases.append(MatchCase(r, m.index, label, outcome, tuple(left + right)))
        return cases

    def _guard_fired(self, dispute: str, guard: str) -> bool:
        tid = f"{dispute}/{guard}"
        return tid in self.dag and self._done(tid)

    @staticmethod
    def _dispute_case(inst: FlexInstance | None) -> tuple[str, str]:
        if inst is None:
            return CASE_DUAL_ABSTENTION, "unresolved"
        challenged = any(e["event"] == FlexEvent.BOB_CHALLENGE.value for e in inst.log)
        if challenged:
            if inst.state is FlexState.TIMED_OUT_CUT:
                return CASE_CHALLENGE_STALLED, "dual cut"
            return CASE_DISPUTE, "advance" if inst.is_terminal else "unresolved"
        if inst.state is FlexState.CANCELLED:
            return CASE_NO_CHALLENGE, "advance"
        if inst.state is FlexState.TIMED_OUT_CUT:
            return CASE_DUAL_ABSTENTION, "dual cut"
        return CASE_DUAL_ABSTENTION, "unresolved"

    def _outcome(self) -> Phase1Outcome:
        records = self.ledger.confirmed[self._first_record :]
        winners = [x for x in self.operators if self._done(self.names.win(x))]
        winner = winners[0] if winners else None
        makespan = None
        if winner is not None:
            makespan = self.ledger.confirmed_at(self.deployment.instance(self.names.win(winner)).tx_id) - self.t0
        eliminated = self._eliminations()
        self.violations.extend(self._soundness(eliminated, records))
        for v in self.violations:
            logger.warning("phase1_violation", detail=v)
        flex_log = [entry for inst in self.instances.values() for entry in inst.log]
        flex_log.sort(key=lambda e: (e["period"], e["instance"]))
        return Phase1Outcome(
            winner=winner,
            eliminated=eliminated,
            registered=[x for x in self.operators if self._done(self.names.registration(x))],
            makespan=makespan,
            rounds=self.depth,
            started_at=self.t0,
            trace=[c.record() for c in records],
            cases=self._classify(),
            violations=list(self.violations),
            dispute_timeouts=dict(self.dispute_timeouts),
            blocked=list(self.blocked),
            disabled=self.disable.disabled() if self.disable is not None else [],
            flex_log=flex_log,
            capital=self.capital.close(),
            bindings=dict(self.deployment.bindings),
        )


def run_phase1(
    dag: TemplateDag,
    strategies: Mapping[str, Strategy | str],
    ledger: Ledger | None = None,
    **options,
) -> Phase1Outcome:
    """Play the Phase 1 bracket of *dag* to completion on *ledger*.

    Operators without a strategy abstain. ``options`` are passed to
    :class:`Phase1Engine` (truths, params, watchtowers, reorder_seed, ...).
    """
    return Phase1Engine(dag, strategies, ledger or Ledger(), **options).run()


# ── Parallel brackets ────────────────────────────────────────


def _abstract_match(
    a: str | None, b: str | None, view: VerdictView, strategies: Mapping[str, Strategy], r: int
) -> tuple[str | None, str]:
    """Winner and case label of one match played by policy alone; *a* defends."""
    if a is None and b is None:
        return None, CASE_NEITHER
    if b is None:
        return a, CASE_ALICE_ONLY
    if a is None:
        return b, CASE_BOB_ONLY
    dispute = f"r{r}/{a}v{b}"
    if strategies[b].challenges(view, b, a, dispute, r):
        favoured = a if view.verdict(a, dispute) else b
        other = b if favoured == a else a
        if strategies[favoured].moves(favoured, r):
            return favoured, CASE_DISPUTE
        if strategies[other].moves(other, r):
            return other, CASE_DISPUTE
        return None, CASE_CHALLENGE_STALLED
    if strategies[a].moves(a, r):
        return a, CASE_NO_CHALLENGE
    return None, CASE_DUAL_ABSTENTION


def run_parallel_brackets(
    n: int,
    q: int,
    strategies: Mapping[str, Strategy | str],
    *,
    truths: Mapping[str, bool] | None = None,
    params: BondParams | None = None,
    capital: int | None = None,
) -> Phase1Outcome:
    """Phase 1 with every party playing up to *q* disputes at once.

    The first wall-clock round settles groups of 2q bracket positions, after
    which the bracket halves once per round, for ``rounds - log2(q)`` rounds.
    The result is computed at bracket level without a ledger; ``q == 1``
    falls back to the ordinary ledger-level bracket.
    """
    if n < 2:
        raise InvalidN(f"Phase 1 needs at least 2 operators, got {n}")
    if q < 1 or q & (q - 1):
        raise InvalidParams(f"bracket count must be a power of two, got {q}")
    depth = rounds_for(n)
    shift = q.bit_length() - 1
    if shift >= depth:
        raise InvalidParams(f"{q} parallel brackets leave no rounds for {n} operators")
    params = params or BondParams()
    if capital is not None and capital < q * unit_cost(params) + params.fee:
        raise InsufficientCapital(f"capital {capital} cannot fund {q} concurrent disputes")
    if q == 1:
        return run_phase1(build_phase1(n), strategies, truths=truths, params=params)

    ops = operator_ids(n)
    resolved = {x: make_strategy(strategies.get(x, "abstain")) for x in ops}
    view = VerdictView(resolved, truths)
    registered = [x for x in ops if resolved[x].registers(view, x)]
    slots: list[str | None] = [x if x in registered else None for x in ops]
    slots += [None] * ((1 << depth) - n)

    cases: list[MatchCase] = []
    eliminated: dict[str, int] = {}
    wall_rounds = depth - shift
    bracket_round = 0
    for wall in range(1, wall_rounds + 1):
        levels = shift + 1 if wall == 1 else 1
        for _ in range(levels):
            bracket_round += 1
            survivors: list[str | None] = []
            for i in range(0, len(slots), 2):
                a, b = slots[i], slots[i + 1]
                winner, label = _abstract_match(a, b, view, resolved, bracket_round)
                if label in (CASE_ALICE_ONLY, CASE_BOB_ONLY):
                    result = "walkover"
                elif label == CASE_NEITHER:
                    result = "no action"
                else:
                    result = "advance" if winner else "dual cut"
                cases.append(MatchCase(wall, i // 2, label, result, tuple(p for p in (a, b) if p)))
                for p in (a, b):
                    if p is not None and p != winner:
                        eliminated[p] = wall
                survivors.append(winner)
            slots = survivors
    winner = slots[0]
    outcome = Phase1Outcome(
        winner=winner,
        eliminated=eliminated,
        registered=registered,
        makespan=ROUND_PERIODS * wall_rounds if winner else None,
        rounds=wall_rounds,
        cases=cases,
    )
    logger.info("parallel_brackets_finished", n=n, q=q, winner=winner, rounds=wall_rounds)
    return outcome
