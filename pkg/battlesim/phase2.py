"""Phase 2 engine: the surviving assertion against registered challengers."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping

import structlog

from battlesim import flex
from battlesim.dag import ALICE_BOND, BOB_CHALLENGE, NO_BOB_CHALLENGE, Deployment, InvalidParams, Phase2Names
from battlesim.disable import DisableBook
from battlesim.economics import (
    BondParams,
    CapitalTrace,
    InsufficientCapital,
    Phase2Schedule,
    amic,
    challenger_unit_cost,
)
from battlesim.flex import Avp, FlexEvent, FlexInputs, FlexInstance, FlexState, Move
from battlesim.graph import TemplateDag, TemplateKind, TxTemplate
from battlesim.ledger import Confirmation, Ledger, Output, PERIODS_PER_EPOCH, funding_instance
from battlesim.strategy import Strategy, make_strategy
from battlesim.tournament import MAX_PASSES, VerdictView, book_dispute_step, dispute_id, move_for_step, step_for_move

logger = structlog.get_logger()

_OPEN_INPUT_STAGES = (FlexState.ALICE_INPUT, FlexState.INPUTS_PUBLISHED)


@dataclass
class Phase2Outcome:
    asserter: str
    refunded: bool
    refund_kind: str | None
    rounds_used: int
    started_at: int
    finished_at: int | None
    disputes: list[dict] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    peak: int = 0
    violations: list[str] = field(default_factory=list)
    disabled: list[str] = field(default_factory=list)
    capital: CapitalTrace | None = None

    def record(self) -> dict:
        return {
            "asserter": self.asserter,
            "refunded": self.refunded,
            "refund_kind": self.refund_kind,
            "rounds_used": self.rounds_used,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "disputes": self.disputes,
            "peak": self.peak,
            "violations": self.violations,
            "disabled": self.disabled,
        }


class Phase2Engine:
    def __init__(
        self,
        dag: TemplateDag,
        asserter: str,
        challengers: Mapping[str, Strategy | str],
        schedule: Phase2Schedule | None,
        avp: Avp | None,
        ledger: Ledger,
        *,
        truth: bool = True,
        asserter_strategy: Strategy | str = "honest",
        params: BondParams | None = None,
        capital: CapitalTrace | None = None,
        bindings: Mapping | None = None,
        skip_cancellations: bool = False,
        premature_refund: bool = False,
        fronted: int = 0,
        reorder_seed: int | None = None,
        disable: DisableBook | None = None,
    ) -> None:
        meta = dag.metadata
        if "slot_owners" not in meta:
            raise InvalidParams("not a Phase 2 DAG: slot owners missing from metadata")
        self.dag = dag
        self.ledger = ledger
        self.asserter = asserter
        self.slot = meta.get("slot", "L1")
        self.names = Phase2Names(self.slot, asserter)
        if self.names.start not in dag:
            raise InvalidParams(f"no Phase 2 template for asserter {asserter!r}")
        self.prefix = self.names.start.rsplit("/", 1)[0] + "/"
        self.owners: list[str] = list(meta["slot_owners"])
        self.delays: list[int] = list(meta["slot_delays"])
        self.schedule = schedule or Phase2Schedule()
        self.params = params or BondParams()
        self.capital = capital or CapitalTrace(self.params)
        self.deployment = Deployment(dag, dict(bindings or {}))
        self.skip_cancellations = skip_cancellations
        self.premature_refund = premature_refund
        self.fronted = fronted
        self.rng = random.Random(reorder_seed) if reorder_seed is not None else None
        self.disable = disable

        strategies: dict[str, Strategy] = {w: make_strategy(s) for w, s in challengers.items()}
        for owner in self.owners:
            strategies.setdefault(owner, make_strategy("abstain"))
        strategies[asserter] = make_strategy(asserter_strategy)
        self.strategies = strategies
        self.challengers = sorted(set(self.owners))
        self.slots_of: dict[str, list[int]] = {}
        for j, owner in enumerate(self.owners):
            self.slots_of.setdefault(owner, []).append(j)
        self.view = VerdictView(strategies, {asserter: truth}, avp)

        self.instances: dict[int, FlexInstance] = {}
        self.violations: list[str] = []
        self.t0 = ledger.now
        self._first_record = len(ledger.confirmed)
        self._queued = 0
        self._refund_kind: str | None = None
        self._finished_at: int | None = None
        ledger.on_confirm(self._on_confirm)

    # ── Views ─────────────────────────────────────────────────

    def _live(self, role: str) -> bool:
        return self.ledger.is_live(self.deployment.outpoint(role))

    def _done(self, template_id: str) -> bool:
        return self.ledger.is_confirmed(self.deployment.instance(template_id).tx_id)

    def _pending(self, template_id: str) -> bool:
        return self.ledger.is_pending(self.deployment.instance(template_id).tx_id)

    def _dispute(self, j: int) -> str:
        return self.names.slot_step(j, "").rstrip("/")

    def _closed(self, j: int) -> bool:
        inst = self.instances.get(j)
        if inst is None:
            return False
        if inst.is_terminal:
            return True
        return inst.state is FlexState.DORMANT and not self._live(self.names.bob_enabler(j))

    # ── Listener ──────────────────────────────────────────────

    def _on_confirm(self, confirmation: Confirmation) -> None:
        tid = confirmation.tx.template_id
        if not tid.startswith(self.prefix) or tid not in self.dag:
            return
        template = self.dag.get(tid)
        period = confirmation.period
        self.capital.at(period)
        if confirmation.by in self.strategies:
            self.capital.charge_fee(confirmation.by)
        if template.kind is TemplateKind.START_TOURNAMENT:
            self._open_slots(period)
        elif template.kind in (TemplateKind.EARLY_REFUND, TemplateKind.REFUND):
            self._refund_kind = "early" if template.kind is TemplateKind.EARLY_REFUND else "timeout"
            self._finished_at = period
            if self.fronted:
                self.capital.reimburse(self.asserter)
        elif template.step:
            self._mirror(template, confirmation)

    def _open_slots(self, period: int) -> None:
        names = self.names
        for j, owner in enumerate(self.owners):
            dispute = self._dispute(j)
            self.instances[j] = FlexInstance(
                id=dispute,
                alice=self.asserter,
                bob=owner,
                inputs=FlexInputs(
                    alice_can_win=names.reimburse_enabler,
                    bob_enabler=names.bob_enabler(j),
                    alice_enabler=names.reg_slot(j),
                    alice_tries_early=names.reimbursement_tried,
                ),
                verdict=self.view.verdict(self.asserter, dispute),
                delay_a=self.delays[j],
                delay_b=0,
                opened_at=period,
                bonds=self.params,
                alice_bond=self.params.aosb,
                bob_bond=self.params.challenger_aosb,
            )

    def _mirror(self, template: TxTemplate, confirmation: Confirmation) -> None:
        move = move_for_step(template, confirmation.by)
        if move is None:
            return
        j = int(template.params["position"])
        try:
            self.instances[j] = flex.step(self.instances[j], move, confirmation.period)
        except (KeyError, flex.IllegalTransition, flex.DeadlineExceeded) as e:
            self.violations.append(f"{template.id}: {e}")
            logger.warning("flex_mirror_rejected", template=template.id, error=str(e))
            return
        if self.disable is not None and self.disable.on_resolved(self.instances[j]):
            logger.info("operator_disabled", party=self.instances[j].loser, dispute=self.instances[j].id)
        try:
            book_dispute_step(
                self.capital, template, dispute_id(template), self.params.aosb, self.params.challenger_aosb
            )
        except InsufficientCapital as e:
            self.violations.append(f"{template.id}: {e}")

    # ── Broadcasting ──────────────────────────────────────────

    def _try(self, template_id: str, actor: str, *, front_run: bool = False) -> bool:
        tx = self.deployment.instance(template_id)
        status = self.ledger.check(tx, actor)
        if status == "conflict" and front_run and self.ledger.is_mature(tx):
            status = None
        if status is not None:
            return False
        template = self.dag.get(template_id)
        move = move_for_step(template, actor) if template.step else None
        if move is not None:
            j = int(template.params["position"])
            inst = self.instances.get(j)
            if inst is None or move.party != actor:
                return False
            try:
                flex.step(inst, move, self.ledger.now)
            except (flex.IllegalTransition, flex.DeadlineExceeded):
                return False
            if template.step == BOB_CHALLENGE or template.step == "bob_bond":
                if not self.capital.can_afford(actor, self.params.challenger_aosb):
                    return False
            if template.step == ALICE_BOND and not self.capital.can_afford(actor, self.params.aosb):
                return False
        self.ledger.broadcast(tx, actor, front_run=front_run)
        self._queued += 1
        return True

    # ── Challengers ───────────────────────────────────────────

    def _challenger(self, w: str) -> None:
        s = self.strategies[w]
        now = self.ledger.now
        tried = self._live(self.names.reimbursement_tried) if self._started() else False
        for j in self.slots_of.get(w, ()):
            if j not in self.instances:
                continue
            inst = self.instances[j]
            round_no = self.delays[j] + 1
            if inst.is_terminal:
                continue
            dispute = self._dispute(j)
            if inst.state is FlexState.DORMANT:
                if not s.challenges(self.view, w, self.asserter, dispute, round_no):
                    continue
                if now >= self.t0 + s.register_delay():
                    self._try(self.names.slot_step(j, "reg_in"), w)
                self._try(self.names.slot_step(j, BOB_CHALLENGE), w)
                continue
            if not s.moves(w, round_no):
                continue
            if tried:
                step = step_for_move(inst, Move(FlexEvent.STILL_OPEN, w))
                if step and self._try(self.names.slot_step(j, step), w):
                    continue
            for move in flex.honest_policy(flex.BOB)(inst, now):
                step = step_for_move(inst, move)
                if step and self._try(self.names.slot_step(j, step), w):
                    break

    # ── Asserter ──────────────────────────────────────────────

    def _started(self) -> bool:
        return self._done(self.names.start)

    def _asserter(self) -> None:
        x, names = self.asserter, self.names
        s = self.strategies[x]
        now = self.ledger.now
        if not self._started():
            return
        for j in range(len(self.owners)):
            inst = self.instances.get(j)
            if inst is None or inst.is_terminal:
                continue
            round_no = self.delays[j] + 1
            if not s.moves(x, round_no):
                continue
            if names.slot_step(j, "exclude_loser") in self.dag and self._done(names.slot_step(j, "reg_in")):
                self._try(names.slot_step(j, "exclude_loser"), x, front_run=True)
            if inst.state is FlexState.DORMANT:
                if self.skip_cancellations or now < inst.opened_at + 1:
                    continue
                if self._pending(names.slot_step(j, "reg_in")):
                    self._try(names.slot_step(j, "reg_timeout"), x, front_run=True)
                else:
                    self._try(names.slot_step(j, NO_BOB_CHALLENGE), x)
                continue
            if inst.state is FlexState.BOB_BONDED:
                if now >= inst.since + PERIODS_PER_EPOCH * inst.delay_a:
                    self._try(names.slot_step(j, ALICE_BOND), x)
                continue
            for move in flex.honest_policy(flex.ALICE)(inst, now):
                step = step_for_move(inst, move)
                if step and self._try(names.slot_step(j, step), x):
                    break
        self._refund(now)

    def _refund(self, now: int) -> None:
        x, names = self.asserter, self.names
        if self._done(names.try_early_refund):
            self._try(names.early_refund, x)
        else:
            premature = self.premature_refund and any(
                inst.state in _OPEN_INPUT_STAGES for inst in self.instances.values()
            )
            if premature or all(self._closed(j) for j in range(len(self.owners))):
                self._try(names.try_early_refund, x)
        self._try(names.refund, x)

    # ── Main loop ─────────────────────────────────────────────

    def _start(self) -> None:
        start = self.dag.get(self.names.start)
        activation = start.inputs[0].role
        if self.dag.is_external(activation) and activation not in self.deployment.bindings:
            funding = funding_instance(f"{self.slot}/{self.asserter}/activation", [Output(activation)])
            self.ledger.fund(funding)
            self.deployment.bind(activation, funding.outpoint(0))
        self.capital.at(self.t0)
        if not self.capital.account(self.asserter).funded:
            self.capital.fund(self.asserter, amic(self.params))
        for w in self.challengers:
            if not self.capital.account(w).funded:
                self.capital.fund(w, challenger_unit_cost(self.params))
        if self.fronted:
            self.capital.front(self.asserter, self.fronted)
        self.ledger.broadcast(self.deployment.instance(self.names.start), self.asserter)
        self.ledger.settle()

    def _period(self) -> None:
        for _ in range(MAX_PASSES):
            self._queued = 0
            for w in self.challengers:
                self._challenger(w)
            self._asserter()
            if not self._queued:
                return
            if self.rng is not None:
                order = list(range(len(self.ledger.reorderable())))
                self.rng.shuffle(order)
                self.ledger.permute_pending(order)
            self.ledger.settle()

    def run(self) -> Phase2Outcome:
        self._start()
        horizon = self.t0 + int(self.dag.metadata["refund_timelock"]) + 1
        while True:
            self._period()
            if self._finished_at is not None or self.ledger.now >= horizon:
                break
            self.ledger.advance(1)
        outcome = self._outcome()
        logger.info(
            "phase2_finished",
            asserter=self.asserter,
            refunded=outcome.refunded,
            refund_kind=outcome.refund_kind,
            rounds=outcome.rounds_used,
        )
        return outcome

    def _outcome(self) -> Phase2Outcome:
        records = self.ledger.confirmed[self._first_record :]
        disputes = []
        challenged_rounds = []
        for j, owner in enumerate(self.owners):
            inst = self.instances.get(j)
            challenged = inst is not None and any(e["event"] == FlexEvent.BOB_CHALLENGE.value for e in inst.log)
            if challenged:
                challenged_rounds.append(self.delays[j] + 1)
            disputes.append(
                {
                    "slot": j,
                    "challenger": owner,
                    "round": self.delays[j] + 1,
                    "challenged": challenged,
                    "state": inst.state.value if inst else None,
                    "winner": inst.winner if inst else None,
                }
            )
        capital = self.capital.close()
        return Phase2Outcome(
            asserter=self.asserter,
            refunded=self._refund_kind is not None,
            refund_kind=self._refund_kind,
            rounds_used=max(challenged_rounds, default=0),
            started_at=self.t0,
            finished_at=self._finished_at,
            disputes=disputes,
            trace=[c.record() for c in records],
            peak=capital.peak_capital(self.asserter),
            violations=list(self.violations),
            disabled=self.disable.disabled() if self.disable is not None else [],
            capital=capital,
        )


def run_phase2(
    dag: TemplateDag,
    asserter: str,
    challengers: Mapping[str, Strategy | str],
    schedule: Phase2Schedule | None = None,
    avp: Avp | None = None,
    ledger: Ledger | None = None,
    **options,
) -> Phase2Outcome:
    """Play the Phase 2 template of *asserter* until a refund confirms or the refund timelock passes."""
    return Phase2Engine(dag, asserter, challengers, schedule, avp, ledger or Ledger(), **options).run()
