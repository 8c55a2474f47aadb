"""Two-party dispute state machine with enabler wiring and per-move deadlines.

A :class:`FlexInstance` is the protocol-level view of one dispute component:
the engines mirror every confirmed dispute transaction into :func:`step`, and
the adversary search drives instances directly through :func:`play`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable

import structlog

from battlesim.economics import BondParams
from battlesim.ledger import PERIODS_PER_EPOCH, SimulationError

logger = structlog.get_logger()

ALICE = "alice"
BOB = "bob"
MOVE_WINDOW = 1  # periods for each input publication and the final claim


class IllegalTransition(SimulationError):
    def __init__(self, state: FlexState, event: FlexEvent, detail: str = "") -> None:
        self.state = state
        self.event = event
        super().__init__(f"{event.value} is not legal in {state.value}" + (f": {detail}" if detail else ""))


class DeadlineExceeded(SimulationError):
    def __init__(self, late: str, deadline: int, period: int) -> None:
        self.late = late
        self.deadline = deadline
        self.period = period
        super().__init__(f"{late} moved at period {period}, deadline was {deadline}")


class NotResolved(SimulationError):
    pass


class FlexState(str, Enum):
    DORMANT = "dormant"
    CHALLENGED = "challenged"
    BOB_BONDED = "bob_bonded"
    BONDS_POSTED = "bonds_posted"
    ALICE_INPUT = "alice_input"
    INPUTS_PUBLISHED = "inputs_published"
    RESOLVED = "resolved"
    TIMED_OUT_CUT = "timed_out_cut"
    CANCELLED = "cancelled"


TERMINAL = frozenset({FlexState.RESOLVED, FlexState.TIMED_OUT_CUT, FlexState.CANCELLED})


class FlexEvent(str, Enum):
    BOB_CHALLENGE = "BobChallenge"
    NO_BOB_CHALLENGE = "NoBobChallenge"
    POST_BOND = "PostBond"
    ALICE_INPUT = "AliceInput"
    BOB_INPUT = "BobInput"
    RESOLVE_BY_AVP = "ResolveByAvp"
    STILL_OPEN = "StillOpen"
    TIMEOUT = "Timeout"
    DISPUTE_TIMEOUT = "DisputeTimeout"


@dataclass(frozen=True)
class Move:
    event: FlexEvent
    party: str


@dataclass
class Avp:
    """Assertion verification predicate with a bounded evaluation time."""

    predicate: Callable[[str], bool]
    bound_periods: int = 1
    _cache: dict[str, int] = field(default_factory=dict, repr=False)

    @classmethod
    def from_truths(cls, truths: dict[str, bool], bound_periods: int = 1) -> Avp:
        table = dict(truths)
        return cls(lambda assertion: table.get(assertion, False), bound_periods)

    def __call__(self, assertion: str) -> int:
        if assertion not in self._cache:
            self._cache[assertion] = 1 if self.predicate(assertion) else 0
        return self._cache[assertion]


@dataclass(frozen=True)
class FlexInputs:
    """Role names of the five inputs; the last two may be unwired."""

    alice_can_win: str
    bob_enabler: str
    alice_enabler: str
    alice_tries_early: str | None = None
    next_bob: str | None = None


@dataclass
class FlexInstance:
    id: str
    alice: str
    bob: str
    inputs: FlexInputs
    verdict: int
    delay_a: int = 0
    delay_b: int = 0
    opened_at: int = 0
    match_deadline: int | None = None
    bonds: BondParams = field(default_factory=BondParams)
    alice_bond: int | None = None
    bob_bond: int | None = None
    state: FlexState = FlexState.DORMANT
    since: int = 0
    winner: str | None = None
    loser: str | None = None
    balances: dict[str, int] = field(default_factory=dict)
    escrow: dict[str, int] = field(default_factory=dict)
    fees: int = 0
    log: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.since = max(self.since, self.opened_at)
        for party in (self.alice, self.bob):
            self.balances.setdefault(party, 0)
            self.escrow.setdefault(party, 0)

    @property
    def is_terminal(self) -> bool:
        return self.state in TERMINAL

    @property
    def alice_bond_amount(self) -> int:
        return self.bonds.aosb if self.alice_bond is None else self.alice_bond

    @property
    def bob_bond_amount(self) -> int:
        return self.bonds.aosb if self.bob_bond is None else self.bob_bond

    @property
    def avp_winner(self) -> str:
        return self.alice if self.verdict else self.bob

    @property
    def revealed_pair(self) -> tuple[str, str] | None:
        """(loser, winner) whose per-pair preimage the resolution released."""
        if self.state is FlexState.RESOLVED and self.loser and self.winner:
            return self.loser, self.winner
        return None

    def total_units(self) -> int:
        return sum(self.balances.values()) + sum(self.escrow.values()) + self.fees

    def deadline(self) -> tuple[str, int] | None:
        """(party whose move is due, last admissible period) for waiting states."""
        if self.state is FlexState.CHALLENGED:
            return self.bob, self.since + PERIODS_PER_EPOCH * self.delay_b
        if self.state is FlexState.BOB_BONDED:
            return self.alice, self.since + PERIODS_PER_EPOCH * self.delay_a
        if self.state is FlexState.BONDS_POSTED:
            return self.alice, self.since + MOVE_WINDOW
        if self.state is FlexState.ALICE_INPUT:
            return self.bob, self.since + MOVE_WINDOW
        return None

    def record(self, period: int, move: Move, before: FlexState) -> dict:
        return {
            "instance": self.id,
            "period": period,
            "event": move.event.value,
            "party": move.party,
            "state_before": before.value,
            "state_after": self.state.value,
        }


def _copy(instance: FlexInstance, **changes) -> FlexInstance:
    return replace(
        instance,
        balances=dict(instance.balances),
        escrow=dict(instance.escrow),
        log=list(instance.log),
        **changes,
    )


def _charge(inst: FlexInstance, party: str) -> None:
    inst.balances[party] -= inst.bonds.fee
    inst.fees += inst.bonds.fee


def _pay_out(inst: FlexInstance, winner: str, loser: str) -> None:
    lost = inst.escrow[loser]
    reward = inst.bonds.reward_for(lost) if lost else 0
    inst.balances[winner] += inst.escrow[winner] + reward
    inst.fees += lost - reward
    inst.escrow[winner] = inst.escrow[loser] = 0


def _refund(inst: FlexInstance) -> None:
    for party, amount in inst.escrow.items():
        inst.balances[party] += amount
        inst.escrow[party] = 0


def _resolve(inst: FlexInstance, winner: str) -> None:
    loser = inst.bob if winner == inst.alice else inst.alice
    _pay_out(inst, winner, loser)
    inst.state = FlexState.RESOLVED
    inst.winner, inst.loser = winner, loser


def step(instance: FlexInstance, move: Move, period: int) -> FlexInstance:
    """Apply *move* at *period*; returns the successor without touching *instance*."""
    state, event, party = instance.state, move.event, move.party
    if instance.is_terminal:
        raise IllegalTransition(state, event, "instance already terminal")
    if period < instance.since:
        raise IllegalTransition(state, event, f"period {period} precedes the current stage")
    due = instance.deadline()
    if due is not None and event is not FlexEvent.TIMEOUT and event is not FlexEvent.DISPUTE_TIMEOUT:
        late, last = due
        if party == late and period > last:
            raise DeadlineExceeded(late, last, period)

    inst = _copy(instance, since=period)
    a, b = inst.alice, inst.bob

    def need(states: Iterable[FlexState], who: str | None) -> None:
        if state not in states:
            raise IllegalTransition(state, event)
        if who is not None and party != who:
            raise IllegalTransition(state, event, f"{party} may not move here")

    if event is FlexEvent.BOB_CHALLENGE:
        need([FlexState.DORMANT], b)
        _charge(inst, b)
        inst.state = FlexState.CHALLENGED
    elif event is FlexEvent.NO_BOB_CHALLENGE:
        need([FlexState.DORMANT], a)
        if period < instance.opened_at + 1:
            raise IllegalTransition(state, event, "Bob still has the first period")
        _charge(inst, a)
        inst.state = FlexState.CANCELLED
        inst.winner, inst.loser = a, b
    elif event is FlexEvent.POST_BOND:
        if party == b:
            need([FlexState.CHALLENGED], b)
            inst.balances[b] -= inst.bob_bond_amount
            inst.escrow[b] += inst.bob_bond_amount
            inst.state = FlexState.BOB_BONDED
        else:
            need([FlexState.BOB_BONDED], a)
            inst.balances[a] -= inst.alice_bond_amount
            inst.escrow[a] += inst.alice_bond_amount
            inst.state = FlexState.BONDS_POSTED
        _charge(inst, party)
    elif event is FlexEvent.ALICE_INPUT:
        need([FlexState.BONDS_POSTED], a)
        _charge(inst, a)
        inst.balances[a] -= inst.bonds.publication_cost
        inst.fees += inst.bonds.publication_cost
        inst.state = FlexState.ALICE_INPUT
    elif event is FlexEvent.BOB_INPUT:
        need([FlexState.ALICE_INPUT], b)
        _charge(inst, b)
        inst.balances[b] -= inst.bonds.publication_cost
        inst.fees += inst.bonds.publication_cost
        inst.state = FlexState.INPUTS_PUBLISHED
    elif event is FlexEvent.RESOLVE_BY_AVP:
        need([FlexState.INPUTS_PUBLISHED], inst.avp_winner)
        _charge(inst, party)
        _resolve(inst, party)
    elif event is FlexEvent.STILL_OPEN:
        need([FlexState.BOB_BONDED, FlexState.BONDS_POSTED, FlexState.ALICE_INPUT, FlexState.INPUTS_PUBLISHED], b)
        if instance.inputs.alice_tries_early is None:
            raise IllegalTransition(state, event, "no early-win input is wired")
        _charge(inst, b)
        if state in (FlexState.BOB_BONDED, FlexState.BONDS_POSTED):
            _refund(inst)
            inst.state = FlexState.CANCELLED
        else:
            _resolve(inst, b)
    elif event is FlexEvent.TIMEOUT:
        if due is None:
            raise IllegalTransition(state, event, "nothing is due")
        late, last = due
        winner = b if late == a else a
        if party != winner:
            raise IllegalTransition(state, event, f"only {winner} can claim the timeout")
        if period <= last:
            raise IllegalTransition(state, event, f"{late} may still move until period {last}")
        _charge(inst, party)
        if inst.escrow[late]:
            _resolve(inst, winner)
        else:
            _refund(inst)
            inst.state = FlexState.RESOLVED
            inst.winner, inst.loser = winner, late
    elif event is FlexEvent.DISPUTE_TIMEOUT:
        if instance.match_deadline is None or period < instance.match_deadline:
            raise IllegalTransition(state, event, "match window still open")
        _refund(inst)
        inst.state = FlexState.TIMED_OUT_CUT
        inst.winner = inst.loser = None
    else:  # pragma: no cover
        raise IllegalTransition(state, event)

    inst.log.append(inst.record(period, move, state))
    logger.debug("flex_step", instance=inst.id, move=event.value, before=state.value, after=inst.state.value)
    return inst


def worst_case_timeline(instance: FlexInstance) -> int:
    """Periods from BobChallenge to resolution when every move lands at its last admissible period."""
    return PERIODS_PER_EPOCH * (instance.delay_a + instance.delay_b) + 3 * MOVE_WINDOW


def cut_next(instance: FlexInstance, loser: str) -> list[str]:
    """Roles of the loser's next-link enabler that the winner's claim consumes."""
    if instance.state is FlexState.TIMED_OUT_CUT:
        return [r for r in (instance.inputs.alice_can_win, instance.inputs.next_bob) if r]
    if instance.loser is None or instance.state not in (FlexState.RESOLVED, FlexState.CANCELLED):
        raise NotResolved(f"{instance.id} has no loser yet ({instance.state.value})")
    if loser != instance.loser:
        raise NotResolved(f"{loser} did not lose {instance.id}")
    if loser == instance.alice:
        return [instance.inputs.alice_can_win]
    return [instance.inputs.next_bob] if instance.inputs.next_bob else []


# ── Driving instances ────────────────────────────────────────

Policy = Callable[[FlexInstance, int], list[Move]]


def legal_moves(instance: FlexInstance, period: int, party: str) -> list[Move]:
    """Every move *party* could make at *period* without an error."""
    moves = []
    for event in FlexEvent:
        move = Move(event, party)
        try:
            step(instance, move, period)
        except (IllegalTransition, DeadlineExceeded):
            continue
        moves.append(move)
    return moves


def honest_policy(party: str) -> Policy:
    """Earliest-legal-move policy for the side the AVP favours, or the defending side otherwise."""

    def policy(inst: FlexInstance, period: int) -> list[Move]:
        who = inst.alice if party == ALICE else inst.bob
        state = inst.state
        due = inst.deadline()
        if due is not None and due[0] != who and period > due[1]:
            return [Move(FlexEvent.TIMEOUT, who)]
        if who == inst.alice:
            if state is FlexState.DORMANT and period >= inst.opened_at + 1:
                return [Move(FlexEvent.NO_BOB_CHALLENGE, who)]
            if state is FlexState.BOB_BONDED:
                return [Move(FlexEvent.POST_BOND, who)]
            if state is FlexState.BONDS_POSTED:
                return [Move(FlexEvent.ALICE_INPUT, who)]
        else:
            if state is FlexState.DORMANT and not inst.verdict:
                return [Move(FlexEvent.BOB_CHALLENGE, who)]
            if state is FlexState.CHALLENGED:
                return [Move(FlexEvent.POST_BOND, who)]
            if state is FlexState.ALICE_INPUT:
                return [Move(FlexEvent.BOB_INPUT, who)]
        if state is FlexState.INPUTS_PUBLISHED and inst.avp_winner == who:
            return [Move(FlexEvent.RESOLVE_BY_AVP, who)]
        return []

    return policy


def _apply_policy(inst: FlexInstance, policy: Policy, period: int, limit: int = 4) -> FlexInstance:
    """Let *policy* move repeatedly within one period (a challenge and its bond may share it)."""
    for _ in range(limit):
        if inst.is_terminal:
            break
        moved = False
        for move in policy(inst, period):
            try:
                inst = step(inst, move, period)
            except (IllegalTransition, DeadlineExceeded):
                continue
            moved = True
            break
        if not moved:
            break
    return inst


def play(
    instance: FlexInstance,
    alice_policy: Policy,
    bob_policy: Policy,
    horizon: int,
    *,
    bob_first: bool = True,
) -> FlexInstance:
    """Advance period by period until terminal or *horizon* periods have passed."""
    inst = instance
    order = (bob_policy, alice_policy) if bob_first else (alice_policy, bob_policy)
    for period in range(instance.opened_at, instance.opened_at + horizon + 1):
        for policy in order:
            inst = _apply_policy(inst, policy, period)
        if inst.is_terminal:
            break
    return inst


def adversary_search(instance: FlexInstance, honest_side: str, horizon: int) -> list[FlexInstance]:
    """Final instances over every adversary move sequence at one-period granularity.

    The adversary moves first in each period (up to twice) and the honest side
    answers with :func:`honest_policy` in the same period.
    """
    honest = honest_policy(honest_side)
    adversary = instance.bob if honest_side == ALICE else instance.alice
    last = instance.opened_at + horizon
    outcomes: list[FlexInstance] = []
    seen: set[tuple] = set()

    def visit(inst: FlexInstance, period: int, budget: int) -> None:
        key = (inst.state, inst.since, period, budget, inst.winner)
        if key in seen:
            return
        seen.add(key)
        if inst.is_terminal or period > last:
            outcomes.append(inst)
            return
        options: list[Move | None] = [None]
        if budget:
            options += legal_moves(inst, period, adversary)
        for option in options:
            if option is None:
                visit(_apply_policy(inst, honest, period), period + 1, 2)
            else:
                visit(step(inst, option, period), period, budget - 1)

    visit(instance, instance.opened_at, 2)
    return outcomes
