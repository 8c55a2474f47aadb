"""Bonds, dispute rewards, fees and fronted liquidity per party over a run.

The :class:`CapitalTrace` is a double-entry book: every unit is either free,
locked in a dispute, held as a persistent bond, fronted to a user, or sits in
the escrow / fee sink / slashed pool. The total never changes except through
:meth:`CapitalTrace.fund` and :meth:`CapitalTrace.post_apsb`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import structlog

from battlesim.ledger import SimulationError

logger = structlog.get_logger()


class BondError(SimulationError):
    pass


class BondNotPosted(BondError):
    def __init__(self, dispute: str, party: str) -> None:
        self.dispute = dispute
        self.party = party
        super().__init__(f"{party} has no bond locked in dispute {dispute}")


class InsufficientCapital(SimulationError):
    pass


class IncompleteTrace(SimulationError):
    pass


class ScheduleError(SimulationError):
    pass


# ── Parameters ───────────────────────────────────────────────


@dataclass(frozen=True)
class BondParams:
    """Per-dispute bond sizes in abstract units.

    ``challenger_aosb`` is the bond a Phase 2 challenger posts; Phase 1
    disputes are symmetric and both sides post ``aosb``. The dispute reward
    defaults to the losing bond minus one fee, the rest going to the fee sink.
    """

    aosb: int = 10
    fee: int = 1
    publication_cost: int = 2
    challenger_aosb: int = 24
    adr: int | None = None

    def __post_init__(self) -> None:
        if min(self.aosb, self.fee, self.publication_cost, self.challenger_aosb) < 0:
            raise BondError("bond parameters must be non-negative")
        if self.aosb < self.publication_cost + self.fee:
            raise BondError(
                f"aosb {self.aosb} must cover publication cost {self.publication_cost} plus fee {self.fee}"
            )
        if self.adr is not None and not 0 <= self.adr <= min(self.aosb, self.challenger_aosb):
            raise BondError(f"adr {self.adr} must lie within the smaller bond")

    def reward_for(self, losing_bond: int) -> int:
        if self.adr is not None:
            return self.adr
        return max(0, losing_bond - self.fee)


def unit_cost(params: BondParams) -> int:
    """Capital the asserter ties up in one dispute: bond, bond and input fees, publication, claim fee."""
    return params.aosb + 3 * params.fee + params.publication_cost


def amic(params: BondParams) -> int:
    """Minimum initial capital: one dispute plus the StartTournament fee."""
    return unit_cost(params) + params.fee


def net_gain(params: BondParams) -> int:
    """What one won Phase 2 dispute adds to the asserter's free balance."""
    return params.reward_for(params.challenger_aosb) - (unit_cost(params) - params.aosb)


def challenger_unit_cost(params: BondParams) -> int:
    """Registration, challenge, bond and input fees, publication and the bond itself."""
    return params.challenger_aosb + 4 * params.fee + params.publication_cost


def concurrency_from_publication(aosb: int, publication_cost: int, fee: int) -> int:
    """Disputes one bond of size *aosb* can underwrite at the given publication cost."""
    per_dispute = publication_cost + fee
    if per_dispute <= 0:
        raise BondError("publication cost plus fee must be positive")
    return aosb // per_dispute


# ── Phase 2 schedule ─────────────────────────────────────────

SCHEDULE_RULES = ("doubling", "gradual", "maintain", "custom")


@dataclass(frozen=True)
class Phase2Schedule:
    """Disputes opened per Phase 2 round.

    ``doubling``: k(r+1) = 2·k(r); ``gradual``: k(r+1) = k(r) + first;
    ``maintain``: constant; ``custom``: explicit list, last value repeated.
    Every rule is capped by the challengers still unresolved.
    """

    rule: str = "doubling"
    first: int = 1
    custom: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.rule not in SCHEDULE_RULES:
            raise ScheduleError(f"unknown schedule rule {self.rule!r}")
        if self.first < 1:
            raise ScheduleError("the first round must open at least one dispute")
        if self.rule == "custom":
            if not self.custom or min(self.custom) < 1:
                raise ScheduleError("custom schedule needs positive round sizes")
            if any(b < a for a, b in zip(self.custom, self.custom[1:])):
                raise ScheduleError(f"custom schedule {list(self.custom)} is decreasing")

    def cap(self, round_no: int, previous: int) -> int:
        """Schedule cap for 1-based *round_no* given the previous round's size."""
        if self.rule == "custom":
            return self.custom[min(round_no, len(self.custom)) - 1]
        if round_no == 1 or self.rule == "maintain":
            return self.first
        if self.rule == "doubling":
            return 2 * previous
        return previous + self.first

    def sizes(self, challengers: int) -> list[int]:
        sizes: list[int] = []
        remaining, previous = challengers, 0
        while remaining > 0:
            k = min(self.cap(len(sizes) + 1, previous), remaining)
            sizes.append(k)
            remaining -= k
            previous = k
        return sizes

    def round_of(self, position: int, challengers: int) -> int:
        """1-based round in which the dispute at slot *position* opens."""
        if not 0 <= position < challengers:
            raise IndexError(f"slot {position} outside {challengers} challengers")
        seen = 0
        for round_no, size in enumerate(self.sizes(challengers), 1):
            seen += size
            if position < seen:
                return round_no
        raise AssertionError("unreachable")

    def rounds(self, challengers: int) -> int:
        return len(self.sizes(challengers))

    def describe(self) -> str:
        return f"custom{list(self.custom)}" if self.rule == "custom" else f"{self.rule}(first={self.first})"


def rounds_needed(
    challengers: int,
    schedule: Phase2Schedule | None = None,
    starting_capital: int | None = None,
    params: BondParams | None = None,
) -> int:
    """Phase 2 rounds until every challenger is resolved under reward recycling.

    Each round opens as many disputes as the schedule allows and the free
    balance can fund; every win adds :func:`net_gain` for the next round.
    """
    params = params or BondParams()
    schedule = schedule or Phase2Schedule()
    starting_capital = amic(params) if starting_capital is None else starting_capital
    if starting_capital < amic(params):
        raise InsufficientCapital(f"starting capital {starting_capital} is below AMIC {amic(params)}")
    available = starting_capital - params.fee
    unit, gain = unit_cost(params), net_gain(params)
    remaining, previous, rounds = challengers, 0, 0
    while remaining > 0:
        k = min(schedule.cap(rounds + 1, previous), available // unit, remaining)
        if k < 1:
            raise InsufficientCapital(f"capital {available} cannot fund round {rounds + 1}")
        available += k * gain
        remaining -= k
        previous = k
        rounds += 1
    return rounds


# ── Capital trace ────────────────────────────────────────────


@dataclass
class Account:
    funded: int = 0
    free: int = 0
    locked: dict[str, int] = field(default_factory=dict)
    apsb: int = 0
    apsb_posted: int = 0
    adr_received: int = 0
    fees: int = 0
    publication: int = 0
    fronted: int = 0

    @property
    def locked_total(self) -> int:
        return sum(self.locked.values())


@dataclass(frozen=True)
class CapitalSample:
    period: int
    party: str
    free: int
    locked: int
    drawdown: int
    drawdown_with_fronting: int
    event: str

    def record(self) -> dict:
        return {
            "period": self.period,
            "party": self.party,
            "free": self.free,
            "locked": self.locked,
            "drawdown": self.drawdown,
            "event": self.event,
        }


class CapitalTrace:
    """Per-party capital book for one run."""

    def __init__(self, params: BondParams | None = None) -> None:
        self.params = params or BondParams()
        self.accounts: dict[str, Account] = {}
        self.fee_sink = 0
        self.escrow = 0
        self.slashed = 0
        self.samples: list[CapitalSample] = []
        self.complete = False
        self.now = 0

    def account(self, party: str) -> Account:
        return self.accounts.setdefault(party, Account())

    def _sample(self, party: str, event: str) -> None:
        acct = self.account(party)
        drawdown_with = acct.funded - acct.free
        self.samples.append(
            CapitalSample(
                period=self.now,
                party=party,
                free=acct.free,
                locked=acct.locked_total,
                drawdown=drawdown_with - acct.fronted,
                drawdown_with_fronting=drawdown_with,
                event=event,
            )
        )

    def at(self, period: int) -> CapitalTrace:
        self.now = period
        return self

    # ── Balances ──────────────────────────────────────────────

    def fund(self, party: str, amount: int) -> None:
        if amount < 0:
            raise BondError("cannot fund a negative amount")
        acct = self.account(party)
        acct.funded += amount
        acct.free += amount
        self._sample(party, "fund")

    def free(self, party: str) -> int:
        return self.account(party).free

    def can_afford(self, party: str, amount: int) -> bool:
        return self.account(party).free >= amount

    def charge_fee(self, party: str, amount: int | None = None) -> None:
        """Debit a transaction fee; free balance may go negative for an underfunded party."""
        fee = self.params.fee if amount is None else amount
        acct = self.account(party)
        acct.free -= fee
        acct.fees += fee
        self.fee_sink += fee
        self._sample(party, "fee")

    def charge_publication(self, party: str) -> None:
        acct = self.account(party)
        cost = self.params.publication_cost
        acct.free -= cost
        acct.publication += cost
        self.fee_sink += cost
        self._sample(party, "publication")

    # ── Bonds ─────────────────────────────────────────────────

    def lock_bond(self, party: str, dispute: str, amount: int) -> None:
        acct = self.account(party)
        if acct.free < amount:
            raise InsufficientCapital(f"{party} holds {acct.free}, needs {amount} for {dispute}")
        if dispute in acct.locked:
            raise BondError(f"{party} already bonded in {dispute}")
        acct.free -= amount
        acct.locked[dispute] = amount
        self._sample(party, "lock")

    def bond(self, party: str, dispute: str) -> int | None:
        return self.account(party).locked.get(dispute)

    def _release(self, party: str, dispute: str) -> int:
        acct = self.account(party)
        amount = acct.locked.pop(dispute, None)
        if amount is None:
            raise BondNotPosted(dispute, party)
        return amount

    def settle_dispute(self, dispute: str, winner: str, loser: str) -> int:
        """Pay the loser's bond out as the winner's reward; return the reward."""
        if self.bond(winner, dispute) is None:
            raise BondNotPosted(dispute, winner)
        if self.bond(loser, dispute) is None:
            raise BondNotPosted(dispute, loser)
        own = self._release(winner, dispute)
        lost = self._release(loser, dispute)
        reward = self.params.reward_for(lost)
        acct = self.account(winner)
        acct.free += own + reward
        acct.adr_received += reward
        self.fee_sink += lost - reward
        self._sample(winner, "settle_win")
        self._sample(loser, "settle_loss")
        logger.debug("dispute_settled", dispute=dispute, winner=winner, loser=loser, reward=reward)
        return reward

    def refund_bonds(self, dispute: str) -> list[str]:
        """Return every bond locked under *dispute* to its owner."""
        refunded = []
        for party, acct in self.accounts.items():
            amount = acct.locked.pop(dispute, None)
            if amount is not None:
                acct.free += amount
                refunded.append(party)
                self._sample(party, "refund")
        return refunded

    # ── Fronting and persistent bonds ────────────────────────

    def front(self, party: str, amount: int) -> None:
        """Pay a user out of pocket before the bridge reimburses."""
        acct = self.account(party)
        acct.free -= amount
        acct.fronted += amount
        self._sample(party, "front")

    def reimburse(self, party: str) -> int:
        acct = self.account(party)
        amount, acct.fronted = acct.fronted, 0
        acct.free += amount
        self._sample(party, "reimburse")
        return amount

    def post_apsb(self, party: str, amount: int) -> None:
        acct = self.account(party)
        acct.apsb += amount
        acct.apsb_posted += amount

    def slash_apsb(self, party: str) -> int:
        acct = self.account(party)
        amount, acct.apsb = acct.apsb, 0
        self.slashed += amount
        logger.debug("apsb_slashed", party=party, amount=amount)
        return amount

    def apsb(self, party: str) -> int:
        return self.account(party).apsb

    # ── Reports ───────────────────────────────────────────────

    def close(self) -> CapitalTrace:
        self.complete = True
        return self

    def total_units(self) -> int:
        held = sum(a.free + a.locked_total + a.apsb + a.fronted for a in self.accounts.values())
        return held + self.escrow + self.fee_sink + self.slashed

    def total_inflow(self) -> int:
        return sum(a.funded + a.apsb_posted for a in self.accounts.values())

    def is_conserved(self) -> bool:
        return self.total_units() == self.total_inflow()

    def peak_capital(self, party: str, *, include_fronting: bool = False) -> int:
        """Largest drawdown of the party's own funds over the run."""
        if not self.complete:
            raise IncompleteTrace("peak capital needs a completed run")
        key = "drawdown_with_fronting" if include_fronting else "drawdown"
        return max((getattr(s, key) for s in self.samples if s.party == party), default=0)

    def report_row(self, party: str, challengers: int, schedule: Phase2Schedule, rounds: int) -> dict:
        return {
            "party": party,
            "C": challengers,
            "schedule": schedule.describe(),
            "peak": self.peak_capital(party),
            "rounds": rounds,
            "total_fees": self.account(party).fees,
        }


def peak_capital(trace: CapitalTrace, party: str, *, include_fronting: bool = False) -> int:
    return trace.peak_capital(party, include_fronting=include_fronting)


def settle_dispute(trace: CapitalTrace, winner: str, loser: str, dispute: str) -> CapitalTrace:
    trace.settle_dispute(dispute, winner, loser)
    return trace


def simulate_challenger_load(tournaments: int, params: BondParams | None = None) -> int:
    """Peak capital of a challenger contesting *tournaments* assertions at once."""
    params = params or BondParams()
    trace = CapitalTrace(params)
    need = challenger_unit_cost(params) * tournaments
    trace.fund("challenger", need)
    for t in range(tournaments):
        trace.charge_fee("challenger")
        trace.charge_fee("challenger")
        trace.lock_bond("challenger", f"T{t}", params.challenger_aosb)
        trace.charge_fee("challenger")
        trace.charge_publication("challenger")
        trace.charge_fee("challenger")
    return trace.close().peak_capital("challenger")
