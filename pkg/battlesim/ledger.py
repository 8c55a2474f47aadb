"""Abstract UTXO ledger with timelock periods, relative timelocks and bounded censorship."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Callable, Iterable, Sequence

import structlog

logger = structlog.get_logger()

PERIODS_PER_EPOCH = 5
ANYONE = "*"
EXTERNAL = "external"


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""


class UnauthorizedBroadcaster(SimulationError):
    def __init__(self, template_id: str, by: str) -> None:
        self.template_id = template_id
        self.by = by
        super().__init__(f"{by!r} may not broadcast {template_id}")


class MissingInput(SimulationError):
    def __init__(self, template_id: str, outpoint: Outpoint) -> None:
        self.template_id = template_id
        self.outpoint = outpoint
        super().__init__(f"{template_id} spends unknown outpoint {outpoint}")


class TimelockNotExpired(SimulationError):
    def __init__(self, template_id: str, now: int) -> None:
        self.template_id = template_id
        self.now = now
        super().__init__(f"{template_id} is not confirmable at period {now}")


class InvalidPermutation(SimulationError):
    pass


# ── Value types ──────────────────────────────────────────────


@dataclass(frozen=True, order=True)
class Outpoint:
    tx_id: str
    index: int

    def __str__(self) -> str:
        return f"{self.tx_id[:16]}:{self.index}"


@dataclass(frozen=True)
class Output:
    role: str
    value: int = 0
    relative_timelock: int = 0
    spenders: frozenset[str] = frozenset({ANYONE})

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError(f"output {self.role!r} has negative value")
        if self.relative_timelock < 0:
            raise ValueError(f"output {self.role!r} has negative timelock")


@dataclass(frozen=True)
class TxInput:
    outpoint: Outpoint
    timelock: int = 0


@dataclass(frozen=True)
class TemplateInstance:
    """A concrete, fully wired transaction ready for broadcast.

    ``annotations`` hold fields that ride along with the transaction (opener
    identifier, rate-limit leaf timelock) without entering its id.
    """

    kind: str
    template_id: str
    inputs: tuple[TxInput, ...] = ()
    outputs: tuple[Output, ...] = ()
    authorized: frozenset[str] = frozenset({ANYONE})
    params: tuple[tuple[str, str], ...] = ()
    annotations: tuple[tuple[str, str | int], ...] = ()

    @cached_property
    def tx_id(self) -> str:
        body = [
            self.kind,
            [[i.outpoint.tx_id, i.outpoint.index, i.timelock] for i in self.inputs],
            [[o.role, o.value, o.relative_timelock, sorted(o.spenders)] for o in self.outputs],
            [list(p) for p in self.params],
        ]
        return hashlib.sha256(json.dumps(body, separators=(",", ":")).encode()).hexdigest()

    def outpoint(self, index: int) -> Outpoint:
        if not 0 <= index < len(self.outputs):
            raise IndexError(f"{self.template_id} has no output {index}")
        return Outpoint(self.tx_id, index)

    def annotation(self, key: str, default: str | int | None = None) -> str | int | None:
        for k, v in self.annotations:
            if k == key:
                return v
        return default

    def annotate(self, **values: str | int) -> TemplateInstance:
        merged = dict(self.annotations)
        merged.update(values)
        return replace(self, annotations=tuple(sorted(merged.items())))

    def required_timelock(self, tx_input: TxInput) -> int:
        leaf = self.annotation("leaf_timelock", 0)
        return max(tx_input.timelock, int(leaf or 0))

    def may_broadcast(self, by: str) -> bool:
        return ANYONE in self.authorized or by in self.authorized


class BroadcastStatus(str, Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"
    CONFLICT = "conflict"
    DUPLICATE = "duplicate"


@dataclass
class BroadcastReceipt:
    tx: TemplateInstance
    by: str
    queued_at: int
    seq: int
    delay: float = 0.0
    status: BroadcastStatus = BroadcastStatus.PENDING
    confirmed_at: int | None = None

    @property
    def tx_id(self) -> str:
        return self.tx.tx_id


@dataclass(frozen=True)
class Confirmation:
    tx: TemplateInstance
    by: str
    period: int

    def record(self) -> dict:
        """The fixed trace record for this confirmation."""
        return {
            "period": self.period,
            "tx_id": self.tx.tx_id,
            "kind": self.tx.kind,
            "broadcaster": self.by,
            "inputs": [f"{i.outpoint.tx_id}:{i.outpoint.index}" for i in self.tx.inputs],
            "outputs": [o.role for o in self.tx.outputs],
        }


Listener = Callable[[Confirmation], None]


# ── Ledger ───────────────────────────────────────────────────


class Ledger:
    """Discrete-time UTXO ledger.

    Time is counted in timelock periods. A broadcast confirms in the period it
    is made unless an input timelock holds it back; held broadcasts stay
    pending and confirm in the first period where they mature. Confirmation
    order inside a period is queue order with a template-id tie-break.
    """

    def __init__(self, *, start: int = 0, extra_confirmation_periods: int = 0) -> None:
        if extra_confirmation_periods < 0:
            raise ValueError("extra_confirmation_periods must be >= 0")
        self.now = start
        self.extra_confirmation_periods = extra_confirmation_periods
        self.utxos: dict[Outpoint, Output] = {}
        self.confirmed: list[Confirmation] = []
        self.pending: list[BroadcastReceipt] = []
        self.failed: list[BroadcastReceipt] = []
        self._confirmed_at: dict[str, int] = {}
        self._confirmations: dict[str, Confirmation] = {}
        self._spent_by: dict[Outpoint, str] = {}
        self._censorship: dict[str, float] = {}
        self._listeners: list[Listener] = []
        self._seq = 0
        self._front_seq = 0

    # ── Queries ───────────────────────────────────────────────

    @property
    def epoch(self) -> int:
        return self.now // PERIODS_PER_EPOCH

    def is_live(self, outpoint: Outpoint) -> bool:
        return outpoint in self.utxos

    def is_confirmed(self, tx_id: str) -> bool:
        return tx_id in self._confirmed_at

    def confirmed_at(self, tx_id: str) -> int | None:
        return self._confirmed_at.get(tx_id)

    def confirmation(self, tx_id: str) -> Confirmation | None:
        return self._confirmations.get(tx_id)

    def spender_of(self, outpoint: Outpoint) -> str | None:
        return self._spent_by.get(outpoint)

    def is_pending(self, tx_id: str) -> bool:
        return any(r.tx_id == tx_id for r in self.pending)

    def pending_spender(self, outpoint: Outpoint) -> BroadcastReceipt | None:
        for r in self.pending:
            if any(i.outpoint == outpoint for i in r.tx.inputs):
                return r
        return None

    def trace_records(self) -> list[dict]:
        return [c.record() for c in self.confirmed]

    def on_confirm(self, listener: Listener) -> None:
        self._listeners.append(listener)

    def censor(self, target: str, fraction: float) -> None:
        """Delay every later broadcast by *target* by a fraction of a period."""
        if not 0.0 <= fraction < 1.0:
            raise ValueError("censorship delay must stay below one timelock period")
        if fraction == 0.0:
            self._censorship.pop(target, None)
        else:
            self._censorship[target] = fraction

    def delay_of(self, party: str) -> float:
        return self._censorship.get(party, 0.0)

    # ── Validation ────────────────────────────────────────────

    def _pending_ids(self) -> set[str]:
        return {r.tx_id for r in self.pending}

    def _input_ready(self, tx: TemplateInstance, tx_input: TxInput, pending_ids: set[str]) -> bool:
        """True when *tx_input* of *tx* satisfies its relative timelock now."""
        op = tx_input.outpoint
        parent = None
        if op.tx_id in pending_ids:
            parent = next(r for r in self.pending if r.tx_id == op.tx_id)
            output = parent.tx.outputs[op.index] if op.index < len(parent.tx.outputs) else None
        else:
            output = self.utxos.get(op)
        needed = tx.required_timelock(tx_input)
        if output is not None:
            needed = max(needed, output.relative_timelock)
        if needed > 0:
            needed += self.extra_confirmation_periods
        created = self._confirmed_at.get(op.tx_id)
        if created is not None:
            return self.now >= created + needed
        if parent is not None:
            return needed == 0 and self.is_mature(parent.tx)
        return False

    def is_mature(self, tx: TemplateInstance) -> bool:
        pending_ids = self._pending_ids()
        return all(self._input_ready(tx, i, pending_ids) for i in tx.inputs)

    def check(self, tx: TemplateInstance, by: str) -> str | None:
        """Dry-run a broadcast; returns ``None`` when it would confirm this period."""
        if not tx.may_broadcast(by):
            return "unauthorized"
        if tx.tx_id in self._confirmed_at or self.is_pending(tx.tx_id):
            return "duplicate"
        pending_ids = self._pending_ids()
        for tx_input in tx.inputs:
            op = tx_input.outpoint
            if op not in self.utxos and op.tx_id not in pending_ids:
                return "missing_input"
            if self.pending_spender(op) is not None:
                return "conflict"
            if not self._input_ready(tx, tx_input, pending_ids):
                return "timelock"
        return None

    # ── Mutators ──────────────────────────────────────────────

    def fund(self, tx: TemplateInstance) -> Confirmation:
        """Confirm an input-less funding transaction from outside the protocol."""
        if tx.inputs:
            raise ValueError("funding transactions take no inputs")
        receipt = BroadcastReceipt(tx=tx, by=EXTERNAL, queued_at=self.now, seq=-1)
        return self._confirm(receipt, notify=False)

    def broadcast(
        self,
        tx: TemplateInstance,
        by: str,
        *,
        front_run: bool = False,
        strict: bool = False,
    ) -> BroadcastReceipt:
        """Queue *tx* for confirmation in the current period."""
        if not tx.may_broadcast(by):
            raise UnauthorizedBroadcaster(tx.template_id, by)
        if tx.tx_id in self._confirmed_at or self.is_pending(tx.tx_id):
            logger.debug("broadcast_duplicate", template=tx.template_id, by=by)
            return BroadcastReceipt(
                tx=tx, by=by, queued_at=self.now, seq=0, status=BroadcastStatus.DUPLICATE
            )

        pending_ids = self._pending_ids()
        for tx_input in tx.inputs:
            op = tx_input.outpoint
            if op in self.utxos:
                spender = self.utxos[op].spenders
                if ANYONE not in spender and by not in spender:
                    raise UnauthorizedBroadcaster(tx.template_id, by)
            elif op.tx_id not in pending_ids:
                raise MissingInput(tx.template_id, op)

        if strict and not self.is_mature(tx):
            raise TimelockNotExpired(tx.template_id, self.now)

        if front_run:
            self._front_seq -= 1
            seq = self._front_seq
        else:
            self._seq += 1
            seq = self._seq
        receipt = BroadcastReceipt(
            tx=tx, by=by, queued_at=self.now, seq=seq, delay=self._censorship.get(by, 0.0)
        )
        self.pending.append(receipt)
        return receipt

    def _order_key(self, receipt: BroadcastReceipt) -> tuple:
        return (receipt.delay, receipt.seq, receipt.tx.template_id)

    def settle(self) -> list[BroadcastReceipt]:
        """Confirm every pending broadcast that can confirm in the current period."""
        resolved: list[BroadcastReceipt] = []
        progress = True
        while progress and self.pending:
            progress = False
            pending_ids = self._pending_ids()
            for receipt in sorted(self.pending, key=self._order_key):
                spent = [i.outpoint for i in receipt.tx.inputs if i.outpoint not in self.utxos]
                if any(op.tx_id in pending_ids for op in spent):
                    continue
                if spent:
                    receipt.status = BroadcastStatus.CONFLICT
                    self.pending.remove(receipt)
                    self.failed.append(receipt)
                    resolved.append(receipt)
                    logger.debug("broadcast_conflict", template=receipt.tx.template_id, by=receipt.by)
                    progress = True
                    break
                if not all(self._input_ready(receipt.tx, i, pending_ids) for i in receipt.tx.inputs):
                    continue
                self._confirm(receipt)
                resolved.append(receipt)
                progress = True
                break
        return resolved

    def _confirm(self, receipt: BroadcastReceipt, *, notify: bool = True) -> Confirmation:
        tx = receipt.tx
        for tx_input in tx.inputs:
            del self.utxos[tx_input.outpoint]
            self._spent_by[tx_input.outpoint] = tx.tx_id
        for index, output in enumerate(tx.outputs):
            self.utxos[Outpoint(tx.tx_id, index)] = output
        confirmation = Confirmation(tx=tx, by=receipt.by, period=self.now)
        self._confirmed_at[tx.tx_id] = self.now
        self._confirmations[tx.tx_id] = confirmation
        self.confirmed.append(confirmation)
        receipt.status = BroadcastStatus.CONFIRMED
        receipt.confirmed_at = self.now
        if receipt in self.pending:
            self.pending.remove(receipt)
        logger.debug("tx_confirmed", template=tx.template_id, kind=tx.kind, by=receipt.by, period=self.now)
        if notify:
            for listener in list(self._listeners):
                listener(confirmation)
        return confirmation

    def advance(self, periods: int = 1) -> Ledger:
        if periods < 1:
            raise ValueError("advance needs at least one period")
        self.settle()
        for _ in range(periods):
            self.now += 1
            self.settle()
        return self

    def reorderable(self) -> list[BroadcastReceipt]:
        """Ordinary broadcasts queued in the current period; front-run ones stay ahead."""
        current = (r for r in self.pending if r.queued_at == self.now and r.seq > 0)
        return sorted(current, key=self._order_key)

    def permute_pending(self, permutation: Sequence[int]) -> None:
        """Reorder the ordinary broadcasts queued in the current period, in place."""
        current = self.reorderable()
        if sorted(permutation) != list(range(len(current))):
            raise InvalidPermutation(
                f"expected a permutation of {len(current)} queued broadcasts, got {list(permutation)}"
            )
        seqs = [r.seq for r in current]
        for receipt, seq in zip((current[p] for p in permutation), seqs):
            receipt.seq = seq

    def copy(self) -> Ledger:
        """Independent copy without listeners."""
        listeners, self._listeners = self._listeners, []
        try:
            clone = copy.deepcopy(self)
        finally:
            self._listeners = listeners
        return clone


# ── Functional helpers ───────────────────────────────────────


def advance(ledger: Ledger, periods: int) -> Ledger:
    return ledger.advance(periods)


def reorder_within_period(ledger: Ledger, permutation: Sequence[int]) -> Ledger:
    clone = ledger.copy()
    clone.permute_pending(permutation)
    return clone


def funding_instance(label: str, outputs: Iterable[Output]) -> TemplateInstance:
    """An external funding transaction, e.g. the coins behind a TC start."""
    return TemplateInstance(
        kind="Funding",
        template_id=label,
        outputs=tuple(outputs),
        params=(("funding", label),),
    )
