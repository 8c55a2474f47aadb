"""Tournament Chain: rate-limited slots for opening tournaments, and O&A handling.

A chain is a line of ``OpenTournament`` links. Each link exposes ``m``
start outputs; the first confirmed spend of a start output anchors one
Phase 1 instance there. An opener whose slot sees no registration within the
window has Opened-and-Abandoned it: the side system slashes its persistent
bond, schedules its removal and flags the affected funds for migration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import structlog

from battlesim.analyzer import dead_templates
from battlesim.dag import (
    PHASE2_ROUND_PERIODS,
    ROUND_PERIODS,
    TC_TICK,
    Deployment,
    InvalidParams,
    Phase1Names,
    TcNames,
    build_phase1,
    build_tc,
    operator_ids,
    rounds_for,
    tc_timelock,
)
from battlesim.economics import CapitalTrace
from battlesim.graph import TemplateDag, TemplateKind
from battlesim.ledger import BroadcastStatus, Ledger, Outpoint, Output, SimulationError, funding_instance

logger = structlog.get_logger()

DEFAULT_REGISTRATION_WINDOW = 1
WATCHER = "watcher"


class NoSignatures(SimulationError):
    pass


class SlotTaken(SimulationError):
    def __init__(self, link: int, output: int, opener: str) -> None:
        self.link = link
        self.output = output
        self.opener = opener
        super().__init__(f"start output {output} of link {link} is already taken; {opener} pays nothing")


class WindowNotElapsed(SimulationError):
    pass


# ── Records ──────────────────────────────────────────────────


@dataclass(frozen=True)
class TcLink:
    index: int
    opener: str
    next_link_timelock: int
    start_outputs: tuple[Outpoint, ...]
    signature_count: int
    confirmed_at: int
    tx_id: str


@dataclass
class SlotAnchor:
    link: int
    output: int
    opener: str
    slot: str
    opened_at: int
    kickoff_tx: str
    dag: TemplateDag
    deployment: Deployment
    dead: set[str] = field(default_factory=set)


@dataclass(frozen=True)
class OaaVerdict:
    slot: str
    opener: str
    window_end: int
    assertions_seen: int
    buffer_ok: bool = True

    @property
    def is_oaa(self) -> bool:
        return self.assertions_seen == 0


@dataclass(frozen=True)
class TcEvent:
    period: int
    link: int
    event: str  # Advanced | Opened | OaaSlashed | Migrated
    oid: str
    namespace: str = "tc"

    def record(self) -> dict:
        return {
            "period": self.period,
            "namespace": self.namespace,
            "link": self.link,
            "event": self.event,
            "oid": self.oid,
        }


# ── Side system ──────────────────────────────────────────────


class SideSystem:
    """Persistent bonds, removals and fund migration, decided after a latency."""

    def __init__(
        self,
        capital: CapitalTrace | None = None,
        *,
        decision_latency: int = 0,
        active_utxos: int = 0,
    ) -> None:
        self.capital = capital or CapitalTrace()
        self.decision_latency = decision_latency
        self.active_utxos = active_utxos
        self.removals: dict[str, int] = {}
        self.migrations: list[dict] = []

    def post_bond(self, party: str, amount: int) -> None:
        self.capital.post_apsb(party, amount)

    def bond(self, party: str) -> int:
        return self.capital.apsb(party)

    def slash(self, party: str) -> int:
        return self.capital.slash_apsb(party)

    def schedule_removal(self, party: str, now: int) -> int:
        at = now + self.decision_latency
        self.removals.setdefault(party, at)
        return at

    def is_removed(self, party: str, now: int) -> bool:
        return party in self.removals and now >= self.removals[party]

    def flag_migration(self, slot: str, now: int) -> dict:
        entry = {"slot": slot, "flagged_at": now, "decided_at": now + self.decision_latency, "utxos": self.active_utxos}
        self.migrations.append(entry)
        return entry


def required_buffer(active_utxos: int, latency: int, t: int) -> int:
    """Links that must stay unopened to migrate *active_utxos* after a decision taking *latency* periods."""
    if t < 1:
        raise InvalidParams("inter-link timelock must be >= 1")
    return active_utxos + math.ceil(latency / (TC_TICK * t))


def tournament_active_periods(n: int) -> int:
    """Phase 1, Phase 2 up to its refund timelock, and the two activation periods."""
    r = rounds_for(n)
    return ROUND_PERIODS * r + (PHASE2_ROUND_PERIODS * r + 2) + 2


def admission_bound(windows: int, starts_per_link: int, chains: int = 1) -> int:
    """Most tournaments that may open in ``windows`` consecutive inter-link timelocks."""
    return windows * starts_per_link * chains


def admissions_in(events: Sequence[TcEvent], start: int, length: int) -> int:
    return sum(1 for e in events if e.event == "Opened" and start <= e.period < start + length)


# ── Chain ────────────────────────────────────────────────────


class TournamentChain:
    """One Tournament Chain bound to a ledger after :meth:`start`."""

    def __init__(
        self,
        links: int,
        n: int,
        *,
        t: int | None = None,
        m: int = 1,
        namespace: str = "tc",
        rate_limited: bool = False,
        t_z: int | None = None,
        registration_window: int = DEFAULT_REGISTRATION_WINDOW,
    ) -> None:
        self.n = n
        self.t = t if t is not None else tc_timelock(n)
        self.m = m
        self.namespace = namespace
        self.rate_limited = rate_limited
        self.t_z = t_z if t_z is not None else TC_TICK * self.t
        self.registration_window = registration_window
        self.names = TcNames(namespace)
        self.dag = build_tc(links, self.t, m, operators=n, namespace=namespace, rate_limited=rate_limited)
        self.deployment = Deployment(self.dag)
        self.capacity = links
        self.links: list[TcLink] = []
        self.anchors: dict[tuple[int, int], SlotAnchor] = {}
        self.events: list[TcEvent] = []
        self.started_at: int | None = None

    def _event(self, period: int, link: int, event: str, oid: str) -> None:
        self.events.append(TcEvent(period, link, event, oid, self.namespace))

    def leaf_timelock(self, signatures: int) -> int:
        """Delay before the next link when *signatures* of the N operators signed it."""
        if signatures < 1:
            raise NoSignatures("advancing a rate-limited link needs at least one signature")
        if signatures > self.n:
            raise InvalidParams(f"{signatures} signatures from {self.n} operators")
        return math.ceil(self.t_z / signatures)

    def start(self, ledger: Ledger) -> None:
        funding = funding_instance(f"{self.namespace}/funding", [Output(self.names.funding)])
        ledger.fund(funding)
        self.deployment.bind(self.names.funding, funding.outpoint(0))
        ledger.broadcast(self.deployment.instance(self.names.start), WATCHER, strict=True)
        ledger.settle()
        self.started_at = ledger.now

    def remaining_links(self) -> int:
        return self.capacity - len(self.links)

    def advance_link(self, ledger: Ledger, opener: str, signatures: int | None = None) -> TcLink:
        """Confirm the next OpenTournament link; raises ``TimelockNotExpired`` while it is locked."""
        if self.started_at is None:
            raise InvalidParams("chain not started")
        i = len(self.links) + 1
        if i > self.capacity:
            raise InvalidParams(f"chain {self.namespace} has no link {i}")
        tx = self.deployment.instance(self.names.link(i)).annotate(oid=opener)
        signed = self.n
        if self.rate_limited:
            signed = self.n if signatures is None else signatures
            tx = tx.annotate(leaf_timelock=self.leaf_timelock(signed))
        ledger.broadcast(tx, opener, strict=True)
        ledger.settle()
        template = self.dag.get(self.names.link(i))
        link = TcLink(
            index=i,
            opener=opener,
            next_link_timelock=template.outputs[0].timelock,
            start_outputs=tuple(tx.outpoint(k + 1) for k in range(self.m)),
            signature_count=signed,
            confirmed_at=ledger.now,
            tx_id=tx.tx_id,
        )
        self.links.append(link)
        self._event(ledger.now, i, "Advanced", opener)
        logger.debug("tc_advanced", namespace=self.namespace, link=i, oid=opener, signatures=signed)
        return link

    def _slot_dag(self, link: int, k: int) -> tuple[str, TemplateDag, Deployment]:
        slot = self.names.slot(link, k)
        funding_role = self.names.start_output(link, k)
        dag = build_phase1(self.n, slot, funding_role=funding_role)
        deployment = Deployment(dag, {funding_role: self.deployment.outpoint(funding_role)})
        return slot, dag, deployment

    def _prepare(self, ledger: Ledger, link: int, k: int, opener: str):
        if not 0 <= k < self.m:
            raise InvalidParams(f"link has {self.m} start outputs, no output {k}")
        if link == len(self.links) + 1:
            self.advance_link(ledger, opener)
        elif not 1 <= link <= len(self.links):
            raise InvalidParams(f"link {link} is not reachable from {len(self.links)} advanced links")
        slot, dag, deployment = self._slot_dag(link, k)
        outpoint = deployment.outpoint(self.names.start_output(link, k))
        if (link, k) in self.anchors or not ledger.is_live(outpoint) or ledger.pending_spender(outpoint):
            raise SlotTaken(link, k, opener)
        return slot, dag, deployment

    def _anchor(self, ledger: Ledger, link: int, k: int, opener: str, slot, dag, deployment, kickoff) -> SlotAnchor:
        anchor = SlotAnchor(
            link=link,
            output=k,
            opener=opener,
            slot=slot,
            opened_at=ledger.now,
            kickoff_tx=kickoff.tx_id,
            dag=dag,
            deployment=deployment,
        )
        self.anchors[(link, k)] = anchor
        self._event(ledger.now, link, "Opened", opener)
        logger.debug("tc_opened", namespace=self.namespace, link=link, output=k, oid=opener)
        return anchor

    def open_tournament(self, ledger: Ledger, link: int, k: int, opener: str) -> SlotAnchor:
        """Anchor a Phase 1 instance on start output *k* of *link*."""
        slot, dag, deployment = self._prepare(ledger, link, k, opener)
        kickoff = deployment.instance(Phase1Names(slot).kickoff).annotate(oid=opener)
        receipt = ledger.broadcast(kickoff, opener)
        ledger.settle()
        if receipt.status is not BroadcastStatus.CONFIRMED:
            raise SlotTaken(link, k, opener)
        return self._anchor(ledger, link, k, opener, slot, dag, deployment, kickoff)

    def open_concurrently(
        self, ledger: Ledger, link: int, k: int, openers: Sequence[str]
    ) -> tuple[SlotAnchor, list[str]]:
        """Same-period race for one start output: the first to confirm anchors, the rest fail for free."""
        if not openers:
            raise InvalidParams("no openers")
        slot, dag, deployment = self._prepare(ledger, link, k, openers[0])
        order = sorted(range(len(openers)), key=lambda idx: (ledger.delay_of(openers[idx]), idx))
        winner = openers[order[0]]
        kickoff = deployment.instance(Phase1Names(slot).kickoff).annotate(oid=winner)
        ledger.broadcast(kickoff, winner)
        for idx in order[1:]:
            receipt = ledger.broadcast(kickoff.annotate(oid=openers[idx]), openers[idx])
            logger.debug("tc_open_lost", link=link, output=k, oid=openers[idx], status=receipt.status.value)
        ledger.settle()
        anchor = self._anchor(ledger, link, k, winner, slot, dag, deployment, kickoff)
        return anchor, [openers[idx] for idx in order[1:]]

    def buffer_ok(self, side_system: SideSystem) -> bool:
        return self.remaining_links() >= required_buffer(side_system.active_utxos, side_system.decision_latency, self.t)


def parallel_chains(k: int, links: int, n: int, **options) -> list[TournamentChain]:
    """K independent chains under disjoint namespaces."""
    if k < 1:
        raise InvalidParams("need at least one chain")
    return [TournamentChain(links, n, namespace=f"tc{c}", **options) for c in range(k)]


# ── Open-and-Abandon ─────────────────────────────────────────


def detect_and_slash_oaa(
    chain: TournamentChain,
    anchor: SlotAnchor,
    ledger: Ledger,
    side_system: SideSystem,
    window: int | None = None,
) -> OaaVerdict:
    """Judge a slot once its registration window has elapsed."""
    window = chain.registration_window if window is None else window
    end = anchor.opened_at + window
    if ledger.now < end:
        raise WindowNotElapsed(f"{anchor.slot} registration window ends at period {end}, now {ledger.now}")
    prefix = anchor.slot + "/"
    seen = sum(
        1
        for c in ledger.confirmed
        if c.tx.kind == TemplateKind.REGISTRATION_PHASE1.value
        and c.tx.template_id.startswith(prefix)
        and anchor.opened_at <= c.period < end
    )
    verdict = OaaVerdict(anchor.slot, anchor.opener, end, seen, chain.buffer_ok(side_system))
    if not verdict.is_oaa:
        return verdict

    slashed = side_system.slash(anchor.opener)
    side_system.schedule_removal(anchor.opener, ledger.now)
    side_system.flag_migration(anchor.slot, ledger.now)
    chain._event(ledger.now, anchor.link, "OaaSlashed", anchor.opener)
    chain._event(ledger.now, anchor.link, "Migrated", anchor.opener)

    names = Phase1Names(anchor.slot)
    for x in operator_ids(chain.n):
        tx = anchor.deployment.instance(names.no_assertion(x))
        if ledger.check(tx, WATCHER) is None:
            ledger.broadcast(tx, WATCHER)
    ledger.settle()
    anchor.dead = dead_templates(anchor.dag, ledger, anchor.deployment.instance)
    logger.warning(
        "oaa_slashed",
        slot=anchor.slot,
        oid=anchor.opener,
        slashed=slashed,
        dead_templates=len(anchor.dead),
        buffer_ok=verdict.buffer_ok,
    )
    return verdict
