"""Tests for battlesim.tc: Tournament Chain links, slots and Open-and-Abandon."""

import pytest

from battlesim.dag import InvalidParams, Phase1Names
from battlesim.economics import CapitalTrace
from battlesim.ledger import Ledger, TimelockNotExpired
from battlesim.tc import (
    NoSignatures,
    SideSystem,
    SlotTaken,
    TournamentChain,
    WindowNotElapsed,
    admission_bound,
    admissions_in,
    detect_and_slash_oaa,
    parallel_chains,
    required_buffer,
    tournament_active_periods,
)


def _started(chain, ledger=None):
    ledger = ledger or Ledger()
    chain.start(ledger)
    return ledger


# ── Sizing helpers ───────────────────────────────────────────


class TestSizing:
    def test_required_buffer(self):
        assert required_buffer(3, 12, 2) == 4
        assert required_buffer(0, 0, 1) == 0
        assert required_buffer(0, 13, 2) == 2

    def test_required_buffer_needs_timelock(self):
        with pytest.raises(InvalidParams):
            required_buffer(1, 1, 0)

    def test_active_periods(self):
        assert tournament_active_periods(4) == 26

    def test_admission_bound(self):
        assert admission_bound(3, 2) == 6
        assert admission_bound(3, 2, chains=2) == 12


# ── Links ────────────────────────────────────────────────────


class TestLinks:
    def test_defaults(self):
        chain = TournamentChain(3, 4)
        assert chain.t == 6
        assert chain.t_z == 36
        assert chain.remaining_links() == 3

    def test_next_link_waits_for_timelock(self):
        chain = TournamentChain(3, 4)
        ledger = _started(chain)
        first = chain.advance_link(ledger, "1")
        assert first.confirmed_at == 0
        assert first.next_link_timelock == 36
        with pytest.raises(TimelockNotExpired):
            chain.advance_link(ledger, "2")
        ledger.advance(36)
        assert chain.advance_link(ledger, "2").confirmed_at == 36
        assert [e.event for e in chain.events] == ["Advanced", "Advanced"]

    def test_not_started(self):
        with pytest.raises(InvalidParams, match="not started"):
            TournamentChain(1, 2).advance_link(Ledger(), "1")

    def test_capacity(self):
        chain = TournamentChain(1, 2, t=1)
        ledger = _started(chain)
        chain.advance_link(ledger, "1")
        ledger.advance(6)
        with pytest.raises(InvalidParams, match="no link 2"):
            chain.advance_link(ledger, "1")


class TestRateLimiting:
    @pytest.mark.parametrize("signatures,expected", [(4, 9), (2, 18), (1, 36)])
    def test_leaf_timelock(self, signatures, expected):
        assert TournamentChain(2, 4, rate_limited=True).leaf_timelock(signatures) == expected

    def test_no_signatures(self):
        with pytest.raises(NoSignatures):
            TournamentChain(2, 4, rate_limited=True).leaf_timelock(0)

    def test_too_many_signatures(self):
        with pytest.raises(InvalidParams):
            TournamentChain(2, 4, rate_limited=True).leaf_timelock(5)

    def test_fewer_signatures_wait_longer(self):
        chain = TournamentChain(2, 4, rate_limited=True)
        ledger = _started(chain)
        with pytest.raises(TimelockNotExpired):
            chain.advance_link(ledger, "1", signatures=4)
        ledger.advance(9)
        link = chain.advance_link(ledger, "1", signatures=4)
        assert link.signature_count == 4
        assert link.confirmed_at == 9


# ── Slots ────────────────────────────────────────────────────


class TestSlots:
    def test_open_advances_link(self):
        chain = TournamentChain(2, 4)
        ledger = _started(chain)
        anchor = chain.open_tournament(ledger, 1, 0, "1")
        assert anchor.slot == "tc/L1/s0"
        assert anchor.opened_at == 0
        assert [e.event for e in chain.events] == ["Advanced", "Opened"]
        assert admissions_in(chain.events, 0, 1) == 1

    def test_slot_taken(self):
        chain = TournamentChain(2, 4)
        ledger = _started(chain)
        chain.open_tournament(ledger, 1, 0, "1")
        with pytest.raises(SlotTaken, match="already taken"):
            chain.open_tournament(ledger, 1, 0, "2")

    def test_bad_output(self):
        chain = TournamentChain(2, 4)
        ledger = _started(chain)
        with pytest.raises(InvalidParams):
            chain.open_tournament(ledger, 1, 1, "1")

    def test_unreachable_link(self):
        chain = TournamentChain(3, 4)
        ledger = _started(chain)
        with pytest.raises(InvalidParams, match="not reachable"):
            chain.open_tournament(ledger, 3, 0, "1")

    def test_concurrent_openers(self):
        chain = TournamentChain(2, 4, m=2)
        ledger = _started(chain)
        anchor, losers = chain.open_concurrently(ledger, 1, 1, ["a", "b", "c"])
        assert anchor.opener == "a"
        assert losers == ["b", "c"]

    def test_concurrent_needs_openers(self):
        chain = TournamentChain(2, 4)
        with pytest.raises(InvalidParams):
            chain.open_concurrently(_started(chain), 1, 0, [])

    def test_parallel_chains(self):
        chains = parallel_chains(2, 3, 4)
        assert [c.namespace for c in chains] == ["tc0", "tc1"]
        with pytest.raises(InvalidParams):
            parallel_chains(0, 3, 4)


# ── Open-and-Abandon ─────────────────────────────────────────


class TestOpenAndAbandon:
    def setup_method(self):
        self.chain = TournamentChain(4, 4)
        self.ledger = _started(self.chain)
        self.side = SideSystem(CapitalTrace(), decision_latency=2)
        self.side.post_bond("1", 10)
        self.anchor = self.chain.open_tournament(self.ledger, 1, 0, "1")

    def test_window_must_elapse(self):
        with pytest.raises(WindowNotElapsed):
            detect_and_slash_oaa(self.chain, self.anchor, self.ledger, self.side)

    def test_abandoned_slot_is_slashed(self):
        self.ledger.advance(1)
        verdict = detect_and_slash_oaa(self.chain, self.anchor, self.ledger, self.side)
        assert verdict.is_oaa
        assert self.side.bond("1") == 0
        assert self.side.capital.slashed == 10
        assert not self.side.is_removed("1", 2)
        assert self.side.is_removed("1", 3)
        assert self.side.migrations[0]["slot"] == self.anchor.slot
        assert {"OaaSlashed", "Migrated"} <= {e.event for e in self.chain.events}
        assert self.anchor.dead

    def test_registered_slot_is_kept(self):
        tx = self.anchor.deployment.instance(Phase1Names(self.anchor.slot).registration("2"))
        self.ledger.broadcast(tx, "2")
        self.ledger.settle()
        self.ledger.advance(1)
        verdict = detect_and_slash_oaa(self.chain, self.anchor, self.ledger, self.side)
        assert not verdict.is_oaa
        assert verdict.assertions_seen == 1
        assert self.side.bond("1") == 10

    def test_buffer(self):
        assert self.chain.buffer_ok(self.side)
        tight = SideSystem(decision_latency=1000, active_utxos=2)
        assert not self.chain.buffer_ok(tight)
