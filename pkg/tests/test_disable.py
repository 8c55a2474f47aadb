"""Tests for battlesim.disable: secret sharing, loss reveals and front-run blocking."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from battlesim.dag import BOB_CHALLENGE, Deployment, Phase1Names, build_phase1
from battlesim.disable import (
    FIELD_PRIME,
    BadThreshold,
    DisableBook,
    DisableMethod,
    DisableRegistry,
    NotLoser,
    RevealedMaterial,
    commit,
    decrypt,
    encrypt,
    enforce_disable,
    on_loss_reveal,
    reconstruct,
    split,
    verify_setup,
)
from battlesim.flex import FlexEvent, FlexInputs, FlexInstance, Move, step
from battlesim.graph import TemplateKind
from battlesim.ledger import BroadcastStatus, Ledger, Output, funding_instance
from battlesim.tournament import CASE_ALICE_ONLY, CASE_DISPUTE, run_phase1

PEERS = ["1", "2", "3", "4"]


def _lost_dispute(loser, winner):
    inst = FlexInstance(
        id="d",
        alice=loser,
        bob=winner,
        inputs=FlexInputs("acw", "be", "ae"),
        verdict=0,
        balances={loser: 100, winner: 100},
    )
    for period, event, party in [
        (0, FlexEvent.BOB_CHALLENGE, winner),
        (0, FlexEvent.POST_BOND, winner),
        (0, FlexEvent.POST_BOND, loser),
        (1, FlexEvent.ALICE_INPUT, loser),
        (1, FlexEvent.BOB_INPUT, winner),
        (2, FlexEvent.RESOLVE_BY_AVP, winner),
    ]:
        inst = step(inst, Move(event, party), period)
    return inst


# ── Primitives ───────────────────────────────────────────────


class TestSharing:
    def test_any_threshold_subset_reconstructs(self):
        shares = split(123456789, 3, 5, random.Random(1))
        assert reconstruct(shares[:3]) == 123456789
        assert reconstruct(shares[2:]) == 123456789

    def test_too_few_shares_miss(self):
        shares = split(123456789, 3, 5, random.Random(1))
        assert reconstruct(shares[:2]) != 123456789

    @pytest.mark.parametrize("t,m", [(0, 3), (4, 3)])
    def test_bad_threshold(self, t, m):
        with pytest.raises(BadThreshold):
            split(1, t, m, random.Random(0))

    @given(
        st.integers(min_value=0, max_value=FIELD_PRIME - 1),
        st.integers(min_value=1, max_value=5).flatmap(lambda t: st.tuples(st.just(t), st.integers(min_value=t, max_value=7))),
        st.randoms(use_true_random=False),
    )
    @settings(max_examples=50, deadline=None)
    def test_threshold_shares_recover_secret(self, secret, tm, rng):
        t, m = tm
        shares = split(secret, t, m, random.Random(rng.random()))
        picked = rng.sample(shares, t)
        assert reconstruct(picked) == secret

    def test_no_shares(self):
        with pytest.raises(ValueError):
            reconstruct([])

    def test_stream_cipher(self):
        key = b"k" * 32
        assert decrypt(key, encrypt(key, b"secret")) == b"secret"
        assert encrypt(key, b"secret") != b"secret"


# ── Setup ────────────────────────────────────────────────────


class TestCommit:
    @pytest.mark.parametrize("method", list(DisableMethod))
    def test_setup_verifies(self, method):
        commitment, secrets = commit("1", method, random.Random(3), peers=PEERS, threshold=2)
        assert verify_setup(commitment, secrets)

    def test_tampered_secret_fails(self):
        commitment, secrets = commit("1", DisableMethod.DIRECT, random.Random(3))
        forged = type(secrets)(secrets.party, secrets.secret + 1)
        assert not verify_setup(commitment, forged)

    def test_threshold_defaults_to_all_peers(self):
        commitment, _ = commit("1", DisableMethod.THRESHOLD, random.Random(3), peers=PEERS)
        assert (commitment.threshold, commitment.shares) == (3, 3)

    def test_record_hides_ciphertexts(self):
        commitment, _ = commit("1", DisableMethod.PAIRWISE, random.Random(3), peers=PEERS)
        record = commitment.record()
        assert "ciphertexts" not in record
        assert sorted(record["pair_digests"]) == ["2", "3", "4"]


# ── Loss reveals ─────────────────────────────────────────────


class TestLossReveal:
    def test_direct_loss_discloses(self):
        commitment, secrets = commit("1", DisableMethod.DIRECT, random.Random(5))
        registry = DisableRegistry([commitment])
        material = on_loss_reveal(commitment, secrets, _lost_dispute("1", "2"))
        assert registry.record(material) == secrets.secret
        assert registry.is_disabled("1")

    def test_pairwise_loss_discloses(self):
        commitment, secrets = commit("1", DisableMethod.PAIRWISE, random.Random(5), peers=PEERS)
        registry = DisableRegistry([commitment])
        registry.record(on_loss_reveal(commitment, secrets, _lost_dispute("1", "3")))
        assert registry.is_disabled("1")

    def test_threshold_needs_enough_losses(self):
        commitment, secrets = commit("1", DisableMethod.THRESHOLD, random.Random(5), peers=PEERS, threshold=2)
        registry = DisableRegistry([commitment])
        registry.record(on_loss_reveal(commitment, secrets, _lost_dispute("1", "2")))
        assert not registry.is_disabled("1")
        registry.record(on_loss_reveal(commitment, secrets, _lost_dispute("1", "4")))
        assert registry.is_disabled("1")

    def test_winner_reveals_nothing(self):
        commitment, secrets = commit("2", DisableMethod.DIRECT, random.Random(5))
        with pytest.raises(NotLoser):
            on_loss_reveal(commitment, secrets, _lost_dispute("1", "2"))

    def test_wrong_material_is_ignored(self):
        commitment, _ = commit("1", DisableMethod.DIRECT, random.Random(5))
        registry = DisableRegistry([commitment])
        assert registry.record(RevealedMaterial("1", "2", secret=7)) is None
        assert not registry.is_disabled("1")

    def test_only_unbonded_actions_are_blocked(self):
        commitment, secrets = commit("1", DisableMethod.DIRECT, random.Random(5))
        registry = DisableRegistry([commitment])
        registry.record(on_loss_reveal(commitment, secrets, _lost_dispute("1", "2")))
        assert not registry.may("1", "challenge")
        assert registry.may("1", "alice_input")
        assert registry.may("2", "challenge")

    def test_export_is_sorted(self):
        commitments = [commit(p, DisableMethod.DIRECT, random.Random(0))[0] for p in ("3", "1")]
        assert [r["party"] for r in DisableRegistry(commitments).export()] == ["1", "3"]


# ── Enforcement ──────────────────────────────────────────────


class TestEnforcement:
    def setup_method(self):
        self.dag = build_phase1(2, with_disable=True)
        self.names = Phase1Names("L1")
        self.ledger = Ledger()
        funding = funding_instance("L1/funding", [Output(self.names.funding)])
        self.ledger.fund(funding)
        self.deployment = Deployment(self.dag, {self.names.funding: funding.outpoint(0)})
        for tid, by in [(self.names.kickoff, "1"), (self.names.registration("1"), "1"), (self.names.registration("2"), "2")]:
            self.ledger.broadcast(self.deployment.instance(tid), by)
        self.ledger.settle()
        self.challenge = self.names.pairing(1, "1", "2", BOB_CHALLENGE)

    def test_enabled_party_goes_through(self):
        blocked, receipt = enforce_disable(self.ledger, self.deployment, DisableRegistry(), self.challenge, "2")
        assert not blocked
        assert receipt.status is BroadcastStatus.CONFIRMED

    def test_disabled_party_is_front_run(self):
        commitment, secrets = commit("2", DisableMethod.DIRECT, random.Random(9))
        registry = DisableRegistry([commitment])
        registry.record(RevealedMaterial("2", "1", secret=secrets.secret))
        blocked, receipt = enforce_disable(self.ledger, self.deployment, registry, self.challenge, "2")
        assert blocked
        assert receipt.status is BroadcastStatus.CONFLICT

    def test_deferred_settlement_keeps_both_queued(self):
        commitment, secrets = commit("2", DisableMethod.DIRECT, random.Random(9))
        registry = DisableRegistry([commitment])
        registry.record(RevealedMaterial("2", "1", secret=secrets.secret))
        blocked, receipt = enforce_disable(self.ledger, self.deployment, registry, self.challenge, "2", settle=False)
        assert blocked
        assert len(self.ledger.pending) == 2
        self.ledger.settle()
        assert receipt.status is BroadcastStatus.CONFLICT


# ── Engine wiring ────────────────────────────────────────────


class TestDisableBook:
    def test_create_publishes_every_party(self):
        book = DisableBook.create(PEERS, DisableMethod.PAIRWISE, random.Random(2))
        assert [r["party"] for r in book.registry.export()] == PEERS
        assert all(verify_setup(book.registry.commitments[p], book.secrets[p]) for p in PEERS)

    def test_resolution_disables_loser(self):
        book = DisableBook.create(PEERS, DisableMethod.DIRECT, random.Random(2))
        assert book.on_resolved(_lost_dispute("3", "1"))
        assert book.disabled() == ["3"]

    def test_unresolved_dispute_reveals_nothing(self):
        book = DisableBook.create(PEERS, DisableMethod.DIRECT, random.Random(2))
        inst = FlexInstance(id="d", alice="1", bob="2", inputs=FlexInputs("acw", "be", "ae"), verdict=1)
        assert not book.on_resolved(inst)
        assert book.disabled() == []

    def test_threshold_waits_for_enough_losses(self):
        book = DisableBook.create(PEERS, DisableMethod.THRESHOLD, random.Random(2), threshold=2)
        assert not book.on_resolved(_lost_dispute("1", "2"))
        assert book.on_resolved(_lost_dispute("1", "3"))


class TestBracketBlocking:
    SPECS = {"1": "honest", "2": "always_challenge"}

    def setup_method(self):
        self.book = DisableBook.create(["1", "2"], DisableMethod.DIRECT, random.Random(4))
        self.ledger = Ledger()

    def _bracket(self, slot):
        return run_phase1(build_phase1(2, slot, with_disable=True), self.SPECS, self.ledger, disable=self.book)

    def test_losing_challenger_is_disabled(self):
        outcome = self._bracket("L1")
        assert outcome.winner == "1"
        assert outcome.cases[0].label == CASE_DISPUTE
        assert outcome.disabled == ["2"]
        assert outcome.blocked == []

    def test_disabled_challenge_is_front_run_in_next_bracket(self):
        self._bracket("L1")
        second = self._bracket("L2")
        assert second.blocked == [Phase1Names("L2").pairing(1, "1", "2", BOB_CHALLENGE)]
        assert any(t["kind"] == TemplateKind.BOB_WAS_DISABLED.value for t in second.trace)
        assert not any(t["kind"] == TemplateKind.BOB_CHALLENGE.value for t in second.trace)
        assert second.winner == "1"
        assert second.makespan == 6
        assert second.eliminated == {"2": 1}
        assert second.cases[0].label == CASE_ALICE_ONLY
        assert second.violations == []

    def test_without_book_nothing_is_blocked(self):
        run_phase1(build_phase1(2, "L1", with_disable=True), self.SPECS, self.ledger)
        second = run_phase1(build_phase1(2, "L2", with_disable=True), self.SPECS, self.ledger)
        assert second.blocked == []
        assert second.cases[0].label == CASE_DISPUTE
