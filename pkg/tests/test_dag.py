"""Tests for battlesim.dag: brackets, DAG builders, realization and stats."""

import pytest

from battlesim.analyzer import detect_cycles, earliest_confirmation
from battlesim.dag import (
    Deployment,
    InvalidN,
    InvalidParams,
    Phase1Names,
    Phase2Names,
    TcNames,
    build_bracket,
    build_deployment,
    build_phase1,
    build_phase2,
    build_tc,
    buffered_template_count,
    estimate_stats,
    operator_ids,
    rounds_for,
    setup_permutation,
    slot_delays,
    stats,
    tc_timelock,
    what_if_opener_bonds,
)
from battlesim.economics import Phase2Schedule
from battlesim.graph import TemplateKind
from battlesim.ledger import Ledger, Output, funding_instance


# ── Helpers ──────────────────────────────────────────────────


class TestHelpers:
    @pytest.mark.parametrize("n,rounds", [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (1000, 10)])
    def test_rounds_for(self, n, rounds):
        assert rounds_for(n) == rounds

    def test_rounds_for_rejects_zero(self):
        with pytest.raises(InvalidN):
            rounds_for(0)

    def test_tc_timelock(self):
        assert tc_timelock(8) == 8
        assert tc_timelock(2) == 4

    def test_operator_ids(self):
        assert operator_ids(3) == ["1", "2", "3"]

    def test_setup_permutation_deterministic(self):
        a = setup_permutation(7, "L1", seed=3)
        assert a == setup_permutation(7, "L1", seed=3)
        assert sorted(a) == list(range(7))


# ── Bracket ──────────────────────────────────────────────────


class TestBracket:
    def setup_method(self):
        self.bracket = build_bracket(operator_ids(8))

    def test_depth_and_size(self):
        assert self.bracket.depth == 3
        assert self.bracket.size == 8

    def test_round_one_pairs_neighbours(self):
        first = self.bracket.rounds[0][0]
        assert first.pairings == [("1", "2")]

    def test_superimposed_pairings(self):
        final = self.bracket.match(3, 0)
        assert len(final.pairings) == 16
        assert ("1", "8") in final.pairings

    def test_alice_side(self):
        assert self.bracket.is_alice("1", 1)
        assert not self.bracket.is_alice("2", 1)
        assert self.bracket.opponents("1", 2) == ("3", "4")

    def test_meeting_round(self):
        assert self.bracket.meeting_round("1", "2") == 1
        assert self.bracket.meeting_round("1", "8") == 3

    def test_sibling(self):
        assert self.bracket.sibling(1, 0).index == 1
        assert self.bracket.sibling(3, 0) is None

    def test_padding_keeps_partial_matches(self):
        bracket = build_bracket(operator_ids(3))
        assert bracket.match(2, 0).pairings == [("1", "3"), ("2", "3")]
        assert bracket.match(1, 1).right == ()

    def test_needs_two(self):
        with pytest.raises(InvalidN):
            build_bracket(["1"])


# ── Tournament Chain ─────────────────────────────────────────


class TestBuildTc:
    def test_shape(self):
        dag = build_tc(3, 2, 2, operators=4)
        names = TcNames("tc")
        assert len(dag) == 4
        assert dag.is_external(names.funding)
        assert dag.producer(names.start_output(2, 1)) == (names.link(2), 2)
        assert detect_cycles(dag) == []

    def test_link_timelock_in_ticks(self):
        dag = build_tc(3, 2, 1)
        assert earliest_confirmation(dag)[TcNames("tc").link(3)] == 24

    def test_rate_limited_links_are_free(self):
        dag = build_tc(3, 2, 1, rate_limited=True)
        assert earliest_confirmation(dag)[TcNames("tc").link(3)] == 0

    def test_invalid(self):
        with pytest.raises(InvalidParams):
            build_tc(0, 1, 1)


# ── Phase 1 ──────────────────────────────────────────────────


class TestBuildPhase1:
    def setup_method(self):
        self.dag = build_phase1(4)
        self.names = Phase1Names("L1")

    def test_well_formed(self):
        assert detect_cycles(self.dag) == []
        assert self.dag.unresolved() == []
        assert self.dag.roots() == [self.names.kickoff]

    def test_per_operator_templates(self):
        assert len(self.dag.by_kind(TemplateKind.REGISTRATION_PHASE1)) == 4
        assert len(self.dag.by_kind(TemplateKind.WIN_PHASE1)) == 4
        assert len(self.dag.by_kind(TemplateKind.ENABLE_ROUND)) == 4

    def test_one_component_per_pair(self):
        assert len(self.dag.by_kind(TemplateKind.BOB_CHALLENGE)) == 6

    def test_registration_only_by_owner(self):
        assert self.dag.get(self.names.registration("3")).authorized == frozenset({"3"})

    def test_win_waits_for_final_selector(self):
        assert earliest_confirmation(self.dag)[self.names.win("1")] == 12

    def test_disable_templates(self):
        dag = build_phase1(4, with_disable=True)
        assert len(dag.by_kind(TemplateKind.ALICE_WAS_DISABLED)) == 6
        assert len(dag) == len(self.dag) + 12

    def test_metadata(self):
        assert self.dag.metadata["rounds"] == 2
        assert "assumptions" in self.dag.metadata

    def test_needs_two(self):
        with pytest.raises(InvalidN):
            build_phase1(1)


# ── Phase 2 ──────────────────────────────────────────────────


class TestBuildPhase2:
    def test_slot_delays_doubling(self):
        assert slot_delays(7, Phase2Schedule()) == [0, 1, 1, 2, 2, 2, 2]

    def test_rounds_and_refund_timelock(self):
        dag = build_phase2(2, 7)
        assert dag.metadata["phase2_rounds"] == 3
        assert dag.metadata["refund_timelock"] == 17
        assert sorted(dag.metadata["slot_owners"]) == sorted(f"W{j}" for j in range(1, 8))

    def test_too_few_rounds(self):
        with pytest.raises(InvalidParams):
            build_phase2(2, 7, rounds=2)

    def test_one_template_group_per_asserter(self):
        dag = build_phase2(3, 2)
        assert len(dag.by_kind(TemplateKind.START_TOURNAMENT)) == 3
        assert len(dag.by_kind(TemplateKind.REG_IN_PHASE2)) == 6
        assert detect_cycles(dag) == []

    def test_refund_timelock_on_template(self):
        dag = build_phase2(1, 0)
        names = Phase2Names("L1", "1")
        assert earliest_confirmation(dag)[names.refund] == 7

    def test_dual_proof_adds_cosign(self):
        dag = build_deployment(2, 1, dual_proof=True)
        assert len(dag.by_kind(TemplateKind.ALICE_INPUT_COSIG)) == 2

    def test_exclude_losers(self):
        dag = build_deployment(2, 2, challengers=["1", "2"], exclude_phase1_losers=True)
        assert len(dag.by_kind(TemplateKind.EXCLUDE_LOSER)) == 2


class TestBuildDeployment:
    def test_phase2_wired_to_wins(self):
        dag = build_deployment(4, 2)
        assert dag.unresolved() == []
        start = Phase2Names("L1", "2").start
        assert dag.producer(dag.get(start).inputs[0].role)[0] == Phase1Names("L1").win("2")

    def test_no_challengers(self):
        dag = build_deployment(2, 0)
        assert len(dag.by_kind(TemplateKind.REFUND)) == 2


# ── Realization ──────────────────────────────────────────────


class TestDeployment:
    def setup_method(self):
        self.names = TcNames("tc")
        self.dep = Deployment(build_tc(2, 1, 1))
        self.ledger = Ledger()
        funding = funding_instance("f", [Output(self.names.funding)])
        self.ledger.fund(funding)
        self.dep.bind(self.names.funding, funding.outpoint(0))

    def test_unbound_external(self):
        with pytest.raises(KeyError):
            Deployment(build_tc(1, 1, 1)).instance(self.names.start)

    def test_instances_are_cached(self):
        assert self.dep.instance(self.names.link(1)) is self.dep.instance(self.names.link(1))

    def test_realized_chain_respects_timelocks(self):
        for tid in (self.names.start, self.names.link(1), self.names.link(2)):
            self.ledger.broadcast(self.dep.instance(tid), "w")
        self.ledger.settle()
        l2 = self.dep.instance(self.names.link(2)).tx_id
        assert self.ledger.is_confirmed(self.dep.instance(self.names.link(1)).tx_id)
        self.ledger.advance(5)
        assert self.ledger.is_pending(l2)
        self.ledger.advance(1)
        assert self.ledger.confirmed_at(l2) == 6


# ── Stats ────────────────────────────────────────────────────


class TestStats:
    @pytest.mark.parametrize("n,templates,signatures", [(2, 20, 34), (4, 95, 176)])
    def test_known_counts(self, n, templates, signatures):
        s = stats(build_phase1(n))
        assert (s.template_count, s.signature_count) == (templates, signatures)

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 8])
    def test_estimate_matches_built(self, n):
        assert estimate_stats(n) == stats(build_phase1(n))

    @pytest.mark.parametrize("n,c", [(2, 0), (5, 0), (3, 1), (4, 3)])
    def test_estimate_matches_deployment(self, n, c):
        assert estimate_stats(n, c) == stats(build_deployment(n, c))

    def test_deployment_without_challengers(self):
        assert estimate_stats(2, 0).per_party_storage_bytes == 4048

    def test_quadratic_growth(self):
        assert estimate_stats(1000).template_count > 13 * 1000 * 999 // 2

    def test_opener_bonds_multiply(self):
        base = estimate_stats(4)
        assert what_if_opener_bonds(base, 4).template_count == 4 * base.template_count

    def test_buffered_count(self):
        assert buffered_template_count(2, 4) == 3 + 2 * 95
