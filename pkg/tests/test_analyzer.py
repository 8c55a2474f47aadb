"""Tests for battlesim.analyzer: cycles, topological order, timelock paths and sizes."""

import pytest

from battlesim.analyzer import (
    HEADER_BYTES,
    INPUT_BYTES,
    OUTPUT_BYTES,
    SIGNATURE_BYTES,
    dag_summary,
    detect_cycles,
    earliest_confirmation,
    party_storage_bytes,
    relevant_templates,
    shape_bytes,
    template_bytes,
    topological_sort,
    transitive_consumers,
)
from battlesim.graph import InputRef, OutputSpec, TemplateDag, TemplateKind, TxTemplate


# ── Helpers ──────────────────────────────────────────────────


def _t(tid, inputs=(), outputs=(), signers=()):
    return TxTemplate(
        id=tid,
        kind=TemplateKind.FLEX_INTERNAL,
        inputs=[i if isinstance(i, InputRef) else InputRef(i) for i in inputs],
        outputs=[OutputSpec(o) for o in outputs],
        signers=frozenset(signers),
    )


def _diamond() -> TemplateDag:
    """root splits into a (timelock 2) and b (timelock 5); c joins them."""
    dag = TemplateDag()
    dag.declare_external("fund")
    dag.add(_t("root", ["fund"], ["r1", "r2"], signers=["1", "2"]))
    dag.add(_t("a", [InputRef("r1", timelock=2)], ["a1"], signers=["1"]))
    dag.add(_t("b", [InputRef("r2", timelock=5)], ["b1"], signers=["2"]))
    dag.add(_t("c", ["a1", "b1"], signers=["1", "2"]))
    return dag


def _cyclic() -> TemplateDag:
    dag = TemplateDag()
    dag.add(_t("x", ["y_out"], ["x_out"]))
    dag.add(_t("y", ["x_out"], ["y_out"]))
    return dag


# ── Cycles and order ─────────────────────────────────────────


class TestDetectCycles:
    def test_acyclic(self):
        assert detect_cycles(_diamond()) == []

    def test_two_cycle(self):
        cycles = detect_cycles(_cyclic())
        assert cycles
        assert set(cycles[0]) == {"x", "y"}


class TestTopologicalSort:
    def test_producers_first(self):
        order = topological_sort(_diamond())
        assert order[0] == "root"
        assert order[-1] == "c"
        assert order.index("a") < order.index("c")

    def test_cycle_raises(self):
        with pytest.raises(ValueError, match="cycle"):
            topological_sort(_cyclic())


# ── Timelock paths ───────────────────────────────────────────


class TestEarliestConfirmation:
    def test_join_waits_for_slowest_branch(self):
        assert earliest_confirmation(_diamond()) == {"root": 0, "a": 2, "b": 5, "c": 5}

    def test_start_offset(self):
        assert earliest_confirmation(_diamond(), start=10)["c"] == 15


class TestReachability:
    def test_transitive_consumers(self):
        assert transitive_consumers(_diamond(), "root") == {"a", "b", "c"}
        assert transitive_consumers(_diamond(), "c") == set()

    def test_relevant_templates(self):
        assert [t.id for t in relevant_templates(_diamond(), "1")] == ["root", "a", "c"]


# ── Sizes ────────────────────────────────────────────────────


class TestSizes:
    def test_template_bytes(self):
        dag = _diamond()
        expected = HEADER_BYTES + INPUT_BYTES + 2 * OUTPUT_BYTES + 2 * SIGNATURE_BYTES
        assert template_bytes(dag, dag.get("root")) == expected

    def test_shape_bytes_matches_template(self):
        dag = _diamond()
        assert shape_bytes(2, 0, 2) == template_bytes(dag, dag.get("c"))

    def test_party_storage(self):
        dag = _diamond()
        assert party_storage_bytes(dag, "2") == sum(
            template_bytes(dag, dag.get(t)) for t in ("root", "b", "c")
        )
        assert party_storage_bytes(dag, "nobody") == 0


class TestSummary:
    def test_counts(self):
        stats = dag_summary(_diamond())
        assert stats["template_count"] == 4
        assert stats["edge_count"] == 4
        assert stats["signature_count"] == 6
        assert stats["roots"] == ["root"]
        assert stats["kinds"] == {"FlexInternal": 4}
        assert stats["has_cycles"] is False

    def test_cycle_flag(self):
        assert dag_summary(_cyclic())["has_cycles"] is True
