"""Tests for battlesim.graph: TxTemplate and TemplateDag wiring."""

import pytest

from battlesim.graph import InputRef, OutputSpec, TemplateDag, TemplateKind, TxTemplate


def _t(tid, inputs=(), outputs=(), kind=TemplateKind.FLEX_INTERNAL, **kw):
    return TxTemplate(
        id=tid,
        kind=kind,
        inputs=[i if isinstance(i, InputRef) else InputRef(i) for i in inputs],
        outputs=[o if isinstance(o, OutputSpec) else OutputSpec(o) for o in outputs],
        **kw,
    )


# ── TxTemplate ───────────────────────────────────────────────


class TestTxTemplate:
    def test_label_without_step(self):
        assert _t("x", kind=TemplateKind.REFUND).label == "Refund"

    def test_label_with_step(self):
        assert _t("x", kind=TemplateKind.ENABLE_ROUND, step="2").label == "EnableRound:2"

    def test_equality_by_id(self):
        assert _t("x", outputs=["a"]) == _t("x", outputs=["b"])
        assert _t("x") != _t("y")

    def test_hashable(self):
        assert len({_t("x"), _t("x"), _t("y")}) == 2

    def test_kind_str(self):
        assert str(TemplateKind.WIN_PHASE1) == "WinPhase1"


# ── TemplateDag ──────────────────────────────────────────────


class TestTemplateDag:
    def setup_method(self):
        self.dag = TemplateDag()
        self.dag.declare_external("fund")
        self.dag.add(_t("root", ["fund"], ["r"]))
        self.dag.add(_t("leaf", [InputRef("r", timelock=3)], ["l"]))

    def test_producer_and_consumers(self):
        assert self.dag.producer("r") == ("root", 0)
        assert self.dag.consumers("r") == ["leaf"]
        assert self.dag.neighbors("root") == {"leaf"}

    def test_duplicate_id_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            self.dag.add(_t("root"))

    def test_role_produced_twice_rejected(self):
        with pytest.raises(ValueError, match="produced twice"):
            self.dag.add(_t("other", outputs=["r"]))

    def test_external_role_cannot_be_produced(self):
        with pytest.raises(ValueError):
            self.dag.add(_t("other", outputs=["fund"]))

    def test_declare_external_after_producer(self):
        with pytest.raises(ValueError):
            self.dag.declare_external("r")

    def test_edges_carry_timelock(self):
        assert self.dag.edges() == [("root", "leaf", "r", 3)]
        assert self.dag.edge_count() == 1

    def test_input_timelock_uses_stricter_side(self):
        self.dag.add(_t("slow", ["l"], [OutputSpec("s", timelock=7)]))
        self.dag.add(_t("after", [InputRef("s", timelock=2)]))
        assert self.dag.input_timelock(InputRef("s", timelock=2)) == 7

    def test_unresolved(self):
        self.dag.add(_t("orphan", ["nowhere"]))
        assert self.dag.unresolved() == [("orphan", "nowhere")]

    def test_optional_input_unwired(self):
        self.dag.add(_t("opt", ["l", InputRef("maybe", optional=True)]))
        assert [r.role for r in self.dag.wired_inputs("opt")] == ["l"]
        assert self.dag.unresolved() == []

    def test_roots(self):
        assert self.dag.roots() == ["root"]

    def test_by_kind(self):
        self.dag.add(_t("refund", ["l"], kind=TemplateKind.REFUND))
        assert [t.id for t in self.dag.by_kind(TemplateKind.REFUND)] == ["refund"]

    def test_contains_and_len(self):
        assert "leaf" in self.dag
        assert len(self.dag) == 2

    def test_merge_wires_external_role(self):
        other = TemplateDag()
        other.declare_external("l")
        other.add(_t("tail", ["l"]))
        other.metadata["family"] = "tail"
        self.dag.merge(other)
        assert not self.dag.is_external("l")
        assert ("leaf", "tail", "l", 0) in self.dag.edges()
        assert self.dag.metadata["family"] == "tail"

    def test_merge_keeps_unmatched_external(self):
        other = TemplateDag()
        other.declare_external("elsewhere")
        other.add(_t("tail", ["elsewhere"]))
        self.dag.merge(other)
        assert self.dag.is_external("elsewhere")
