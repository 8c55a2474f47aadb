"""Template DAG export (DOT, JSON) and structural diff of two JSON exports."""

from __future__ import annotations

import json
from pathlib import Path

from battlesim.analyzer import dag_summary
from battlesim.graph import TemplateDag, TemplateKind

# Fill colour per template family in DOT output.
_KIND_COLOURS = {
    TemplateKind.TC_START: "#fde2e4",
    TemplateKind.OPEN_TOURNAMENT: "#fde2e4",
    TemplateKind.START_PHASE1: "#e8f4fd",
    TemplateKind.REGISTRATION_PHASE1: "#e8f4fd",
    TemplateKind.ENABLE_ROUND: "#e8f4fd",
    TemplateKind.WIN_PHASE1: "#d8f3dc",
    TemplateKind.START_TOURNAMENT: "#fff3bf",
    TemplateKind.EARLY_REFUND: "#d8f3dc",
    TemplateKind.REFUND: "#d8f3dc",
}
_DEFAULT_COLOUR = "#f1f3f5"


def _template_record(dag: TemplateDag, template_id: str) -> dict:
    t = dag.get(template_id)
    return {
        "id": t.id,
        "kind": t.kind.value,
        "step": t.step,
        "inputs": [{"role": r.role, "timelock": dag.input_timelock(r)} for r in dag.wired_inputs(t.id)],
        "outputs": [{"role": o.role, "timelock": o.timelock} for o in t.outputs],
        "authorized": sorted(t.authorized),
        "signers": sorted(t.signers),
    }


# ── DOT (Graphviz) ───────────────────────────────────────────


def export_dot(dag: TemplateDag, output: str | Path | None = None) -> str:
    """Graphviz digraph: one box per template, one edge per wired input labelled with its timelock."""
    lines: list[str] = [
        "digraph templates {",
        "    rankdir=LR;",
        '    node [shape=box, style=filled, fontname="Helvetica"];',
        "",
    ]
    for t in dag.templates():
        colour = _KIND_COLOURS.get(t.kind, _DEFAULT_COLOUR)
        lines.append(f'    "{t.id}" [label="{t.label}\\n{t.id}", fillcolor="{colour}"];')
    lines.append("")
    for producer, consumer, _role, timelock in sorted(dag.edges()):
        label = f' [label="{timelock}"]' if timelock else ""
        lines.append(f'    "{producer}" -> "{consumer}"{label};')
    lines.append("}")
    content = "\n".join(lines) + "\n"

    if output:
        Path(output).write_text(content, encoding="utf-8")
    return content


# ── JSON ─────────────────────────────────────────────────────


def export_json(dag: TemplateDag, output: str | Path | None = None) -> str:
    """Export templates, edges and summary counts.

    Format::

        {
            "templates": [{"id": ..., "kind": ..., "inputs": [...], "outputs": [...], ...}],
            "edges": [{"from": ..., "to": ..., "role": ..., "timelock": N}],
            "external": [...],
            "metadata": {...},
            "stats": {"template_count": N, ...}
        }
    """
    data = {
        "templates": [_template_record(dag, tid) for tid in sorted(dag.template_ids())],
        "edges": [
            {"from": p, "to": c, "role": role, "timelock": tl} for p, c, role, tl in sorted(dag.edges())
        ],
        "metadata": dag.metadata,
        "stats": dag_summary(dag),
    }
    content = json.dumps(data, indent=2, sort_keys=True, default=str) + "\n"

    if output:
        Path(output).write_text(content, encoding="utf-8")
    return content


def load_export(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "templates" not in data:
        raise ValueError(f"{path} is not a template DAG export")
    return data


# ── Diff ─────────────────────────────────────────────────────


def diff_exports(old: dict, new: dict) -> dict:
    """Templates added, removed and changed between two JSON exports."""
    a = {t["id"]: t for t in old["templates"]}
    b = {t["id"]: t for t in new["templates"]}
    changed = []
    for tid in sorted(a.keys() & b.keys()):
        fields = sorted(k for k in a[tid].keys() | b[tid].keys() if a[tid].get(k) != b[tid].get(k))
        if fields:
            changed.append({"id": tid, "fields": fields})
    return {
        "added": sorted(b.keys() - a.keys()),
        "removed": sorted(a.keys() - b.keys()),
        "changed": changed,
    }


def format_diff(diff: dict) -> str:
    lines = []
    lines.extend(f"+ {tid}" for tid in diff["added"])
    lines.extend(f"- {tid}" for tid in diff["removed"])
    lines.extend(f"~ {c['id']} ({', '.join(c['fields'])})" for c in diff["changed"])
    if not lines:
        return "(no differences)\n"
    return "\n".join(lines) + "\n"
