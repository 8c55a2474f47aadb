"""Template DAG analysis: cycles, topological order, timelock shortest paths and sizes."""

from __future__ import annotations

from collections import deque
from typing import Callable, Iterable

from battlesim.graph import TemplateDag, TxTemplate
from battlesim.ledger import Ledger, TemplateInstance

# Fixed-width template encoding used for storage estimates.
HEADER_BYTES = 8
INPUT_BYTES = 40  # 32-byte tx id, 4-byte index, 4-byte timelock
OUTPUT_BYTES = 16  # 8-byte value, 4-byte timelock, 4-byte role
SIGNATURE_BYTES = 64


# ── Cycle Detection (DFS + recursion stack) ──────────────────


def detect_cycles(dag: TemplateDag) -> list[list[str]]:
    """Find cycles in the producer → consumer graph using iterative DFS.

    Every built DAG must come back empty; a non-empty result means two
    templates wait on each other's outputs.
    """
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[str, int] = {n: WHITE for n in dag.template_ids()}
    parent: dict[str, str | None] = {n: None for n in dag.template_ids()}
    cycles: list[list[str]] = []

    for start in dag.template_ids():
        if color[start] != WHITE:
            continue
        stack = [(start, iter(sorted(dag.neighbors(start))))]
        color[start] = GRAY

        while stack:
            u, neighbors_iter = stack[-1]
            v = next(neighbors_iter, None)
            if v is None:
                color[u] = BLACK
                stack.pop()
            elif color[v] == GRAY:
                cycle = [v, u]
                cur = u
                while cur != v:
                    cur = parent[cur]  # type: ignore[assignment]
                    if cur is None:
                        break
                    cycle.append(cur)
                cycle.reverse()
                cycles.append(cycle)
            elif color[v] == WHITE:
                parent[v] = u
                color[v] = GRAY
                stack.append((v, iter(sorted(dag.neighbors(v)))))

    return cycles


# ── Topological Sort (Kahn's algorithm) ──────────────────────


def topological_sort(dag: TemplateDag) -> list[str]:
    """Producers before consumers. Raises ``ValueError`` on a cycle."""
    in_degree: dict[str, int] = {n: 0 for n in dag.template_ids()}
    for node in dag.template_ids():
        for consumer in dag.neighbors(node):
            in_degree[consumer] += 1

    queue: deque[str] = deque(n for n, d in in_degree.items() if d == 0)
    order: list[str] = []

    while queue:
        node = queue.popleft()
        order.append(node)
        for consumer in sorted(dag.neighbors(node)):
            in_degree[consumer] -= 1
            if in_degree[consumer] == 0:
                queue.append(consumer)

    if len(order) != dag.node_count():
        raise ValueError("template graph contains a cycle")
    return order


# ── Timelock shortest paths ──────────────────────────────────


def earliest_confirmation(dag: TemplateDag, start: int = 0) -> dict[str, int]:
    """Earliest period each template could confirm if every party rushed.

    Conflicts are ignored, so this is an optimistic lower bound: a template
    confirms no earlier than the latest of (producer time + input timelock).
    """
    earliest: dict[str, int] = {}
    for tid in topological_sort(dag):
        at = start
        for ref in dag.wired_inputs(tid):
            producer = dag.producer(ref.role)
            base = earliest[producer[0]] if producer else start
            at = max(at, base + dag.input_timelock(ref))
        earliest[tid] = at
    return earliest


# ── Reachability ─────────────────────────────────────────────


def transitive_consumers(dag: TemplateDag, template_id: str) -> set[str]:
    """Every template reachable from *template_id* (excluding itself)."""
    visited: set[str] = set()
    stack: list[str] = list(dag.neighbors(template_id))
    while stack:
        cur = stack.pop()
        if cur in visited:
            continue
        visited.add(cur)
        stack.extend(dag.neighbors(cur) - visited)
    return visited


def relevant_templates(dag: TemplateDag, party: str) -> list[TxTemplate]:
    """Templates a party must store: every one it pre-signs."""
    return [t for t in dag.templates() if party in t.signers]


# ── Sizes ────────────────────────────────────────────────────


def template_bytes(dag: TemplateDag, template: TxTemplate) -> int:
    return (
        HEADER_BYTES
        + INPUT_BYTES * len(dag.wired_inputs(template.id))
        + OUTPUT_BYTES * len(template.outputs)
        + SIGNATURE_BYTES * len(template.signers)
    )


def shape_bytes(inputs: int, outputs: int, signers: int) -> int:
    return HEADER_BYTES + INPUT_BYTES * inputs + OUTPUT_BYTES * outputs + SIGNATURE_BYTES * signers


def party_storage_bytes(dag: TemplateDag, party: str) -> int:
    return sum(template_bytes(dag, t) for t in relevant_templates(dag, party))


# ── Liveness of realized templates ───────────────────────────


def dead_templates(
    dag: TemplateDag,
    ledger: Ledger,
    instance_of: Callable[[str], TemplateInstance],
    within: Iterable[str] | None = None,
) -> set[str]:
    """Templates that can never confirm on *ledger* any more.

    A template is dead when it is unconfirmed and one of its inputs was spent
    by another transaction, or comes from a dead producer.
    """
    scope = set(within) if within is not None else None
    dead: set[str] = set()
    for tid in topological_sort(dag):
        inst = instance_of(tid)
        if ledger.is_confirmed(inst.tx_id):
            continue
        for ref, tx_input in zip(dag.wired_inputs(tid), inst.inputs):
            producer = dag.producer(ref.role)
            if producer is not None and producer[0] in dead:
                dead.add(tid)
                break
            spender = ledger.spender_of(tx_input.outpoint)
            if spender is not None and spender != inst.tx_id:
                dead.add(tid)
                break
    return dead if scope is None else dead & scope


def dag_summary(dag: TemplateDag) -> dict:
    """Counts that the export and the CLI print."""
    kinds: dict[str, int] = {}
    for template in dag.templates():
        kinds[template.kind.value] = kinds.get(template.kind.value, 0) + 1
    return {
        "template_count": dag.node_count(),
        "edge_count": dag.edge_count(),
        "signature_count": sum(len(t.signers) for t in dag.templates()),
        "roots": dag.roots(),
        "kinds": dict(sorted(kinds.items())),
        "has_cycles": bool(detect_cycles(dag)),
    }
