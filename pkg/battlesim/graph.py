"""Template DAG structures: TxTemplate, wiring references and the TemplateDag container."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from battlesim.ledger import ANYONE


class TemplateKind(str, Enum):
    TC_START = "TCStart"
    OPEN_TOURNAMENT = "OpenTournament"
    START_PHASE1 = "StartPhase1"
    REGISTRATION_PHASE1 = "RegistrationPhase1"
    NO_ASSERTION = "NoAssertion"
    ENABLE_ROUND = "EnableRound"
    BOB_CHALLENGE = "BobChallenge"
    NO_BOB_CHALLENGE = "NoBobChallenge"
    ASSERTER_TIMEOUT = "AsserterTimeout"
    DISPUTE_TIMEOUT = "DisputeTimeout"
    WIN_PHASE1 = "WinPhase1"
    START_TOURNAMENT = "StartTournament"
    REG_IN_PHASE2 = "RegInPhase2"
    REG_TIMEOUT = "RegTimeout"
    EXCLUDE_LOSER = "ExcludeLoser"
    TRY_EARLY_REFUND = "TryEarlyRefund"
    EARLY_REFUND = "EarlyRefund"
    STILL_OPEN = "StillOpen"
    REFUND = "Refund"
    ALICE_INPUT = "AliceInput"
    BOB_INPUT = "BobInput"
    ALICE_INPUT_COSIG = "AliceInputCoSig"
    ALICE_WAS_DISABLED = "AliceWasDisabled"
    BOB_WAS_DISABLED = "BobWasDisabled"
    FLEX_INTERNAL = "FlexInternal"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class InputRef:
    """Reference to the output that feeds a template input, by role name.

    An ``optional`` input whose role has no producer is *unwired*: realized
    instances omit it entirely.
    """

    role: str
    timelock: int = 0
    optional: bool = False


@dataclass(frozen=True)
class OutputSpec:
    role: str
    timelock: int = 0
    value: int = 0


@dataclass
class TxTemplate:
    """A single pre-signed transaction node."""

    id: str
    kind: TemplateKind
    inputs: list[InputRef]
    outputs: list[OutputSpec]
    authorized: frozenset[str] = frozenset({ANYONE})
    signers: frozenset[str] = frozenset()
    slot: str = ""
    step: str | None = None
    params: dict[str, str] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return f"{self.kind.value}:{self.step}" if self.step else self.kind.value

    def __hash__(self) -> int:
        return hash(self.id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TxTemplate):
            return NotImplemented
        return self.id == other.id

    def __repr__(self) -> str:
        return f"TxTemplate({self.id}, {self.label})"


class TemplateDag:
    """Directed graph of templates.

    Edges go from producer → consumer: the template that creates an output
    points at every template that may spend it.
    """

    def __init__(self) -> None:
        self._templates: dict[str, TxTemplate] = {}
        self._producers: dict[str, tuple[str, int]] = {}
        self._consumers: dict[str, list[str]] = {}
        self._external: set[str] = set()
        self.metadata: dict = {}

    # ── Mutators ──────────────────────────────────────────────

    def add(self, template: TxTemplate) -> TxTemplate:
        if template.id in self._templates:
            raise ValueError(f"duplicate template id {template.id!r}")
        roles = [o.role for o in template.outputs]
        for role in roles:
            if role in self._producers or role in self._external or roles.count(role) > 1:
                raise ValueError(f"role {role!r} produced twice")
        for index, output in enumerate(template.outputs):
            self._producers[output.role] = (template.id, index)
        for ref in template.inputs:
            self._consumers.setdefault(ref.role, []).append(template.id)
        self._templates[template.id] = template
        return template

    def declare_external(self, role: str) -> None:
        """Mark *role* as funded from outside the DAG."""
        if role in self._producers:
            raise ValueError(f"role {role!r} already has a producer")
        self._external.add(role)

    def merge(self, other: TemplateDag) -> TemplateDag:
        """Fold *other* into this DAG; its external roles may become wired here."""
        for role in other._external:
            if role not in self._producers:
                self._external.add(role)
        for template in other.templates():
            self._external.difference_update(o.role for o in template.outputs)
            self.add(template)
        for key, value in other.metadata.items():
            self.metadata.setdefault(key, value)
        return self

    # ── Queries ───────────────────────────────────────────────

    def get(self, template_id: str) -> TxTemplate:
        return self._templates[template_id]

    def templates(self) -> list[TxTemplate]:
        """Return all templates in insertion order."""
        return list(self._templates.values())

    def template_ids(self) -> list[str]:
        return list(self._templates.keys())

    def producer(self, role: str) -> tuple[str, int] | None:
        return self._producers.get(role)

    def consumers(self, role: str) -> list[str]:
        return list(self._consumers.get(role, []))

    def is_external(self, role: str) -> bool:
        return role in self._external

    def wired_inputs(self, template_id: str) -> list[InputRef]:
        """Inputs that a realized instance carries (unwired optionals dropped)."""
        return [
            ref
            for ref in self._templates[template_id].inputs
            if not (ref.optional and ref.role not in self._producers and ref.role not in self._external)
        ]

    def input_timelock(self, ref: InputRef) -> int:
        """Effective relative timelock: the stricter of input and producing output."""
        producer = self._producers.get(ref.role)
        if producer is None:
            return ref.timelock
        output = self._templates[producer[0]].outputs[producer[1]]
        return max(ref.timelock, output.timelock)

    def neighbors(self, template_id: str) -> set[str]:
        """Templates that spend any output of *template_id*."""
        template = self._templates[template_id]
        out: set[str] = set()
        for output in template.outputs:
            out.update(self._consumers.get(output.role, ()))
        return out

    def edges(self) -> list[tuple[str, str, str, int]]:
        """(producer, consumer, role, timelock) for every wired input."""
        result = []
        for template in self._templates.values():
            for ref in self.wired_inputs(template.id):
                producer = self._producers.get(ref.role)
                if producer is not None:
                    result.append((producer[0], template.id, ref.role, ref.timelock))
        return result

    def unresolved(self) -> list[tuple[str, str]]:
        """Required inputs with neither a producer nor external funding."""
        missing = []
        for template in self._templates.values():
            for ref in template.inputs:
                if ref.optional:
                    continue
                if ref.role not in self._producers and ref.role not in self._external:
                    missing.append((template.id, ref.role))
        return missing

    def by_kind(self, kind: TemplateKind) -> list[TxTemplate]:
        return [t for t in self._templates.values() if t.kind is kind]

    def roots(self) -> list[str]:
        """Templates whose inputs are all externally funded."""
        return [
            t.id
            for t in self._templates.values()
            if all(ref.role not in self._producers for ref in t.inputs)
        ]

    def node_count(self) -> int:
        return len(self._templates)

    def edge_count(self) -> int:
        return len(self.edges())

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def __len__(self) -> int:
        return self.node_count()

    def __repr__(self) -> str:
        return f"TemplateDag(templates={self.node_count()})"
