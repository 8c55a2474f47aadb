"""Assertion verification and contestable dispute resolution over synthetic chains.

A synthetic chain is an ordered list of blocks, each with a score increment
and the peg-out events it contains; the cumulative score decides fork choice.
Two contestable resolutions are offered: the dual-proof one (``"A"``), where
both circuits check both proofs, and the score-carry one (``"B"``), where each
circuit checks one proof and the payouts key off the revealed truth values.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import structlog
import yaml

from battlesim.flex import ALICE, BOB
from battlesim.ledger import SimulationError

logger = structlog.get_logger()


class MalformedAssertion(SimulationError):
    pass


class FieldMismatch(SimulationError):
    def __init__(self, field_name: str) -> None:
        self.field_name = field_name
        super().__init__(f"BobInput copies a different {field_name} than the one Alice signed")


class ScoreNotGreater(SimulationError):
    def __init__(self, s_a: int, s_b: int) -> None:
        self.s_a = s_a
        self.s_b = s_b
        super().__init__(f"counter-chain score {s_b} does not exceed {s_a}")


class ConflictingReveals(SimulationError):
    pass


class BothInvalid(SimulationError):
    pass


# ── Synthetic chains ─────────────────────────────────────────


@dataclass(frozen=True)
class Block:
    score: int
    events: tuple[str, ...] = ()


@dataclass(frozen=True)
class Chain:
    blocks: tuple[Block, ...]

    @property
    def score(self) -> int:
        return sum(b.score for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> Chain:
        blocks = []
        for i, rec in enumerate(records):
            score = rec.get("score", 0)
            if not isinstance(score, int) or score < 0:
                raise MalformedAssertion(f"block {i}: score must be a non-negative integer")
            blocks.append(Block(score, tuple(str(e) for e in rec.get("events") or ())))
        return cls(tuple(blocks))


def load_chain(path: Path) -> Chain:
    """Read a synthetic chain fixture: a ``blocks:`` list of ``{score, events}``."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    return Chain.from_records(data.get("blocks", []))


def canonical_chain(chains: Sequence[Chain]) -> Chain:
    """Heaviest chain; the earliest one listed keeps a tie."""
    if not chains:
        raise ValueError("no chains to choose from")
    best = chains[0]
    for chain in chains[1:]:
        if chain.score > best.score:
            best = chain
    return best


@dataclass(frozen=True)
class PegOutPos:
    block: int
    tx: int


@dataclass(frozen=True)
class Assertion:
    """A peg-out happened at ``position`` with at least ``work_past`` score after it."""

    peg_out_id: str
    position: PegOutPos
    work_past: int = 0

    def __post_init__(self) -> None:
        if self.position.block < 0 or self.position.tx < 0 or self.work_past < 0:
            raise MalformedAssertion(f"assertion {self.peg_out_id}: negative position or work")


def event_at(chain: Chain, position: PegOutPos) -> str | None:
    if position.block >= len(chain):
        return None
    events = chain.blocks[position.block].events
    return events[position.tx] if position.tx < len(events) else None


def avp_screen(assertion: Assertion, chain: Chain) -> int:
    """Off-chain screen using suffix sums of the block scores."""
    suffix = list(itertools.accumulate(reversed([b.score for b in chain.blocks])))[::-1] + [0]
    if event_at(chain, assertion.position) != assertion.peg_out_id:
        return 0
    return int(suffix[assertion.position.block + 1] >= assertion.work_past)


def circuit_verdict(assertion: Assertion, chain: Chain) -> int:
    """Circuit-side oracle: a single pass over the blocks."""
    found = False
    work = 0
    for height, block in enumerate(chain.blocks):
        if found:
            work += block.score
        elif height == assertion.position.block:
            events = block.events
            tx = assertion.position.tx
            if tx >= len(events) or events[tx] != assertion.peg_out_id:
                return 0
            found = True
    return int(found and work >= assertion.work_past)


# ── Claims and proofs ────────────────────────────────────────


@dataclass(frozen=True)
class ChainClaim:
    peg_out_id: str
    position: PegOutPos
    score: int
    contains_event: bool
    work_past_event: int = 0

    def __post_init__(self) -> None:
        if self.score < 0 or self.work_past_event < 0:
            raise MalformedAssertion(f"claim {self.peg_out_id}: negative score or work")


def claim_for(chain: Chain, peg_out_id: str, position: PegOutPos, work_past: int = 0) -> ChainClaim:
    """The claim an honest prover makes about *chain*."""
    return ChainClaim(
        peg_out_id=peg_out_id,
        position=position,
        score=chain.score,
        contains_event=event_at(chain, position) == peg_out_id,
        work_past_event=work_past,
    )


class ProofOracle:
    """Stands in for the succinct proofs over the prover's own chain."""

    def __init__(self, chain: Chain) -> None:
        self.chain = chain

    def verifies_a(self, claim: ChainClaim) -> bool:
        assertion = Assertion(claim.peg_out_id, claim.position, claim.work_past_event)
        return claim.score == self.chain.score and bool(circuit_verdict(assertion, self.chain))

    def verifies_b(self, claim: ChainClaim) -> bool:
        return claim.score == self.chain.score and event_at(self.chain, claim.position) != claim.peg_out_id


def validate_bob_input(alice: ChainClaim, bob: ChainClaim) -> bool:
    """Script-side check of BobInput against Alice's signed values."""
    if bob.peg_out_id != alice.peg_out_id:
        raise FieldMismatch("PegOutID")
    if bob.position != alice.position:
        raise FieldMismatch("PegOutPos")
    if bob.score <= alice.score:
        raise ScoreNotGreater(alice.score, bob.score)
    return True


# ── Score-carry payouts ──────────────────────────────────────


class Reveal(str, Enum):
    CA_TRUE = "CaTrue"
    CA_FALSE = "CaFalse"
    CB_TRUE = "CbTrue"
    CB_FALSE = "CbFalse"


@dataclass(frozen=True)
class PayoutMap:
    alice: int
    bob: int
    winner: str | None
    persistent_slash_required: bool = False
    timeout_branch: bool = False

    def record(self) -> dict:
        return {
            "alice": self.alice,
            "bob": self.bob,
            "winner": self.winner,
            "persistent_slash_required": self.persistent_slash_required,
            "timeout_branch": self.timeout_branch,
        }


def _circuit_value(reveals: set[Reveal], true: Reveal, false: Reveal) -> bool | None:
    if true in reveals and false in reveals:
        raise ConflictingReveals(f"circuit revealed both {true.value} and {false.value}")
    if true in reveals:
        return True
    if false in reveals:
        return False
    return None


def resolve_payouts(reveals: Iterable[Reveal], alice_deposit: int, bob_deposit: int) -> PayoutMap:
    """Split both deposits from the revealed circuit outputs.

    A circuit with no reveal is treated as its timelock having elapsed.
    """
    got = set(reveals)
    a = _circuit_value(got, Reveal.CA_TRUE, Reveal.CA_FALSE)
    b = _circuit_value(got, Reveal.CB_TRUE, Reveal.CB_FALSE)
    total = alice_deposit + bob_deposit

    if a is False and b is False:
        return PayoutMap(alice_deposit, bob_deposit, None)
    if a is False:
        return PayoutMap(0, total, BOB)
    if b is False:
        return PayoutMap(total, 0, ALICE)
    if a and b:
        logger.warning("persistent_slash_required", alice_deposit=alice_deposit, bob_deposit=bob_deposit)
        return PayoutMap(alice_deposit, bob_deposit, BOB, persistent_slash_required=True)
    if a:
        return PayoutMap(total, 0, ALICE, timeout_branch=True)
    if b:
        return PayoutMap(0, total, BOB, timeout_branch=True)
    return PayoutMap(alice_deposit, bob_deposit, None, timeout_branch=True)


def score_carry(
    alice: ChainClaim,
    alice_chain: Chain,
    bob: ChainClaim | None,
    bob_chain: Chain | None,
    alice_deposit: int,
    bob_deposit: int,
) -> PayoutMap:
    """Run the score-carry resolution end to end on synthetic chains."""
    reveals = {Reveal.CA_TRUE if ProofOracle(alice_chain).verifies_a(alice) else Reveal.CA_FALSE}
    if bob is not None and bob_chain is not None:
        validate_bob_input(alice, bob)
        reveals.add(Reveal.CB_TRUE if ProofOracle(bob_chain).verifies_b(bob) else Reveal.CB_FALSE)
    return resolve_payouts(reveals, alice_deposit, bob_deposit)


# ── Dual proof ───────────────────────────────────────────────


def resolve_dual_proof(
    alice: ChainClaim,
    alice_chain: Chain,
    bob: ChainClaim | None = None,
    bob_chain: Chain | None = None,
) -> str:
    """Both circuits check both proofs and apply heaviest-chain fork choice."""
    a_ok = ProofOracle(alice_chain).verifies_a(alice)
    b_ok = False
    if bob is not None and bob_chain is not None:
        b_ok = (
            bob.peg_out_id == alice.peg_out_id
            and bob.position == alice.position
            and ProofOracle(bob_chain).verifies_b(bob)
        )
    if not a_ok and not b_ok:
        raise BothInvalid(f"no valid proof for {alice.peg_out_id}")
    if a_ok and b_ok:
        return BOB if bob.score > alice.score else ALICE
    return ALICE if a_ok else BOB


# ── Size accounting ──────────────────────────────────────────


class OtsScheme(str, Enum):
    LAMPORT = "lamport"
    WINTERNITZ = "winternitz"


WITNESS_BYTES_PER_BYTE = {OtsScheme.LAMPORT: 400, OtsScheme.WINTERNITZ: 42}


def verifier_cost(method: str) -> int:
    """Proof verifiers per garbled circuit."""
    costs = {"A": 2, "B": 1}
    if method not in costs:
        raise ValueError(f"unknown contest method {method!r}")
    return costs[method]
