"""Pairwise commit-reveal lottery: the bracket variant that needs no assertions.

Every participant commits to ``sha256(seed)`` once; in each match both reveal
and the parity selector picks the winner. A party that never reveals loses its
match by timeout, a reveal that does not open the commitment forfeits it.
"""

from __future__ import annotations

import hashlib
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Mapping

import structlog

from battlesim.dag import build_bracket
from battlesim.ledger import SimulationError

logger = structlog.get_logger()

BOND_UNITS_PER_MATCH = 1
TEMPLATES_PER_PAIRING = 3  # commit, reveal, timeout


class RevealMismatch(SimulationError):
    def __init__(self, party: str, commitment: str) -> None:
        self.party = party
        self.commitment = commitment
        super().__init__(f"reveal by {party} does not open commitment {commitment[:16]}")


def _seed_bytes(seed: int) -> bytes:
    return seed.to_bytes(max(1, (seed.bit_length() + 7) // 8), "big")


def commit(seed: int) -> str:
    return hashlib.sha256(_seed_bytes(seed)).hexdigest()


def verify_reveal(party: str, commitment: str, seed: int) -> int:
    if commit(seed) != commitment:
        raise RevealMismatch(party, commitment)
    return seed


def parity(seed: int) -> int:
    return seed & 1


def selector(a: int, b: int) -> int:
    """1 when the left (defending) side wins, 0 when the right side wins."""
    return (parity(a) + parity(b)) % 2


def lottery_template_count(n: int) -> int:
    return TEMPLATES_PER_PAIRING * n * (n - 1) // 2


@dataclass
class LotteryOutcome:
    winner: str | None
    matches: list[dict] = field(default_factory=list)
    template_count: int = 0
    bond_per_party: int = BOND_UNITS_PER_MATCH

    def record(self) -> dict:
        return {
            "winner": self.winner,
            "matches": self.matches,
            "template_count": self.template_count,
            "bond_per_party": self.bond_per_party,
        }


def run_lottery(
    n: int,
    seeds: Mapping[str, int],
    *,
    reveals: Mapping[str, int] | None = None,
    withhold: Collection[str] = (),
) -> LotteryOutcome:
    """Bracket of two-party lotteries over operators ``1..n``.

    ``reveals`` overrides what a party opens (a mismatch forfeits);
    parties in ``withhold`` never reveal.
    """
    bracket = build_bracket([str(i) for i in range(1, n + 1)])
    commitments = {p: commit(s) for p, s in seeds.items()}
    reveals = dict(reveals or {})

    def opened(party: str) -> int | None:
        if party in withhold or party not in commitments:
            return None
        try:
            return verify_reveal(party, commitments[party], reveals.get(party, seeds[party]))
        except RevealMismatch as e:
            logger.warning("reveal_rejected", party=party, error=str(e))
            return None

    survivors: dict[tuple[int, int], str | None] = {}
    matches: list[dict] = []
    for rnd in bracket.rounds:
        for m in rnd:
            if m.round == 1:
                left = m.left[0] if m.left and m.left[0] in commitments else None
                right = m.right[0] if m.right and m.right[0] in commitments else None
            else:
                left = survivors.get((m.round - 1, 2 * m.index))
                right = survivors.get((m.round - 1, 2 * m.index + 1))
            winner, reason = _decide(left, right, opened)
            survivors[(m.round, m.index)] = winner
            matches.append(
                {"round": m.round, "match": m.index, "left": left, "right": right, "winner": winner, "reason": reason}
            )
    winner = survivors.get((bracket.depth, 0))
    logger.info("lottery_finished", n=n, winner=winner)
    return LotteryOutcome(winner=winner, matches=matches, template_count=lottery_template_count(n))


def _decide(left: str | None, right: str | None, opened) -> tuple[str | None, str]:
    if left is None or right is None:
        return (left or right), "walkover"
    a, b = opened(left), opened(right)
    if a is None and b is None:
        return None, "both_forfeit"
    if a is None:
        return right, "timeout"
    if b is None:
        return left, "timeout"
    return (left if selector(a, b) else right), "selector"


def win_distribution(n: int) -> Counter[str]:
    """Wins per party over every seed-parity assignment."""
    wins: Counter[str] = Counter()
    parties = [str(i) for i in range(1, n + 1)]
    for bits in itertools.product((0, 1), repeat=n):
        outcome = run_lottery(n, dict(zip(parties, bits)))
        if outcome.winner is not None:
            wins[outcome.winner] += 1
    return wins
