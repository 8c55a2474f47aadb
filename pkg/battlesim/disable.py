"""Global disable secrets.

Every operator commits to a secret ``G``. Losing a dispute releases material
that makes ``G`` public (directly, through a pairwise key, or as one share of
a threshold sharing). Once ``G`` is known the operator's unbonded actions are
blocked by front-running the pre-signed AliceWasDisabled/BobWasDisabled
transactions. Disputes already under way keep running on their bonds.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import structlog

from battlesim.dag import ALICE_WAS_DISABLED, BOB_CHALLENGE, BOB_WAS_DISABLED, NO_BOB_CHALLENGE, Deployment
from battlesim.flex import FlexInstance
from battlesim.ledger import BroadcastReceipt, Ledger, SimulationError

logger = structlog.get_logger()

FIELD_PRIME = 2**127 - 1
SECRET_BYTES = 16

# Actions guarded by the disable secret; bonded dispute moves are not.
UNBONDED_ACTIONS = frozenset({"assert", "challenge", "vote"})


class BadThreshold(SimulationError):
    pass


class NotLoser(SimulationError):
    pass


# ── Primitives ───────────────────────────────────────────────


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _keystream(key: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(key + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:length])


def encrypt(key: bytes, message: bytes) -> bytes:
    return bytes(a ^ b for a, b in zip(message, _keystream(key, len(message))))


decrypt = encrypt


def _to_bytes(value: int) -> bytes:
    return value.to_bytes(SECRET_BYTES, "big")


def _eval_poly(coeffs: Sequence[int], x: int) -> int:
    res = 0
    for a in reversed(coeffs):
        res = (res * x + a) % FIELD_PRIME
    return res


def split(secret: int, t: int, m: int, rng: random.Random) -> list[tuple[int, int]]:
    if not 1 <= t <= m:
        raise BadThreshold(f"threshold {t} with {m} shares")
    coeffs = [secret % FIELD_PRIME] + [rng.randrange(FIELD_PRIME) for _ in range(t - 1)]
    return [(i, _eval_poly(coeffs, i)) for i in range(1, m + 1)]


def reconstruct(shares: Sequence[tuple[int, int]]) -> int:
    """Lagrange interpolation at zero."""
    if not shares:
        raise ValueError("need at least one share")
    secret = 0
    for i, (xi, yi) in enumerate(shares):
        num, den = 1, 1
        for j, (xj, _) in enumerate(shares):
            if i != j:
                num = num * xj % FIELD_PRIME
                den = den * (xj - xi) % FIELD_PRIME
        secret = (secret + yi * num * pow(den, -1, FIELD_PRIME)) % FIELD_PRIME
    return secret


# ── Commitments ──────────────────────────────────────────────


class DisableMethod(str, Enum):
    DIRECT = "direct"
    PAIRWISE = "pairwise"
    THRESHOLD = "threshold"


@dataclass(frozen=True)
class DisableCommitment:
    party: str
    method: DisableMethod
    secret_digest: str
    pair_digests: dict[str, str] = field(default_factory=dict)
    ciphertexts: dict[str, bytes] = field(default_factory=dict)
    share_index: dict[str, int] = field(default_factory=dict)
    threshold: int = 1
    shares: int = 1

    def record(self) -> dict:
        return {
            "party": self.party,
            "method": self.method.value,
            "secret_digest": self.secret_digest,
            "pair_digests": dict(sorted(self.pair_digests.items())),
            "threshold": self.threshold,
            "shares": self.shares,
        }


@dataclass(frozen=True)
class DisableSecrets:
    """What the committing party keeps to itself (inside its circuits)."""

    party: str
    secret: int
    pair_keys: dict[str, bytes] = field(default_factory=dict)


def commit(
    party: str,
    method: DisableMethod,
    rng: random.Random,
    *,
    peers: Sequence[str] = (),
    threshold: int | None = None,
) -> tuple[DisableCommitment, DisableSecrets]:
    secret = rng.randrange(1, FIELD_PRIME)
    g = _to_bytes(secret)
    if method is DisableMethod.DIRECT:
        return DisableCommitment(party, method, digest(g)), DisableSecrets(party, secret)

    others = [p for p in peers if p != party]
    keys = {y: rng.getrandbits(256).to_bytes(32, "big") for y in others}
    pair_digests = {y: digest(k) for y, k in keys.items()}
    if method is DisableMethod.PAIRWISE:
        ciphertexts = {y: encrypt(keys[y], g) for y in others}
        commitment = DisableCommitment(party, method, digest(g), pair_digests, ciphertexts)
        return commitment, DisableSecrets(party, secret, keys)

    m = len(others)
    t = threshold if threshold is not None else m
    shares = split(secret, t, m, rng)
    index = {y: x for y, (x, _) in zip(others, shares)}
    ciphertexts = {y: encrypt(keys[y], _to_bytes(v)) for y, (_, v) in zip(others, shares)}
    commitment = DisableCommitment(party, method, digest(g), pair_digests, ciphertexts, index, t, m)
    return commitment, DisableSecrets(party, secret, keys)


def verify_setup(commitment: DisableCommitment, secrets: DisableSecrets) -> bool:
    """Recompute every published relation in the clear."""
    g = _to_bytes(secrets.secret)
    if digest(g) != commitment.secret_digest:
        return False
    for y, key in secrets.pair_keys.items():
        if commitment.pair_digests.get(y) != digest(key):
            return False
    if commitment.method is DisableMethod.PAIRWISE:
        return all(decrypt(secrets.pair_keys[y], c) == g for y, c in commitment.ciphertexts.items())
    if commitment.method is DisableMethod.THRESHOLD:
        shares = [
            (commitment.share_index[y], int.from_bytes(decrypt(secrets.pair_keys[y], c), "big"))
            for y, c in commitment.ciphertexts.items()
        ]
        return reconstruct(shares[: commitment.threshold]) == secrets.secret
    return True


@dataclass(frozen=True)
class RevealedMaterial:
    party: str
    winner: str
    secret: int | None = None
    pair_key: bytes | None = None


def on_loss_reveal(
    commitment: DisableCommitment, secrets: DisableSecrets, instance: FlexInstance
) -> RevealedMaterial:
    """Material a resolved dispute releases about its loser."""
    pair = instance.revealed_pair
    if pair is None or pair[0] != commitment.party:
        raise NotLoser(f"{commitment.party} did not lose dispute {instance.id}")
    _, winner = pair
    if commitment.method is DisableMethod.DIRECT:
        return RevealedMaterial(commitment.party, winner, secret=secrets.secret)
    return RevealedMaterial(commitment.party, winner, pair_key=secrets.pair_keys.get(winner))


# ── Registry and enforcement ─────────────────────────────────


class DisableRegistry:
    def __init__(self, commitments: Sequence[DisableCommitment] = ()) -> None:
        self.commitments = {c.party: c for c in commitments}
        self.revealed: dict[str, list[RevealedMaterial]] = {}
        self._known: dict[str, int] = {}

    def publish(self, commitment: DisableCommitment) -> None:
        self.commitments[commitment.party] = commitment

    def record(self, material: RevealedMaterial) -> int | None:
        self.revealed.setdefault(material.party, []).append(material)
        secret = self._recover(material.party)
        if secret is not None and material.party not in self._known:
            self._known[material.party] = secret
            logger.info("disable_secret_public", party=material.party, via=self.commitments[material.party].method.value)
        return secret

    def _recover(self, party: str) -> int | None:
        c = self.commitments[party]
        found = self.revealed.get(party, [])
        candidates: list[int] = []
        if c.method is DisableMethod.DIRECT:
            candidates = [m.secret for m in found if m.secret is not None]
        elif c.method is DisableMethod.PAIRWISE:
            candidates = [
                int.from_bytes(decrypt(m.pair_key, c.ciphertexts[m.winner]), "big")
                for m in found
                if m.pair_key is not None and m.winner in c.ciphertexts
            ]
        else:
            shares: dict[str, tuple[int, int]] = {}
            for m in found:
                if m.pair_key is not None and m.winner in c.ciphertexts:
                    value = int.from_bytes(decrypt(m.pair_key, c.ciphertexts[m.winner]), "big")
                    shares[m.winner] = (c.share_index[m.winner], value)
            if len(shares) >= c.threshold:
                candidates = [reconstruct(list(shares.values())[: c.threshold])]
        for s in candidates:
            if digest(_to_bytes(s)) == c.secret_digest:
                return s
        return None

    def is_disabled(self, party: str) -> bool:
        return party in self._known

    def may(self, party: str, action: str) -> bool:
        return action not in UNBONDED_ACTIONS or not self.is_disabled(party)

    def export(self) -> list[dict]:
        return [self.commitments[p].record() for p in sorted(self.commitments)]


@dataclass
class DisableBook:
    """Public registry plus the secrets each operator's circuits release on a loss."""

    registry: DisableRegistry
    secrets: dict[str, DisableSecrets] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        parties: Sequence[str],
        method: DisableMethod,
        rng: random.Random,
        *,
        threshold: int | None = None,
    ) -> DisableBook:
        registry = DisableRegistry()
        secrets: dict[str, DisableSecrets] = {}
        for x in parties:
            commitment, secrets[x] = commit(x, method, rng, peers=parties, threshold=threshold)
            registry.publish(commitment)
        return cls(registry, secrets)

    def on_resolved(self, instance: FlexInstance) -> bool:
        """Record what *instance* released about its loser; True once the loser is disabled."""
        pair = instance.revealed_pair
        if pair is None or pair[0] not in self.secrets:
            return False
        loser = pair[0]
        material = on_loss_reveal(self.registry.commitments[loser], self.secrets[loser], instance)
        self.registry.record(material)
        return self.registry.is_disabled(loser)

    def disabled(self) -> list[str]:
        return sorted(p for p in self.registry.commitments if self.registry.is_disabled(p))


def enforce_disable(
    ledger: Ledger,
    deployment: Deployment,
    registry: DisableRegistry,
    template_id: str,
    by: str,
    *,
    settle: bool = True,
) -> tuple[bool, BroadcastReceipt]:
    """Broadcast *template_id* for *by*, front-running it first if *by* is disabled.

    Only the opening moves of a pairing are guarded; the DAG must be built
    with ``with_disable=True``. With ``settle=False`` both broadcasts stay
    queued for the caller's next settlement.
    """
    template = deployment.dag.get(template_id)
    tx = deployment.instance(template_id)
    guard = {BOB_CHALLENGE: BOB_WAS_DISABLED, NO_BOB_CHALLENGE: ALICE_WAS_DISABLED}.get(template.step or "")
    blocked = guard is not None and registry.is_disabled(by)
    if blocked:
        disable_id = template_id.rsplit("/", 1)[0] + "/" + guard
        ledger.broadcast(deployment.instance(disable_id), by=f"enforcer:{by}", front_run=True)
    receipt = ledger.broadcast(tx, by)
    if settle:
        ledger.settle()
    if blocked:
        logger.info("disabled_action_blocked", party=by, template=template_id, status=receipt.status.value)
    return blocked, receipt
