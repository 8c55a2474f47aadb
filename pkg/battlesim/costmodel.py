"""Closed-form cost calculators: publication size, storage, key material and makespan.

Sizes are bytes; :func:`human_bytes` reports them in decimal units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from battlesim.dag import InvalidParams, PHASE2_ROUND_PERIODS, ROUND_PERIODS, estimate_stats, rounds_for
from battlesim.ledger import SimulationError

LAMPORT_WITNESS_BYTES = 400


class QTooLarge(SimulationError):
    def __init__(self, n: int, q: int) -> None:
        self.n = n
        self.q = q
        super().__init__(f"concurrency {q} exceeds N/2 for N={n}")


def _is_power_of_two(q: int) -> bool:
    return q >= 1 and q & (q - 1) == 0


@dataclass(frozen=True)
class CostParams:
    s_gc: int = 50_000_000
    lamport_overhead: int = LAMPORT_WITNESS_BYTES
    input_bytes: int = 128
    operators: int = 1000
    pegins: int = 1000
    concurrency: int = 1
    period_seconds: int = 600
    signing_throughput: float | None = None  # signatures per second
    bandwidth: float | None = None  # bytes per second

    def __post_init__(self) -> None:
        for name in ("s_gc", "lamport_overhead", "input_bytes", "operators", "pegins", "period_seconds"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be >= 0")
        if not _is_power_of_two(self.concurrency):
            raise InvalidParams(f"concurrency must be a power of two, got {self.concurrency}")


def publication_bytes(b: int, overhead: int = LAMPORT_WITNESS_BYTES) -> int:
    """Witness bytes one party publishes in a dispute over a *b*-byte input."""
    if b < 0:
        raise InvalidParams("input size must be >= 0")
    return b * overhead


def gc_storage_per_operator(n: int, s_gc: int) -> int:
    if n < 1:
        raise InvalidParams("need at least one operator")
    return 2 * (n - 1) * s_gc


def dag_storage(u: int, n: int, per_pegin_bytes: int | None = None) -> int:
    """Per-party DAG storage for *u* live peg-ins."""
    if per_pegin_bytes is None:
        per_pegin_bytes = estimate_stats(n).per_party_storage_bytes
    return u * per_pegin_bytes


def key_material(u: int, b: int, counterparties: int = 1) -> dict[str, int]:
    """Key material of the conversion-key variant."""
    return {
        "lamport_public_keys": u * 2 * b,
        "conversion_key_hashes": u * counterparties,
    }


def phase1_makespan(n: int, q: int = 1) -> int:
    """Earliest Phase 1 finish in periods with *q* concurrent disputes per party."""
    if n < 2:
        raise InvalidParams(f"Phase 1 needs at least 2 operators, got {n}")
    if not _is_power_of_two(q):
        raise InvalidParams(f"concurrency must be a power of two, got {q}")
    if q > n / 2:
        raise QTooLarge(n, q)
    return ROUND_PERIODS * (rounds_for(n) - int(math.log2(q)))


def phase2_duration(r: int) -> int:
    return PHASE2_ROUND_PERIODS * r + 2


def signing_time(templates: int, throughput: float) -> float:
    """Seconds to sign *templates* at *throughput* signatures per second."""
    if throughput <= 0:
        raise InvalidParams("throughput must be > 0")
    return templates / throughput


def exchange_time(size: int, bandwidth: float) -> float:
    if bandwidth <= 0:
        raise InvalidParams("bandwidth must be > 0")
    return size / bandwidth


def human_bytes(size: float) -> str:
    for unit in ("B", "KB", "MB", "GB", "TB"):
        if abs(size) < 1000 or unit == "TB":
            return f"{size:.1f} {unit}" if unit != "B" else f"{int(size)} B"
        size /= 1000
    raise AssertionError("unreachable")


def cost_table(params: CostParams) -> list[dict]:
    """Every derived quantity for *params* as ``{name, value, unit}`` rows."""
    n = params.operators
    est = estimate_stats(n)
    rows = [
        ("publication_bytes", publication_bytes(params.input_bytes, params.lamport_overhead), "bytes"),
        ("gc_storage_per_operator", gc_storage_per_operator(n, params.s_gc), "bytes"),
        ("dag_bytes_per_pegin", est.per_party_storage_bytes, "bytes"),
        ("dag_storage", dag_storage(params.pegins, n, est.per_party_storage_bytes), "bytes"),
        ("templates_per_pegin", est.template_count, "templates"),
        ("signatures_per_pegin", est.signature_count, "signatures"),
        ("phase1_makespan", phase1_makespan(n, params.concurrency), "periods"),
        ("phase2_duration", phase2_duration(rounds_for(n)), "periods"),
    ]
    for name, value in key_material(params.pegins, params.input_bytes, n - 1).items():
        rows.append((name, value, "keys"))
    if params.signing_throughput:
        rows.append(("signing_time", signing_time(est.signature_count, params.signing_throughput), "seconds"))
    if params.bandwidth:
        rows.append(("exchange_time", exchange_time(est.per_party_storage_bytes, params.bandwidth), "seconds"))
    makespan = phase1_makespan(n, params.concurrency)
    rows.append(("phase1_makespan_wallclock", makespan * params.period_seconds, "seconds"))
    return [{"name": name, "value": value, "unit": unit} for name, value, unit in rows]
