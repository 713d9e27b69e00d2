"""Per-packet lifecycle accounting and aggregation into delay / loss statistics.

Delay is measured from generation to the sink's intact receipt of the final
data frame (the last fragment for fragmented packets), excluding the ack.
Dropped packets contribute to loss counters only, never to delay averages.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .errors import AccountingError
from .kernel import SimTime
from .traffic import DropReason, Packet, PriorityClass

CSV_COLUMNS = (
    "scenario_id",
    "protocol",
    "n_urgent",
    "frag_size",
    "seed",
    "class",
    "generated",
    "delivered",
    "dropped_deadline",
    "dropped_retry",
    "dropped_overflow",
    "mean_delay_us",
    "p95_delay_us",
    "max_delay_us",
)


@dataclass(frozen=True, slots=True)
class ScenarioKey:
    scenario_id: str
    protocol: str
    n_urgent: int
    frag_size: int | None
    seed: int


@dataclass(slots=True)
class ClassStats:
    generated: int = 0
    delivered: int = 0
    dropped_deadline: int = 0
    dropped_retry: int = 0
    dropped_overflow: int = 0
    delays_us: list[int] = field(default_factory=list)

    @property
    def dropped(self) -> int:
        return self.dropped_deadline + self.dropped_retry + self.dropped_overflow

    @property
    def residual(self) -> int:
        return self.generated - self.delivered - self.dropped

    @property
    def loss_rate(self) -> float | None:
        if self.generated == 0:
            return None
        return self.dropped / self.generated

    def mean_delay_us(self) -> float | None:
        if not self.delays_us:
            return None
        return sum(self.delays_us) / len(self.delays_us)

    def p95_delay_us(self) -> int | None:
        if not self.delays_us:
            return None
        ordered = sorted(self.delays_us)
        # nearest-rank percentile
        rank = max(1, -(-95 * len(ordered) // 100))
        return ordered[rank - 1]

    def max_delay_us(self) -> int | None:
        return max(self.delays_us) if self.delays_us else None


@dataclass(slots=True)
class ScenarioResult:
    key: ScenarioKey
    per_class: dict[PriorityClass, ClassStats]

    def stats(self, klass: PriorityClass) -> ClassStats:
        return self.per_class[klass]


class MetricsRecorder:
    """Collects packet lifecycles for one run; finalizes each packet exactly once."""

    def __init__(self):
        self.per_class: dict[PriorityClass, ClassStats] = {
            PriorityClass.URGENT: ClassStats(),
            PriorityClass.NORMAL: ClassStats(),
        }
        self.per_node: dict[tuple[int, PriorityClass], ClassStats] = {}

    def _node_stats(self, packet: Packet) -> ClassStats:
        key = (packet.src, packet.klass)
        stats = self.per_node.get(key)
        if stats is None:
            stats = self.per_node[key] = ClassStats()
        return stats

    def record_generated(self, packet: Packet) -> None:
        self.per_class[packet.klass].generated += 1
        self._node_stats(packet).generated += 1

    def _check_open(self, packet: Packet) -> None:
        if packet.delivered_at is not None or packet.drop_reason is not None:
            raise AccountingError(f"packet {packet.id} finalized twice")

    def record_delivery(self, packet: Packet, at: SimTime) -> None:
        self._check_open(packet)
        if at <= packet.generated_at:
            raise AccountingError(
                f"packet {packet.id} delivered at {at} but generated at {packet.generated_at}"
            )
        packet.delivered_at = at
        delay = at - packet.generated_at
        for stats in (self.per_class[packet.klass], self._node_stats(packet)):
            stats.delivered += 1
            stats.delays_us.append(delay)

    def record_drop(self, packet: Packet, reason: DropReason, at: SimTime) -> None:
        self._check_open(packet)
        packet.drop_reason = reason
        for stats in (self.per_class[packet.klass], self._node_stats(packet)):
            if reason is DropReason.DEADLINE_EXPIRED:
                stats.dropped_deadline += 1
            elif reason is DropReason.RETRY_LIMIT:
                stats.dropped_retry += 1
            else:
                stats.dropped_overflow += 1

    def check_conservation(self, pending_by_node: dict[tuple[int, PriorityClass], int]) -> None:
        """generated == delivered + dropped + still_queued, per (node, class)."""
        for key, stats in self.per_node.items():
            pending = pending_by_node.get(key, 0)
            if stats.delivered + stats.dropped + pending != stats.generated:
                raise AccountingError(
                    f"conservation violated for node={key[0]} class={key[1].value}: "
                    f"{stats.generated} generated vs {stats.delivered} delivered + "
                    f"{stats.dropped} dropped + {pending} pending"
                )

    def aggregate(self, key: ScenarioKey) -> ScenarioResult:
        return ScenarioResult(key=key, per_class=self.per_class)


def result_rows(result: ScenarioResult) -> list[list[str]]:
    """CSV rows (one per class) in the fixed column order."""
    rows = []
    key = result.key
    for klass in (PriorityClass.URGENT, PriorityClass.NORMAL):
        stats = result.per_class[klass]
        mean = stats.mean_delay_us()
        p95 = stats.p95_delay_us()
        peak = stats.max_delay_us()
        rows.append(
            [
                key.scenario_id,
                key.protocol,
                str(key.n_urgent),
                "" if key.frag_size is None else str(key.frag_size),
                str(key.seed),
                klass.value,
                str(stats.generated),
                str(stats.delivered),
                str(stats.dropped_deadline),
                str(stats.dropped_retry),
                str(stats.dropped_overflow),
                "" if mean is None else f"{mean:.3f}",
                "" if p95 is None else str(p95),
                "" if peak is None else str(peak),
            ]
        )
    return rows


def write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        writer.writerows(rows)


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
