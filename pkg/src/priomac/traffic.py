"""Application traffic: periodic urgent and normal packet generation.

Arrivals are strictly periodic per node with a per-node phase drawn once,
uniformly in [0, interval).  Urgent packets carry an absolute deadline;
normal packets have none and are dropped only on retry exhaustion or queue
overflow.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError
from .kernel import RngStream, SimTime


class PriorityClass(Enum):
    URGENT = "urgent"
    NORMAL = "normal"


class DropReason(Enum):
    DEADLINE_EXPIRED = "deadline"
    RETRY_LIMIT = "retry"
    QUEUE_OVERFLOW = "overflow"


_packet_ids = itertools.count()


@dataclass(slots=True)
class Packet:
    """One application message and its lifecycle timestamps."""

    id: int
    klass: PriorityClass
    src: int
    length_bytes: int
    generated_at: SimTime
    deadline_at: SimTime | None = None
    delivered_at: SimTime | None = None
    drop_reason: DropReason | None = None


@dataclass(frozen=True, slots=True)
class TrafficParams:
    """Generation intervals and packet shape for both classes."""

    urgent_interval_us: int = 120_000_000   # one urgent message per 2 min
    normal_interval_us: int = 10_000_000    # one normal message per 10 s
    urgent_deadline_us: int = 100_000       # drop an urgent packet unserved after 100 ms
    packet_bytes: int = 34
    queue_capacity: int = 10

    def validate(self) -> None:
        if self.urgent_interval_us <= 0 or self.normal_interval_us <= 0:
            raise ConfigError("generation intervals must be positive")
        if self.urgent_deadline_us <= 0:
            raise ConfigError("urgent_deadline_us must be positive")
        if self.packet_bytes < 1:
            raise ConfigError("packet_bytes must be >= 1")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")

    def interval_for(self, klass: PriorityClass) -> int:
        if klass is PriorityClass.URGENT:
            return self.urgent_interval_us
        return self.normal_interval_us


# Loss trends are invisible at the default urgent rate at desk scale: nothing
# ever misses a 100 ms deadline.  The stress preset raises the urgent rate and
# tightens the deadline into the band the protocols' delay tails actually reach.
STRESS_URGENT_INTERVAL_US = 2_000_000
STRESS_URGENT_DEADLINE_US = 5_200


def stress_traffic(base: TrafficParams) -> TrafficParams:
    return TrafficParams(
        urgent_interval_us=STRESS_URGENT_INTERVAL_US,
        normal_interval_us=base.normal_interval_us,
        urgent_deadline_us=STRESS_URGENT_DEADLINE_US,
        packet_bytes=base.packet_bytes,
        queue_capacity=base.queue_capacity,
    )


@dataclass(frozen=True, slots=True)
class TrafficSpec:
    """One node's generator: class, interval, and its fixed random phase."""

    klass: PriorityClass
    interval_us: int
    phase_us: int

    def __post_init__(self):
        if self.interval_us <= 0:
            raise ConfigError("interval_us must be positive")
        if not 0 <= self.phase_us < self.interval_us:
            raise ConfigError("phase_us must lie in [0, interval)")


def draw_phase(rng: RngStream, interval_us: int) -> int:
    return rng.randrange(interval_us)


def arrivals(spec: TrafficSpec, horizon_us: SimTime) -> list[SimTime]:
    """All generation instants before `horizon_us`: phase, phase+T, phase+2T, ..."""
    return list(range(spec.phase_us, horizon_us, spec.interval_us))


def make_packet(spec: TrafficSpec, src: int, at: SimTime, params: TrafficParams) -> Packet:
    deadline = at + params.urgent_deadline_us if spec.klass is PriorityClass.URGENT else None
    return Packet(
        id=next(_packet_ids),
        klass=spec.klass,
        src=src,
        length_bytes=params.packet_bytes,
        generated_at=at,
        deadline_at=deadline,
    )
