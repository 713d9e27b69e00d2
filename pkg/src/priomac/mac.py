"""Common MAC-layer contract: node roles and the per-node transmit queue.

Both protocols sit behind the same surface so the harness can run them
interchangeably: packets arrive via `on_packet_arrival`, intact frames via
`on_frame_received`, and each node learns about its own transmission ends
via `on_own_tx_end`.
"""

from __future__ import annotations

from collections import deque
from enum import Enum

from .errors import ConfigError
from .traffic import Packet, PriorityClass


class NodeRole(Enum):
    SINK_CONTROLLER = "sink"
    SENSOR = "sensor"


class TxQueue:
    """Two FIFO queues, one per priority class; urgent always served first.

    Enqueue beyond the per-class capacity drops the arriving packet
    (tail drop) and returns it so the caller can record the overflow.
    """

    def __init__(self, capacity_per_class: int = 10):
        self.capacity = capacity_per_class
        self._urgent: deque[Packet] = deque()
        self._normal: deque[Packet] = deque()

    def _lane(self, klass: PriorityClass) -> deque:
        return self._urgent if klass is PriorityClass.URGENT else self._normal

    def push(self, packet: Packet) -> Packet | None:
        lane = self._lane(packet.klass)
        if len(lane) >= self.capacity:
            return packet
        lane.append(packet)
        return None

    def peek(self) -> Packet | None:
        if self._urgent:
            return self._urgent[0]
        if self._normal:
            return self._normal[0]
        return None

    def pop(self) -> Packet | None:
        if self._urgent:
            return self._urgent.popleft()
        if self._normal:
            return self._normal.popleft()
        return None

    def remove(self, packet: Packet) -> bool:
        lane = self._lane(packet.klass)
        try:
            lane.remove(packet)
            return True
        except ValueError:
            return False

    def pending(self, klass: PriorityClass) -> int:
        return len(self._lane(klass))

    def __len__(self) -> int:
        return len(self._urgent) + len(self._normal)


class MacNode:
    """Base node: identity, wiring, and the frame-dispatch contract."""

    def __init__(self, node_id: int, role: NodeRole, engine, channel, recorder):
        self.node_id = node_id
        self.role = role
        self.engine = engine
        self.channel = channel
        self.recorder = recorder
        channel.register(node_id, self)

    def on_packet_arrival(self, packet: Packet) -> None:
        raise NotImplementedError

    def on_frame_received(self, frame, at) -> None:
        raise ConfigError(
            f"node {self.node_id} cannot handle frame kind {frame.kind.name} "
            f"under the active protocol"
        )

    def on_own_tx_end(self, frame, at) -> None:
        pass
