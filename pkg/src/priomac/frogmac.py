"""Fragmentation-based asynchronous MAC (CSMA/CA with RTS/CTS).

Urgent packets travel unfragmented behind a short inter-frame space; normal
packets are split into fragments separated by gaps sized so a pending urgent
contender always gets its RTS on the air before the next fragment starts.

Priority is enforced two ways:

* class-specific inter-frame spaces (urgent waits less idle time), and
* inter-fragment gaps carry a *soft* channel reservation that only normal
  contenders honour, so gaps are seizable by urgent traffic alone.

A normal sender whose gap is seized suspends and later re-contends with a
fresh RTS/CTS for the remaining fragments.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .channel import Channel, Frame, FrameKind, PhyParams
from .errors import ConfigError, ProtocolLogicError
from .kernel import Engine, RngStream
from .mac import MacNode, NodeRole, TxQueue
from .metrics import MetricsRecorder
from .traffic import DropReason, Packet, PriorityClass


@dataclass(frozen=True, slots=True)
class FrogParams:
    """Contention and fragmentation constants.

    The gap default is ifs_urgent + cw_min * backoff_slot: even a worst-case
    fresh backoff draw expires inside the gap, which is what makes the
    preemption guarantee below assertable.
    """

    frag_size: int = 8
    ifs_urgent_us: int = 192
    ifs_normal_us: int = 640
    gap_frag_us: int = 2752
    backoff_slot_us: int = 320
    cw_min: int = 8
    cw_max: int = 64
    retry_limit: int = 5
    header_bytes: int = 5
    ack_timeout_us: int = 912  # 2*SIFS + ack airtime + guard, from own frame end

    def validate(self, packet_bytes: int) -> None:
        if not 2 <= self.frag_size <= packet_bytes:
            raise ConfigError(
                f"frag_size must lie in [2, {packet_bytes}], got {self.frag_size}"
            )
        if not 0 < self.ifs_urgent_us < self.ifs_normal_us < self.gap_frag_us:
            raise ConfigError("required ordering: 0 < ifs_urgent < ifs_normal < gap_frag")
        if self.backoff_slot_us <= 0 or self.cw_min < 1 or self.cw_max < self.cw_min:
            raise ConfigError("invalid backoff parameters")
        worst = self.ifs_urgent_us + (self.cw_min - 1) * self.backoff_slot_us
        if self.gap_frag_us <= worst:
            raise ConfigError(
                "preemption infeasible: gap_frag_us must exceed "
                f"ifs_urgent + (cw_min-1)*backoff_slot = {worst}"
            )
        if self.retry_limit < 1:
            raise ConfigError("retry_limit must be >= 1")
        if self.header_bytes < 0 or self.ack_timeout_us <= 0:
            raise ConfigError("invalid header_bytes / ack_timeout_us")


def fragment_plan(length_bytes: int, frag_size: int) -> list[int]:
    """Payload sizes: full fragments of `frag_size` plus a smaller remainder."""
    if frag_size < 2:
        raise ConfigError("frag_size must be >= 2")
    if length_bytes < 1:
        raise ConfigError("cannot fragment an empty packet")
    sizes = []
    remaining = length_bytes
    while remaining > 0:
        take = min(frag_size, remaining)
        sizes.append(take)
        remaining -= take
    return sizes


def gap_race_winner(contenders: list[tuple[int, int]]) -> int | None:
    """Who seizes a gap: smallest (backoff expiry, node id); a shared earliest
    expiry means simultaneous RTS frames, i.e. a collision (None)."""
    if not contenders:
        raise ValueError("no contenders")
    best_expiry = min(t for t, _ in contenders)
    tied = [n for t, n in contenders if t == best_expiry]
    return tied[0] if len(tied) == 1 else None


class FrogState(Enum):
    IDLE = "idle"
    BACKOFF = "backoff"
    SENT_RTS = "sent_rts"
    AWAIT_CTS = "await_cts"
    TX_DATA = "tx_data"
    TX_FRAGMENT = "tx_fragment"
    AWAIT_ACK = "await_ack"
    GAP_WAIT = "gap_wait"
    SUSPENDED = "suspended"


class _Contention:
    """Inter-frame space plus frozen-counter backoff against the shared medium.

    The counter only decrements across fully idle backoff slots observed after
    a continuous inter-frame space; a busy edge freezes whatever remains.  A
    busy edge landing exactly on the expiry tick does not cancel the pending
    transmission: both parties committed simultaneously, which is a collision.
    """

    def __init__(self, sensor: "FrogSensor", honor_soft: bool, ifs_us: int):
        self.sensor = sensor
        self.honor_soft = honor_soft
        self.ifs_us = ifs_us
        self.counter = 0
        self.active = False
        self._counting_since: int | None = None
        self._fire_ev = None

    def begin(self, counter: int) -> None:
        self.counter = counter
        self.active = True
        self._counting_since = None
        self.sensor.channel.add_contender(self)
        self._evaluate()

    def stop(self) -> None:
        self.active = False
        if self._fire_ev is not None:
            self.sensor.engine.cancel(self._fire_ev)
            self._fire_ev = None
        self._counting_since = None
        self.sensor.channel.remove_contender(self)

    def medium_poke(self) -> None:
        if self.active:
            self._evaluate()

    def _evaluate(self) -> None:
        sensor = self.sensor
        now = sensor.engine.now
        busy = sensor.channel.busy_for(sensor.node_id, self.honor_soft)
        if self._counting_since is None:
            if not busy:
                self._counting_since = now
                slot = sensor.params.backoff_slot_us
                self._fire_ev = sensor.engine.schedule(
                    now + self.ifs_us + self.counter * slot,
                    self._fire,
                    target=sensor.node_id,
                    kind="backoff",
                )
        elif busy:
            fire = self._fire_ev
            if fire is not None and fire.fire_at == now:
                return  # simultaneous start: let the transmission collide
            slot = sensor.params.backoff_slot_us
            consumed = (now - self._counting_since - self.ifs_us) // slot
            if consumed > 0:
                self.counter -= min(consumed, self.counter)
            self._counting_since = None
            if fire is not None:
                sensor.engine.cancel(fire)
                self._fire_ev = None

    def _fire(self) -> None:
        self._fire_ev = None
        self.active = False
        self._counting_since = None
        self.sensor.channel.remove_contender(self)
        self.sensor._contention_fired()


class FrogSink(MacNode):
    """Sink: answers RTS with CTS, acks payloads, reassembles fragments."""

    def __init__(self, node_id: int, engine: Engine, channel: Channel,
                 recorder: MetricsRecorder, phy: PhyParams):
        super().__init__(node_id, NodeRole.SINK_CONTROLLER, engine, channel, recorder)
        self.phy = phy
        self._reassembly: dict[int, tuple[int, int]] = {}  # src -> (packet id, next index)

    def on_frame_received(self, frame: Frame, at: int) -> None:
        kind = frame.kind
        if kind == FrameKind.RTS:
            self.engine.schedule(
                at + self.phy.sifs_us,
                lambda src=frame.src: self._respond(FrameKind.CTS, src),
                target=self.node_id,
                kind="cts",
            )
        elif kind == FrameKind.DATA:
            self.recorder.record_delivery(frame.packet, at)
            self._ack(frame.src, at)
        elif kind == FrameKind.FRAGMENT:
            self._on_fragment(frame, at)
        else:
            super().on_frame_received(frame, at)

    def _on_fragment(self, frame: Frame, at: int) -> None:
        pkt = frame.packet
        entry = self._reassembly.get(frame.src)
        if frame.frag_index == 0 and (entry is None or entry[0] != pkt.id):
            entry = (pkt.id, 0)  # new packet (possibly replacing an abandoned one)
        if entry is None or entry[0] != pkt.id:
            raise ProtocolLogicError(
                f"sink saw fragment of packet {pkt.id} without its first fragment"
            )
        expected = entry[1]
        if frame.frag_index == expected:
            expected += 1
            if frame.frag_index == frame.frag_count - 1:
                self.recorder.record_delivery(pkt, at)
                self._reassembly.pop(frame.src, None)
            else:
                self._reassembly[frame.src] = (pkt.id, expected)
        elif frame.frag_index == expected - 1:
            pass  # retransmission of an already-acked fragment: just re-ack
        else:
            raise ProtocolLogicError(
                f"out-of-order fragment {frame.frag_index} (expected {expected}) "
                f"for packet {pkt.id}"
            )
        self._ack(frame.src, at)

    def _ack(self, dst: int, at: int) -> None:
        self.engine.schedule(
            at + self.phy.sifs_us,
            lambda: self._respond(FrameKind.ACK, dst),
            target=self.node_id,
            kind="ack",
        )

    def _respond(self, kind: FrameKind, dst: int) -> None:
        self.channel.transmit(
            Frame(kind=kind, src=self.node_id, dst=dst, length_bytes=self.phy.control_bytes)
        )


class FrogSensor(MacNode):
    """Sensor-side state machine for both traffic classes."""

    def __init__(self, node_id: int, engine: Engine, channel: Channel,
                 recorder: MetricsRecorder, phy: PhyParams, params: FrogParams,
                 rng: RngStream, sink_id: int = 0, invariants: "FrogInvariants | None" = None,
                 queue_capacity: int = 10):
        super().__init__(node_id, NodeRole.SENSOR, engine, channel, recorder)
        self.phy = phy
        self.params = params
        self.rng = rng
        self.sink_id = sink_id
        self.invariants = invariants
        self.queue = TxQueue(queue_capacity)
        self.state = FrogState.IDLE
        self.current: Packet | None = None
        self.plan: list[int] | None = None
        self.cursor = 0
        self.cw = params.cw_min
        self.retries = 0
        self.waiting_since: int | None = None  # urgent head stuck in contention
        self._deadline_passed = False
        self._normal_progress: dict[int, int] = {}
        self._deadline_evs: dict[int, object] = {}
        self._timeout_ev = None
        self._gap_ev = None
        self._gap_started_at = 0
        self._contention: _Contention | None = None

    # -- queue / lifecycle ------------------------------------------------

    def on_packet_arrival(self, packet: Packet) -> None:
        rejected = self.queue.push(packet)
        if rejected is not None:
            self.recorder.record_drop(rejected, DropReason.QUEUE_OVERFLOW, self.engine.now)
            return
        if packet.deadline_at is not None:
            self._deadline_evs[packet.id] = self.engine.schedule(
                packet.deadline_at,
                lambda p=packet: self._deadline_fired(p),
                target=self.node_id,
                kind="deadline",
            )
        if self.state is FrogState.IDLE:
            self._service_next()

    def pending_counts(self) -> dict[PriorityClass, int]:
        return {k: self.queue.pending(k) for k in PriorityClass}

    def _service_next(self) -> None:
        previous = self.current
        self.current = self.queue.peek()
        self._deadline_passed = False
        if self.current is None:
            self.state = FrogState.IDLE
            return
        if self.current.klass is PriorityClass.NORMAL:
            self.plan = fragment_plan(self.current.length_bytes, self.params.frag_size)
            self.cursor = self._normal_progress.get(self.current.id, 0)
        else:
            self.plan = None
            self.cursor = 0
        if self.current is not previous:
            self.cw = self.params.cw_min
            self.retries = 0
        self._begin_contention()

    def _begin_contention(self) -> None:
        pkt = self.current
        urgent = pkt.klass is PriorityClass.URGENT
        self.state = FrogState.BACKOFF
        if urgent and self.waiting_since is None:
            self.waiting_since = self.engine.now
        ifs = self.params.ifs_urgent_us if urgent else self.params.ifs_normal_us
        self._contention = _Contention(self, honor_soft=not urgent, ifs_us=ifs)
        self._contention.begin(self.rng.randrange(self.cw))

    # -- frame flow --------------------------------------------------------

    def _unit_airtimes(self) -> tuple[int, int]:
        """(payload airtime, full RTS..ACK unit span) for the current unit."""
        phy = self.phy
        if self.current.klass is PriorityClass.URGENT:
            payload = self.current.length_bytes * phy.byte_time_us
        else:
            payload = (self.plan[self.cursor] + self.params.header_bytes) * phy.byte_time_us
        ctrl = phy.control_airtime()
        unit = ctrl + phy.sifs_us + ctrl + phy.sifs_us + payload + phy.sifs_us + ctrl
        return payload, unit

    def _contention_fired(self) -> None:
        self._contention = None
        self.waiting_since = None
        now = self.engine.now
        pkt = self.current
        if pkt.deadline_at is not None and now >= pkt.deadline_at:
            # The deadline event at the same tick may not have run yet.
            self._abort_current(DropReason.DEADLINE_EXPIRED)
            return
        _, unit = self._unit_airtimes()
        self.state = FrogState.SENT_RTS
        self.channel.transmit(
            Frame(
                kind=FrameKind.RTS,
                src=self.node_id,
                dst=self.sink_id,
                length_bytes=self.phy.control_bytes,
                hard_until=now + unit,
            )
        )

    def on_own_tx_end(self, frame: Frame, at: int) -> None:
        if frame.kind == FrameKind.RTS and self.state is FrogState.SENT_RTS:
            self.state = FrogState.AWAIT_CTS
            self._arm_timeout()
        elif frame.kind in (FrameKind.DATA, FrameKind.FRAGMENT):
            self.state = FrogState.AWAIT_ACK
            self._arm_timeout()

    def _arm_timeout(self) -> None:
        self._timeout_ev = self.engine.schedule(
            self.engine.now + self.params.ack_timeout_us,
            self._timeout_fired,
            target=self.node_id,
            kind="resp_timeout",
        )

    def on_frame_received(self, frame: Frame, at: int) -> None:
        if frame.kind == FrameKind.CTS and frame.dst == self.node_id:
            if self.state is not FrogState.AWAIT_CTS:
                return  # stale response to an attempt we already gave up on
            self._cancel_timeout()
            self.engine.schedule(
                at + self.phy.sifs_us, self._tx_payload, target=self.node_id, kind="payload"
            )
        elif frame.kind == FrameKind.ACK and frame.dst == self.node_id:
            if self.state is not FrogState.AWAIT_ACK:
                return
            self._cancel_timeout()
            self._on_acked()
        else:
            super().on_frame_received(frame, at)

    def _tx_payload(self) -> None:
        pkt = self.current
        now = self.engine.now
        if pkt.deadline_at is not None and now >= pkt.deadline_at and not self._deadline_passed:
            self._abort_current(DropReason.DEADLINE_EXPIRED)
            return
        payload, _ = self._unit_airtimes()
        phy = self.phy
        ack_end = now + payload + phy.sifs_us + phy.control_airtime()
        if pkt.klass is PriorityClass.URGENT:
            self.state = FrogState.TX_DATA
            frame = Frame(
                kind=FrameKind.DATA,
                src=self.node_id,
                dst=self.sink_id,
                length_bytes=pkt.length_bytes,
                packet=pkt,
                hard_until=ack_end,
            )
        else:
            self.state = FrogState.TX_FRAGMENT
            more = self.cursor < len(self.plan) - 1
            frame = Frame(
                kind=FrameKind.FRAGMENT,
                src=self.node_id,
                dst=self.sink_id,
                length_bytes=self.plan[self.cursor] + self.params.header_bytes,
                packet=pkt,
                frag_index=self.cursor,
                frag_count=len(self.plan),
                hard_until=ack_end,
                soft_until=ack_end + self.params.gap_frag_us if more else None,
            )
        self.channel.transmit(frame)

    def _on_acked(self) -> None:
        pkt = self.current
        self.cw = self.params.cw_min  # successful unit resets the window
        if pkt.klass is PriorityClass.URGENT or self.cursor == len(self.plan) - 1:
            self._finish_current()
            return
        self.cursor += 1
        self._normal_progress[pkt.id] = self.cursor
        self.state = FrogState.GAP_WAIT
        self._gap_started_at = self.engine.now
        self._gap_ev = self.engine.schedule(
            self.engine.now + self.params.gap_frag_us,
            self._gap_expired,
            target=self.node_id,
            kind="gap",
        )

    def _gap_expired(self) -> None:
        self._gap_ev = None
        preempted = self.channel.busy_for(self.node_id, honor_soft=True)
        own_urgent = self.queue.pending(PriorityClass.URGENT) > 0
        if preempted or own_urgent:
            # Someone (or our own urgent queue) seized the gap: re-reserve later.
            self.state = FrogState.SUSPENDED
            self.cw = self.params.cw_min
            self._service_next()
            return
        if self.invariants is not None:
            self.invariants.check_gap_resume(self, self._gap_started_at)
        self._tx_payload()  # continue the reservation: no new RTS/CTS

    def _timeout_fired(self) -> None:
        self._timeout_ev = None
        pkt = self.current
        self.retries += 1
        if self._deadline_passed or (
            pkt.deadline_at is not None and self.engine.now >= pkt.deadline_at
        ):
            self._abort_current(DropReason.DEADLINE_EXPIRED)
        elif self.retries >= self.params.retry_limit:
            self._abort_current(DropReason.RETRY_LIMIT)
        else:
            self.cw = min(self.cw * 2, self.params.cw_max)
            self._begin_contention()

    def _deadline_fired(self, pkt: Packet) -> None:
        self._deadline_evs.pop(pkt.id, None)
        if pkt.delivered_at is not None or pkt.drop_reason is not None:
            return
        if pkt is self.current:
            if self.state in (FrogState.SENT_RTS, FrogState.AWAIT_CTS,
                              FrogState.TX_DATA, FrogState.AWAIT_ACK):
                # Mid-exchange: let the outcome decide (ack -> late delivery).
                self._deadline_passed = True
                return
            self._abort_current(DropReason.DEADLINE_EXPIRED)
        else:
            self.queue.remove(pkt)
            self.recorder.record_drop(pkt, DropReason.DEADLINE_EXPIRED, self.engine.now)

    # -- teardown helpers --------------------------------------------------

    def _cancel_timeout(self) -> None:
        if self._timeout_ev is not None:
            self.engine.cancel(self._timeout_ev)
            self._timeout_ev = None

    def _release_current(self) -> None:
        pkt = self.current
        if self._contention is not None:
            self._contention.stop()
            self._contention = None
        self._cancel_timeout()
        if self._gap_ev is not None:
            self.engine.cancel(self._gap_ev)
            self._gap_ev = None
        ev = self._deadline_evs.pop(pkt.id, None)
        if ev is not None:
            self.engine.cancel(ev)
        self.queue.remove(pkt)
        self._normal_progress.pop(pkt.id, None)
        self.waiting_since = None
        self.current = None

    def _finish_current(self) -> None:
        self._release_current()
        self._service_next()

    def _abort_current(self, reason: DropReason) -> None:
        pkt = self.current
        self._release_current()
        self.recorder.record_drop(pkt, reason, self.engine.now)
        self._service_next()


class FrogInvariants:
    """Cross-node checks the protocol must uphold (single simulation instance)."""

    def __init__(self, params: FrogParams):
        self.params = params
        self.urgent_nodes: list[FrogSensor] = []
        self.gap_resumes = 0

    def check_gap_resume(self, owner: FrogSensor, gap_start: int) -> None:
        """A lone urgent contender pending since the gap started must have won it.

        Only fresh contention windows are covered: an escalated window after a
        collision may legitimately outlast one gap.
        """
        self.gap_resumes += 1
        pending = [
            n
            for n in self.urgent_nodes
            if n is not owner
            and n.waiting_since is not None
            and n.waiting_since <= gap_start
            and n.cw == self.params.cw_min
        ]
        if len(pending) == 1:
            raise ProtocolLogicError(
                f"node {owner.node_id} resumed its fragment at t={owner.engine.now} "
                f"although urgent node {pending[0].node_id} was pending for the whole gap"
            )


def build_frog_network(
    engine: Engine,
    channel: Channel,
    recorder: MetricsRecorder,
    phy: PhyParams,
    params: FrogParams,
    urgent_ids: list[int],
    normal_ids: list[int],
    seed: int,
    packet_bytes: int = 34,
    queue_capacity: int = 10,
    rng_factory=RngStream,
    sink_id: int = 0,
) -> tuple[FrogSink, dict[int, FrogSensor]]:
    """Wire the sink plus one sensor per id; backoff streams are per-node."""
    params.validate(packet_bytes=packet_bytes)
    invariants = FrogInvariants(params)
    sink = FrogSink(sink_id, engine, channel, recorder, phy)
    sensors: dict[int, FrogSensor] = {}
    for node_id in sorted(urgent_ids) + sorted(normal_ids):
        sensor = FrogSensor(
            node_id,
            engine,
            channel,
            recorder,
            phy,
            params,
            rng=rng_factory(seed, node_id * 8 + 1),
            sink_id=sink_id,
            invariants=invariants,
            queue_capacity=queue_capacity,
        )
        if node_id in urgent_ids:
            invariants.urgent_nodes.append(sensor)
        sensors[node_id] = sensor
    return sink, sensors
