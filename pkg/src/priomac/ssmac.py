"""Synchronous slot-stealing MAC over a TDMA superframe.

Normal traffic owns dedicated slots.  Emergency-indication windows sit
between slots (default) or between whole cycles (`eis_per_slot=False`).
When an urgent packet exists, its node raises an indication in the next
window; the controller then inserts a critical cycle — a reservation phase
with one dedicated subslot per urgent-capable node, a schedule broadcast,
and one data slot per granted request, ordered by ascending packet deadline
(ties by node id).  The pending normal schedule shifts right by the full
inserted duration; deferred slots are postponed, never deleted.

All slot positions derive arithmetically from an anchor that the controller
advances when critical cycles are inserted, so an idle network costs no
events.  Nodes that armed a wake-up against the old schedule notice the
shift when they fire and simply re-arm (the shift always becomes visible at
indication start, strictly before any same-tick slot boundary).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .channel import BROADCAST, Channel, Frame, FrameKind, PhyParams
from .errors import ConfigError, ProtocolLogicError
from .kernel import Engine, RngStream
from .mac import MacNode, NodeRole, TxQueue
from .metrics import MetricsRecorder
from .traffic import DropReason, Packet, PriorityClass


@dataclass(frozen=True, slots=True)
class SuperframeConfig:
    """Timing structure.  Defaults compose from the 32 us byte time:
    a slot carries data (1088) + ack (352) + 2 SIFS (384) + guard (176).
    """

    nc_slot_us: int = 2000
    eis_us: int = 352
    rrp_subslot_us: int = 352
    dsp_us: int = 1000
    eis_per_slot: bool = True

    def validate(self, phy: PhyParams, packet_bytes: int, n_urgent: int) -> None:
        ctrl = phy.control_airtime()
        data = packet_bytes * phy.byte_time_us
        if self.eis_us < ctrl:
            raise ConfigError("eis_us shorter than an indication frame")
        if self.rrp_subslot_us < ctrl:
            raise ConfigError("rrp_subslot_us shorter than a request frame")
        if self.nc_slot_us < data + ctrl + 2 * phy.sifs_us:
            raise ConfigError("nc_slot_us cannot hold data + ack + 2 SIFS")
        bcast = (phy.dsp_base_bytes + phy.dsp_grant_bytes * max(1, n_urgent)) * phy.byte_time_us
        if self.dsp_us < bcast:
            raise ConfigError("dsp_us cannot hold the schedule broadcast")


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class SsSchedule:
    """Anchor-based slot/EIS position arithmetic shared by all nodes.

    The anchor names the next regular slot (pattern index, absolute start
    time); every future position follows from it.  Inserting a critical
    cycle re-points the anchor past the inserted phases, which is exactly
    the "shift the pending schedule right" rule.
    """

    def __init__(self, config: SuperframeConfig, nc_slot_count: int):
        self.config = config
        self.k = nc_slot_count
        self.anchor_index = 0
        self.anchor_time = 0
        self.inserted_cycles = 0
        # Window currently being turned into a critical cycle.  Another node
        # indicating in the same tick must still recognise it as open even
        # though the anchor already moved past it.
        self.last_window_start = -1

    # -- derived constants ----------------------------------------------

    def eis_period(self) -> int:
        """Distance between consecutive indication windows (the "cycle length"
        an arrival waits against)."""
        c = self.config
        if self.k == 0:
            return c.eis_us
        if c.eis_per_slot:
            return c.nc_slot_us + c.eis_us
        return self.k * c.nc_slot_us + c.eis_us

    # -- queries ----------------------------------------------------------

    def next_eis_start(self, t: int) -> int:
        c = self.config
        if self.k == 0:
            j = max(0, _ceil_div(t - self.anchor_time, c.eis_us))
            return self.anchor_time + j * c.eis_us
        if c.eis_per_slot:
            stride = c.nc_slot_us + c.eis_us
            base = self.anchor_time + c.nc_slot_us
            j = max(0, _ceil_div(t - base, stride))
            return base + j * stride
        period = self.k * c.nc_slot_us + c.eis_us
        base = self.anchor_time + (self.k - self.anchor_index) * c.nc_slot_us
        j = max(0, _ceil_div(t - base, period))
        return base + j * period

    def next_slot_start(self, slot_index: int, t: int) -> int:
        if not 0 <= slot_index < self.k:
            raise ProtocolLogicError(f"slot index {slot_index} outside 0..{self.k - 1}")
        c = self.config
        ahead = (slot_index - self.anchor_index) % self.k
        if c.eis_per_slot:
            stride = c.nc_slot_us + c.eis_us
            base = self.anchor_time + ahead * stride
            period = self.k * stride
        else:
            base = self.anchor_time + ahead * c.nc_slot_us
            if slot_index < self.anchor_index:
                base += c.eis_us  # crossed the cycle-end window
            period = self.k * c.nc_slot_us + c.eis_us
        j = max(0, _ceil_div(t - base, period))
        return base + j * period

    def next_eis_wait(self, arrival: int) -> int:
        """Time from `arrival` to the next indication opportunity."""
        return self.next_eis_start(arrival) - arrival

    # -- critical-cycle insertion ----------------------------------------

    def insert_critical(self, eis_start: int, rrp_total_us: int) -> None:
        """Stage 1, at indication start: re-anchor past EIS + RRP + DSP."""
        if self.next_eis_start(eis_start) != eis_start:
            raise ProtocolLogicError(f"t={eis_start} is not an indication window start")
        c = self.config
        if self.k == 0:
            self.anchor_index = 0
        elif c.eis_per_slot:
            slots_before = (eis_start - c.nc_slot_us - self.anchor_time) // (
                c.nc_slot_us + c.eis_us
            )
            self.anchor_index = (self.anchor_index + slots_before + 1) % self.k
        else:
            self.anchor_index = 0
        self.anchor_time = eis_start + c.eis_us + rrp_total_us + c.dsp_us
        self.inserted_cycles += 1
        self.last_window_start = eis_start

    def extend_for_grants(self, grant_count: int) -> None:
        """Stage 2, at schedule broadcast: make room for the granted data slots."""
        self.anchor_time += grant_count * self.config.nc_slot_us


def assign_cao(requests: list[tuple[int, int]]) -> list[tuple[int, int, int]]:
    """Grant table from (node, absolute deadline) requests.

    Stable-sorts ascending by deadline, ties by node id; rank i transmits in
    the i-th stolen slot.  Returns (node, deadline, rank) triples.
    """
    ordered = sorted(requests, key=lambda r: (r[1], r[0]))
    table = [(node, deadline, rank) for rank, (node, deadline) in enumerate(ordered, 1)]
    ranks = [rank for _, _, rank in table]
    if ranks != list(range(1, len(table) + 1)):
        raise ProtocolLogicError("grant ranks are not a 1..k permutation")
    for (_, d1, _), (_, d2, _) in zip(table, table[1:]):
        if d2 < d1:
            raise ProtocolLogicError("grant ranks do not ascend with deadline")
    return table


class SsState(Enum):
    IDLE = "idle"
    AWAIT_EIS = "await_eis"
    SENT_IND = "sent_ind"
    AWAIT_RRP_SUBSLOT = "await_rrp"
    AWAIT_CAO = "await_cao"
    AWAIT_DTP = "await_dtp"
    TX_DATA = "tx_data"


class ControllerPhase(Enum):
    NC_CYCLE = "nc_cycle"
    RRP = "rrp"
    DSP = "dsp"
    DTP = "dtp"


class SsController(MacNode):
    """Sink and schedule authority: detects indications, collects requests,
    broadcasts the grant order, and acks every data frame."""

    def __init__(self, node_id: int, engine: Engine, channel: Channel,
                 recorder: MetricsRecorder, phy: PhyParams, config: SuperframeConfig,
                 schedule: SsSchedule, urgent_ids: list[int],
                 delay_bounds: dict[int, int] | None = None):
        super().__init__(node_id, NodeRole.SINK_CONTROLLER, engine, channel, recorder)
        self.phy = phy
        self.config = config
        self.schedule = schedule
        self.urgent_index = {nid: i for i, nid in enumerate(sorted(urgent_ids))}
        self.rrp_total_us = len(urgent_ids) * config.rrp_subslot_us
        self.delay_bounds = delay_bounds if delay_bounds is not None else {}
        self.phase = ControllerPhase.NC_CYCLE
        self.critical_cycles = 0
        self._window_start: int | None = None
        self._last_window_handled = -1
        self._requests: list[tuple[int, int]] = []
        channel.add_contender(self)  # only to observe busy edges

    # The controller "hears" the indication energy the moment it starts:
    # a busy edge exactly at a window start can only be an indication.
    def medium_poke(self) -> None:
        now = self.engine.now
        if self._window_start is not None or self._last_window_handled == now:
            return
        if not self.channel.carrier_sense(self.node_id):
            return
        if self.schedule.next_eis_start(now) != now:
            return
        self._window_start = now
        self._last_window_handled = now
        self.schedule.insert_critical(now, self.rrp_total_us)
        self._requests = []
        self.phase = ControllerPhase.RRP
        self.critical_cycles += 1
        self.engine.schedule(
            now + self.config.eis_us + self.rrp_total_us,
            self._rrp_end,
            target=self.node_id,
            kind="rrp_end",
        )

    def on_frame_received(self, frame: Frame, at: int) -> None:
        kind = frame.kind
        if kind == FrameKind.EIS_IND:
            if self._window_start is None:
                raise ProtocolLogicError("indication outside any handled window")
        elif kind == FrameKind.RRP_REQ:
            self._collect_request(frame, at)
        elif kind == FrameKind.DATA:
            bound = self.delay_bounds.pop(frame.packet.id, None)
            if bound is not None and at - frame.packet.generated_at < bound:
                raise ProtocolLogicError(
                    f"urgent packet {frame.packet.id} delivered faster than the "
                    f"EIS + reservation + broadcast lower bound ({bound} us)"
                )
            self.recorder.record_delivery(frame.packet, at)
            self.engine.schedule(
                at + self.phy.sifs_us,
                lambda dst=frame.src: self._send_ack(dst),
                target=self.node_id,
                kind="ack",
            )
        else:
            super().on_frame_received(frame, at)

    def _collect_request(self, frame: Frame, at: int) -> None:
        if self.phase is not ControllerPhase.RRP or self._window_start is None:
            raise ProtocolLogicError("reservation request outside a reservation phase")
        idx = self.urgent_index.get(frame.src)
        if idx is None:
            raise ProtocolLogicError(f"node {frame.src} owns no reservation subslot")
        sub = self.config.rrp_subslot_us
        expected_start = self._window_start + self.config.eis_us + idx * sub
        if at != expected_start + self.phy.control_airtime():
            raise ProtocolLogicError(
                f"node {frame.src} transmitted outside its reservation subslot"
            )
        self._requests.append((frame.src, frame.deadline_us))

    def _rrp_end(self) -> None:
        now = self.engine.now
        table = assign_cao(self._requests) if self._requests else []
        grant_count = len(table)
        self.schedule.extend_for_grants(grant_count)
        self.phase = ControllerPhase.DSP
        dtp_start = now + self.config.dsp_us
        length = self.phy.dsp_base_bytes + self.phy.dsp_grant_bytes * grant_count
        self.channel.transmit(
            Frame(
                kind=FrameKind.DSP_BCAST,
                src=self.node_id,
                dst=BROADCAST,
                length_bytes=length,
                grants=tuple((node, rank) for node, _, rank in table),
                dtp_start_us=dtp_start,
            )
        )
        self.engine.schedule(
            dtp_start, lambda: self._dtp_begin(grant_count), target=self.node_id, kind="dtp"
        )

    def _dtp_begin(self, grant_count: int) -> None:
        self.phase = ControllerPhase.DTP
        self.engine.schedule(
            self.engine.now + grant_count * self.config.nc_slot_us,
            self._critical_end,
            target=self.node_id,
            kind="critical_end",
        )

    def _critical_end(self) -> None:
        self.phase = ControllerPhase.NC_CYCLE
        self._window_start = None
        self._requests = []

    def _send_ack(self, dst: int) -> None:
        self.channel.transmit(
            Frame(kind=FrameKind.ACK, src=self.node_id, dst=dst,
                  length_bytes=self.phy.control_bytes)
        )


class SsUrgentSensor(MacNode):
    """Urgent-capable node: indicate, request, then transmit in the granted slot."""

    def __init__(self, node_id: int, engine: Engine, channel: Channel,
                 recorder: MetricsRecorder, phy: PhyParams, config: SuperframeConfig,
                 schedule: SsSchedule, subslot_index: int, rrp_total_us: int,
                 sink_id: int = 0, delay_bounds: dict[int, int] | None = None,
                 queue_capacity: int = 10):
        super().__init__(node_id, NodeRole.SENSOR, engine, channel, recorder)
        self.phy = phy
        self.config = config
        self.schedule = schedule
        self.subslot_index = subslot_index
        self.rrp_total_us = rrp_total_us
        self.sink_id = sink_id
        self.delay_bounds = delay_bounds
        self.queue = TxQueue(queue_capacity)
        self.state = SsState.IDLE
        self.current: Packet | None = None
        self._pending_ev = None
        self._deadline_evs: dict[int, object] = {}
        self._deadline_passed = False

    def on_packet_arrival(self, packet: Packet) -> None:
        rejected = self.queue.push(packet)
        if rejected is not None:
            self.recorder.record_drop(rejected, DropReason.QUEUE_OVERFLOW, self.engine.now)
            return
        if self.delay_bounds is not None:
            wait = self.schedule.next_eis_wait(packet.generated_at)
            self.delay_bounds[packet.id] = wait + self.rrp_total_us + self.config.dsp_us
        self._deadline_evs[packet.id] = self.engine.schedule(
            packet.deadline_at,
            lambda p=packet: self._deadline_fired(p),
            target=self.node_id,
            kind="deadline",
        )
        if self.state is SsState.IDLE:
            self._serve_head()

    def pending_counts(self) -> dict[PriorityClass, int]:
        return {k: self.queue.pending(k) for k in PriorityClass}

    def _serve_head(self) -> None:
        self.current = self.queue.peek()
        self._deadline_passed = False
        if self.current is None:
            self.state = SsState.IDLE
            return
        self._arm_eis()

    def _arm_eis(self) -> None:
        self.state = SsState.AWAIT_EIS
        target = self.schedule.next_eis_start(self.engine.now)
        self._pending_ev = self.engine.schedule(
            target, self._eis_fire, target=self.node_id, kind="eis"
        )

    def _eis_fire(self) -> None:
        self._pending_ev = None
        now = self.engine.now
        if self.schedule.next_eis_start(now) != now and self.schedule.last_window_start != now:
            self._arm_eis()  # a critical cycle moved the window; chase it
            return
        self.state = SsState.SENT_IND
        self.channel.transmit(
            Frame(kind=FrameKind.EIS_IND, src=self.node_id, dst=self.sink_id,
                  length_bytes=self.phy.control_bytes)
        )

    def on_own_tx_end(self, frame: Frame, at: int) -> None:
        if frame.kind == FrameKind.EIS_IND and self.state is SsState.SENT_IND:
            self.state = SsState.AWAIT_RRP_SUBSLOT
            self._pending_ev = self.engine.schedule(
                at + self.subslot_index * self.config.rrp_subslot_us,
                self._rrp_fire,
                target=self.node_id,
                kind="rrp_req",
            )
        elif frame.kind == FrameKind.DATA and self.state is SsState.TX_DATA:
            pass  # ack follows deterministically in the same slot

    def _rrp_fire(self) -> None:
        self._pending_ev = None
        self.state = SsState.AWAIT_CAO
        self.channel.transmit(
            Frame(kind=FrameKind.RRP_REQ, src=self.node_id, dst=self.sink_id,
                  length_bytes=self.phy.control_bytes,
                  deadline_us=self.current.deadline_at)
        )

    def on_frame_received(self, frame: Frame, at: int) -> None:
        if frame.kind == FrameKind.DSP_BCAST:
            if self.state is not SsState.AWAIT_CAO:
                return  # not involved in this critical cycle
            mine = [rank for node, rank in frame.grants if node == self.node_id]
            if not mine:
                raise ProtocolLogicError(
                    f"node {self.node_id} requested a slot but was not granted one"
                )
            slot_at = frame.dtp_start_us + (mine[0] - 1) * self.config.nc_slot_us
            self.state = SsState.AWAIT_DTP
            self._pending_ev = self.engine.schedule(
                slot_at, self._dtp_fire, target=self.node_id, kind="dtp_slot"
            )
        elif frame.kind == FrameKind.ACK and frame.dst == self.node_id:
            if self.state is not SsState.TX_DATA:
                return
            self._finalize_current()
        else:
            super().on_frame_received(frame, at)

    def _dtp_fire(self) -> None:
        self._pending_ev = None
        pkt = self.current
        if pkt.deadline_at is not None and self.engine.now >= pkt.deadline_at:
            # expired on the way to its granted slot: leave the slot empty
            self._drop_current()
            return
        self.state = SsState.TX_DATA
        self.channel.transmit(
            Frame(kind=FrameKind.DATA, src=self.node_id, dst=self.sink_id,
                  length_bytes=pkt.length_bytes, packet=pkt)
        )

    def _deadline_fired(self, pkt: Packet) -> None:
        self._deadline_evs.pop(pkt.id, None)
        if pkt.delivered_at is not None or pkt.drop_reason is not None:
            return
        if pkt is self.current:
            if self.state is SsState.TX_DATA:
                self._deadline_passed = True  # frame already in flight; let it land
                return
            self._drop_current()
        else:
            self.queue.remove(pkt)
            self.recorder.record_drop(pkt, DropReason.DEADLINE_EXPIRED, self.engine.now)

    def _release_current(self) -> None:
        pkt = self.current
        if self._pending_ev is not None:
            self.engine.cancel(self._pending_ev)
            self._pending_ev = None
        ev = self._deadline_evs.pop(pkt.id, None)
        if ev is not None:
            self.engine.cancel(ev)
        if self.delay_bounds is not None:
            self.delay_bounds.pop(pkt.id, None)
        self.queue.remove(pkt)
        self.current = None

    def _finalize_current(self) -> None:
        if self.delay_bounds is not None:
            self.delay_bounds.pop(self.current.id, None)
        self._release_current()
        self._serve_head()

    def _drop_current(self) -> None:
        pkt = self.current
        self._release_current()
        self.recorder.record_drop(pkt, DropReason.DEADLINE_EXPIRED, self.engine.now)
        self._serve_head()


class SsNormalSensor(MacNode):
    """Normal node: transmits the queue head in its own dedicated slot."""

    def __init__(self, node_id: int, engine: Engine, channel: Channel,
                 recorder: MetricsRecorder, phy: PhyParams, config: SuperframeConfig,
                 schedule: SsSchedule, slot_index: int, sink_id: int = 0,
                 queue_capacity: int = 10):
        super().__init__(node_id, NodeRole.SENSOR, engine, channel, recorder)
        self.phy = phy
        self.config = config
        self.schedule = schedule
        self.slot_index = slot_index
        self.sink_id = sink_id
        self.queue = TxQueue(queue_capacity)
        self.transmitting: Packet | None = None
        self._wake_ev = None
        self.deferrals = 0  # wake-ups that chased a shifted slot

    def on_packet_arrival(self, packet: Packet) -> None:
        rejected = self.queue.push(packet)
        if rejected is not None:
            self.recorder.record_drop(rejected, DropReason.QUEUE_OVERFLOW, self.engine.now)
            return
        if self._wake_ev is None and self.transmitting is None:
            self._arm_wake()

    def pending_counts(self) -> dict[PriorityClass, int]:
        return {k: self.queue.pending(k) for k in PriorityClass}

    def _arm_wake(self) -> None:
        target = self.schedule.next_slot_start(self.slot_index, self.engine.now)
        self._wake_ev = self.engine.schedule(
            target, self._wake, target=self.node_id, kind="nc_slot"
        )

    def _wake(self) -> None:
        self._wake_ev = None
        now = self.engine.now
        if self.schedule.next_slot_start(self.slot_index, now) != now:
            self.deferrals += 1  # schedule shifted under us: postponed, not deleted
            self._arm_wake()
            return
        pkt = self.queue.peek()
        if pkt is None:
            return
        self.transmitting = pkt
        self.channel.transmit(
            Frame(kind=FrameKind.DATA, src=self.node_id, dst=self.sink_id,
                  length_bytes=pkt.length_bytes, packet=pkt)
        )

    def on_frame_received(self, frame: Frame, at: int) -> None:
        if frame.kind == FrameKind.ACK and frame.dst == self.node_id:
            if self.transmitting is None:
                raise ProtocolLogicError(f"unexpected ack at normal node {self.node_id}")
            self.queue.remove(self.transmitting)
            self.transmitting = None
            if len(self.queue):
                self._arm_wake()
        elif frame.kind == FrameKind.DSP_BCAST:
            pass  # schedule shifts are visible through the shared schedule object
        else:
            super().on_frame_received(frame, at)


def build_ssmac_network(
    engine: Engine,
    channel: Channel,
    recorder: MetricsRecorder,
    phy: PhyParams,
    config: SuperframeConfig,
    urgent_ids: list[int],
    normal_ids: list[int],
    seed: int,
    packet_bytes: int = 34,
    queue_capacity: int = 10,
    rng_factory=RngStream,
    sink_id: int = 0,
):
    """Wire controller + sensors around one shared schedule object."""
    config.validate(phy, packet_bytes, len(urgent_ids))
    schedule = SsSchedule(config, nc_slot_count=len(normal_ids))
    delay_bounds: dict[int, int] = {}
    controller = SsController(
        sink_id, engine, channel, recorder, phy, config, schedule,
        urgent_ids=urgent_ids, delay_bounds=delay_bounds,
    )
    sensors: dict[int, MacNode] = {}
    rrp_total = len(urgent_ids) * config.rrp_subslot_us
    for idx, node_id in enumerate(sorted(urgent_ids)):
        sensors[node_id] = SsUrgentSensor(
            node_id, engine, channel, recorder, phy, config, schedule,
            subslot_index=idx, rrp_total_us=rrp_total, sink_id=sink_id,
            delay_bounds=delay_bounds, queue_capacity=queue_capacity,
        )
    for idx, node_id in enumerate(sorted(normal_ids)):
        sensors[node_id] = SsNormalSensor(
            node_id, engine, channel, recorder, phy, config, schedule,
            slot_index=idx, sink_id=sink_id, queue_capacity=queue_capacity,
        )
    return controller, schedule, sensors
