"""Shared half-duplex broadcast channel for a single-hop star.

Collision model: a frame is delivered intact iff no other transmission
interval overlapped it (intervals are half-open, so a frame ending at t
does not occupy t).  The medium is error-free apart from collisions and
propagation delay is zero, so carrier sense is globally consistent and no
hidden terminals exist.

Emergency-indication frames are treated as energy, not data: simultaneous
indications do not cancel each other, and they are delivered to the sink
even when they overlap.

Besides the physical state the channel tracks two reservation levels set
by delivered frames (virtual carrier sense):

* a *hard* reservation (RTS through the end of its handshake unit, a data
  or fragment frame through the end of its ack) honoured by everyone, and
* a *soft* reservation (an inter-fragment gap announced by a fragment with
  more fragments pending) honoured only by normal-priority contenders, so
  urgent traffic can seize the gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .errors import ConfigError, ProtocolLogicError
from .kernel import Engine, SimTime

BROADCAST = -1


class FrameKind(IntEnum):
    DATA = 0
    FRAGMENT = 1
    RTS = 2
    CTS = 3
    ACK = 4
    EIS_IND = 5
    RRP_REQ = 6
    DSP_BCAST = 7


@dataclass(frozen=True, slots=True)
class PhyParams:
    """Radio constants. 250 kbit/s => 32 us per byte; all control frames 11 bytes."""

    byte_time_us: int = 32
    sifs_us: int = 192
    control_bytes: int = 11
    dsp_base_bytes: int = 3
    dsp_grant_bytes: int = 2
    propagation_us: int = 0

    def validate(self) -> None:
        if self.byte_time_us < 1:
            raise ConfigError("byte_time_us must be >= 1")
        if self.propagation_us != 0:
            raise ConfigError("non-zero propagation delay is not modeled")
        if self.control_bytes < 1 or self.sifs_us < 0:
            raise ConfigError("invalid control_bytes / sifs_us")

    def control_airtime(self) -> int:
        return self.control_bytes * self.byte_time_us


@dataclass(slots=True)
class Frame:
    """One on-air transmission unit."""

    kind: FrameKind
    src: int
    dst: int
    length_bytes: int
    packet: object = None          # Packet carried by DATA / FRAGMENT
    frag_index: int | None = None
    frag_count: int | None = None
    deadline_us: int | None = None  # reservation request payload
    grants: tuple | None = None     # schedule broadcast payload: ((node, rank), ...)
    dtp_start_us: int | None = None
    hard_until: int | None = None   # virtual-carrier reservation set on delivery
    soft_until: int | None = None


class _Tx:
    __slots__ = ("src", "start", "end", "frame", "corrupted")

    def __init__(self, src: int, start: int, end: int, frame: Frame):
        self.src = src
        self.start = start
        self.end = end
        self.frame = frame
        self.corrupted = False


class Channel:
    """Single broadcast medium owned by one simulation instance."""

    def __init__(self, engine: Engine, phy: PhyParams, *, record_verdicts: bool = False):
        phy.validate()
        self.engine = engine
        self.phy = phy
        self.nodes: dict[int, object] = {}
        self._active: list[_Tx] = []
        self._eis_marks: list[tuple[int, int]] = []
        self._hard_until = 0
        self._hard_src = BROADCAST
        self._soft_until = 0
        self._soft_src = BROADCAST
        self._contenders: list[object] = []
        self.collisions: dict[FrameKind, int] = {k: 0 for k in FrameKind}
        self.delivered: dict[FrameKind, int] = {k: 0 for k in FrameKind}
        # optional per-frame log: (frame, start, end, intact) in verdict order
        self.verdicts: list[tuple[Frame, int, int, bool]] | None = (
            [] if record_verdicts else None
        )

    # -- wiring ---------------------------------------------------------

    def register(self, node_id: int, node) -> None:
        if node_id in self.nodes:
            raise ConfigError(f"node id {node_id} registered twice")
        self.nodes[node_id] = node

    def add_contender(self, listener) -> None:
        if listener not in self._contenders:
            self._contenders.append(listener)

    def remove_contender(self, listener) -> None:
        if listener in self._contenders:
            self._contenders.remove(listener)

    # -- transmission ---------------------------------------------------

    def airtime(self, length_bytes: int) -> int:
        return length_bytes * self.phy.byte_time_us

    def transmit(self, frame: Frame, at: SimTime | None = None) -> SimTime:
        """Put `frame` on the air.  Returns the transmission end time.

        Registers the interval, marks overlap with every concurrent
        transmission, and schedules the delivery verdict at the end time.
        """
        now = self.engine.now
        if at is None:
            at = now
        if at != now:
            raise ProtocolLogicError("transmit must be issued at the current clock")
        if frame.length_bytes < 1:
            raise ProtocolLogicError("frame length must be >= 1 byte")
        for tx in self._active:
            # A frame whose interval ends exactly now is already clear of the air;
            # its end event may simply not have been processed yet this tick.
            if tx.src == frame.src and tx.end > at:
                raise ProtocolLogicError(
                    f"node {frame.src} started a transmission while already transmitting"
                )
        end = at + self.airtime(frame.length_bytes)
        tx = _Tx(frame.src, at, end, frame)
        for other in self._active:
            if other.end > at:
                # Genuine overlap destroys both frames (no capture effect).
                other.corrupted = True
                tx.corrupted = True
        self._active.append(tx)
        if frame.kind == FrameKind.EIS_IND:
            self._eis_marks.append((at, end))
        self.engine.schedule(end, lambda: self._finish(tx), target=frame.src, kind="tx_end")
        if len(self._active) == 1:
            self._poke_contenders()
        return end

    def _finish(self, tx: _Tx) -> None:
        self._active.remove(tx)
        frame = tx.frame
        now = self.engine.now
        intact = not tx.corrupted
        if self.verdicts is not None:
            self.verdicts.append((frame, tx.start, tx.end, intact))
        if intact:
            self.delivered[frame.kind] += 1
            if frame.hard_until is not None and frame.hard_until > self._hard_until:
                self._set_reservation(frame.hard_until, frame.src, soft=False)
            if frame.soft_until is not None and frame.soft_until > self._soft_until:
                self._set_reservation(frame.soft_until, frame.src, soft=True)
            if frame.dst == BROADCAST:
                for node_id, node in self.nodes.items():
                    if node_id != frame.src:
                        node.on_frame_received(frame, now)
            else:
                receiver = self.nodes.get(frame.dst)
                if receiver is not None:
                    receiver.on_frame_received(frame, now)
        else:
            self.collisions[frame.kind] += 1
            if frame.kind == FrameKind.EIS_IND:
                # Energy detection: overlapping indications still raise the flag.
                receiver = self.nodes.get(frame.dst)
                if receiver is not None:
                    receiver.on_frame_received(frame, now)
        sender = self.nodes.get(frame.src)
        if sender is not None:
            sender.on_own_tx_end(frame, now)
        self._poke_contenders()

    # -- sensing --------------------------------------------------------

    def carrier_sense(self, node_id: int, at: SimTime | None = None) -> bool:
        """Physical carrier sense: True (BUSY) iff another node's interval contains `at`."""
        if at is None:
            at = self.engine.now
        for tx in self._active:
            if tx.src != node_id and tx.start <= at < tx.end:
                return True
        return False

    def busy_for(self, node_id: int, honor_soft: bool) -> bool:
        """Contention-time view: physical carrier plus reservations.

        A node ignores reservations it set itself; soft (inter-fragment gap)
        reservations bind only normal-priority contenders.
        """
        now = self.engine.now
        if self.carrier_sense(node_id):
            return True
        if self._hard_until > now and self._hard_src != node_id:
            return True
        if honor_soft and self._soft_until > now and self._soft_src != node_id:
            return True
        return False

    def or_channel_sense(self, start: SimTime, end: SimTime) -> bool:
        """True iff at least one emergency indication overlapped [start, end)."""
        self._eis_marks = [(s, e) for s, e in self._eis_marks if e > start]
        return any(s < end and e > start for s, e in self._eis_marks)

    # -- virtual carrier ------------------------------------------------

    def _set_reservation(self, until: int, src: int, soft: bool) -> None:
        if soft:
            self._soft_until = until
            self._soft_src = src
        else:
            self._hard_until = until
            self._hard_src = src
        # Wake contenders when the reservation lapses; stale checks are skipped.
        self.engine.schedule(until, self._poke_contenders, target=src, kind="nav_end")

    def _poke_contenders(self) -> None:
        for listener in list(self._contenders):
            listener.medium_poke()
