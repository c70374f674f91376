"""Reliable message transport over the flow's chosen UDP port pairs.

Messages (1 byte to 8 MiB) are split into fixed 1408-byte fragments that
carry a per-flow packet sequence number, a message id, and byte placement
within the message. The receiver acknowledges cumulatively plus up to eight
selective ranges; holes trigger fast retransmit after three reports, and a
retransmission timer backs the whole thing up. Completed messages are
handed to the application whole, in message-id order per flow, never split
or coalesced.

A fixed 64-packet send window stands in for congestion control, which this
stack deliberately does not have; the window constant is the seam where a
real controller would go.
"""

from collections import deque
from dataclasses import dataclass

from . import wire
from .channel import ESTABLISHED, RESET, CLOSED, Message

SEND_WINDOW = 64
RECEIVE_WINDOW = 256
RTO_BASE_US = 10_000
RTO_CAP_US = 1_000_000
MAX_FRAGMENT_RETRANSMITS = 16
ACK_EVERY_FRAMES = 2
ACK_DELAY_US = 100
FAST_RETRANSMIT_DUPS = 3
SACK_MAX_RANGES = 8
IDLE_REAP_US = 3_000_000


class MessageTooLarge(ValueError):
    pass


@dataclass(slots=True)
class _TxEntry:
    frame: bytes
    sent_at: int
    retransmits: int = 0
    sack_misses: int = 0
    fast_done: bool = False  # fast retransmit fired for the current cycle


class _RxMessage:
    __slots__ = ("total_len", "parts", "got")

    def __init__(self, total_len):
        self.total_len = total_len
        self.parts = {}
        self.got = 0

    def add(self, offset, data):
        if offset in self.parts:
            return False
        self.parts[offset] = data
        self.got += len(data)
        return self.got >= self.total_len

    def assemble(self):
        return b"".join(self.parts[off] for off in sorted(self.parts))


@dataclass
class FlowStats:
    msgs_sent: int = 0
    msgs_delivered: int = 0
    frags_sent_total: int = 0
    frags_sent_unique: int = 0
    frags_acked_unique: int = 0
    retransmits: int = 0
    rx_duplicates: int = 0
    rx_out_of_window: int = 0
    protocol_errors: int = 0
    sacks_sent: int = 0


class Flow:
    """One established connection's engine-local sequencing/reassembly state.

    Owned by exactly one engine; the application only ever sees the paired
    FlowHandle and whole messages crossing the channel.
    """

    def __init__(self, eng, handle, flow_ports, remote_ip, tx_udp, rx_udp,
                 channel, sack_enabled=True):
        self.eng = eng
        self.engine_id = eng.engine_id
        self.handle = handle
        self.ports = flow_ports
        self.remote_ip = remote_ip
        self.tx_udp = tx_udp
        self.rx_udp = rx_udp
        self.channel = channel
        self.sack_enabled = sack_enabled
        self.stats = FlowStats()
        self.touched_by = set()
        self.last_activity = 0

        # Sender state.
        self.next_tx_seq = 0
        self.next_msg_id = 0
        self.acked_upto = 0  # peer's cumulative ack (next seq it expects)
        self.pending = deque()  # (seq, frame) fragments waiting for window
        self.unacked = {}  # seq -> _TxEntry, insertion order == seq order
        self.rto_us = RTO_BASE_US
        self.rto_timer = None
        self.srtt_us = 0  # smoothed RTT; damps reorder-induced fast retx

        # Receiver state.
        self.rx_next = 0
        self.rx_seen = set()  # received seqs >= rx_next
        self.reassembly = {}
        self.next_deliver_msg_id = 0
        self.completed = {}
        self.frames_since_ack = 0
        self.ack_timer = None

    def key(self):
        return (self.remote_ip, self.ports.remote, self.ports.local)

    # Sending.

    def send_message(self, payload, now):
        if self.handle.state != ESTABLISHED:
            raise ValueError("flow is %s" % self.handle.state)
        if not payload:
            raise ValueError("empty message")
        if len(payload) > wire.MAX_MESSAGE_BYTES:
            raise MessageTooLarge("message of %d bytes exceeds 8 MiB" % len(payload))
        msg_id = self.next_msg_id
        self.next_msg_id += 1
        msg_len = len(payload)
        for off in range(0, msg_len, wire.FRAGMENT_PAYLOAD):
            chunk = payload[off:off + wire.FRAGMENT_PAYLOAD]
            last = off + len(chunk) >= msg_len
            seq = self.next_tx_seq
            self.next_tx_seq += 1
            frame = wire.build_frame(
                self.eng.local_ip, self.remote_ip, self.tx_udp.src,
                self.tx_udp.dst, wire.PKT_DATA, self.ports.local,
                self.ports.remote, payload=chunk, seq=seq, msg_id=msg_id,
                frag_offset=off, msg_len=msg_len,
                flags=wire.FLAG_LAST_FRAGMENT if last else 0)
            self.pending.append((seq, frame))
        self.stats.msgs_sent += 1
        self.pump(now)
        return msg_id

    def pump(self, now):
        """Emit pending fragments while the send window has room.

        Besides the 64-packet cap, never run more than the receiver's window
        past the cumulative ack: SACKed holes free window slots, and without
        this bound a persistent hole would let new fragments sail beyond
        what the receiver is willing to buffer.
        """
        sent = 0
        if self.handle.state != ESTABLISHED:
            return 0
        horizon = self.acked_upto + RECEIVE_WINDOW
        while (self.pending and len(self.unacked) < SEND_WINDOW
               and self.pending[0][0] < horizon):
            seq, frame = self.pending.popleft()
            self.unacked[seq] = _TxEntry(frame, now)
            self.eng.emit(frame)
            self.stats.frags_sent_total += 1
            self.stats.frags_sent_unique += 1
            sent += 1
        if self.unacked:
            self._ensure_rto_timer(now)
        return sent

    def _ensure_rto_timer(self, now):
        if self.rto_timer is None or not self.rto_timer.live:
            oldest = next(iter(self.unacked.values()))
            self.rto_timer = self.eng.arm_timer(
                oldest.sent_at + self.rto_us, lambda t: self.on_rto(t))

    def on_sack(self, pkt, now):
        """Cumulative + selective ack processing, fast retransmit, window
        advance."""
        self.touched_by.add(self.eng.engine_id)
        self.last_activity = now
        ack = pkt.ack
        if ack > self.next_tx_seq:
            self.stats.protocol_errors += 1
            return
        progressed = False
        for seq in [s for s in self.unacked if s < ack]:
            entry = self.unacked.pop(seq)
            self.stats.frags_acked_unique += 1
            progressed = True
            if entry.retransmits == 0:  # Karn: never sample retransmissions
                sample = now - entry.sent_at
                self.srtt_us = (sample if self.srtt_us == 0
                                else (7 * self.srtt_us + sample) // 8)
        if ack > self.acked_upto:
            self.acked_upto = ack
            progressed = True
        ranges = wire.unpack_sack_payload(pkt.payload) if pkt.payload else []
        for start, end in ranges:
            for seq in [s for s in self.unacked if start <= s < end]:
                del self.unacked[seq]
                self.stats.frags_acked_unique += 1
        if progressed:
            self.rto_us = RTO_BASE_US
            if self.rto_timer is not None:
                self.rto_timer.cancel()
            if self.unacked:
                self._ensure_rto_timer(now)
        if ranges:
            # Fast retransmit fires at most once per hole per cycle; a
            # duplicate-elicited ack storm must not beget more duplicates.
            # The timeout path re-opens the cycle if the hole persists.
            # Entries younger than the smoothed RTT are not counted: their
            # SACK holes are usually just delivery reordering in flight.
            highest = max(end for _, end in ranges)
            for seq, entry in list(self.unacked.items()):
                if seq >= highest or entry.fast_done:
                    continue
                if self.srtt_us and now - entry.sent_at < self.srtt_us:
                    continue
                if any(start <= seq < end for start, end in ranges):
                    continue
                entry.sack_misses += 1
                if entry.sack_misses >= FAST_RETRANSMIT_DUPS:
                    entry.fast_done = True
                    self._retransmit(seq, entry, now)
        self.pump(now)

    def _retransmit(self, seq, entry, now):
        if self.handle.state != ESTABLISHED:
            return
        entry.retransmits += 1
        if entry.retransmits > MAX_FRAGMENT_RETRANSMITS:
            self.reset("fragment %d retransmitted %d times without an ack"
                       % (seq, MAX_FRAGMENT_RETRANSMITS))
            return
        entry.sent_at = now
        self.eng.emit(entry.frame)
        self.stats.frags_sent_total += 1
        self.stats.retransmits += 1

    def on_rto(self, now):
        if not self.unacked:
            return
        seq, entry = next(iter(self.unacked.items()))
        if now - entry.sent_at < self.rto_us:
            self._ensure_rto_timer(now)  # acked and re-filled since arming
            return
        entry.fast_done = False
        entry.sack_misses = 0
        self._retransmit(seq, entry, now)
        if self.handle.state != ESTABLISHED:
            return
        self.rto_us = min(self.rto_us * 2, RTO_CAP_US)
        self.rto_timer = self.eng.arm_timer(now + self.rto_us,
                                            lambda t: self.on_rto(t))

    def reset(self, reason):
        self.handle._settle(RESET, reason)
        if self.rto_timer is not None:
            self.rto_timer.cancel()
        if self.ack_timer is not None:
            self.ack_timer.cancel()
        self.eng.drop_flow(self)

    # Receiving.

    def on_data(self, pkt, now):
        self.touched_by.add(self.eng.engine_id)
        self.last_activity = now
        seq = pkt.seq
        if seq < self.rx_next or seq in self.rx_seen:
            self.stats.rx_duplicates += 1
            self._emit_sack(now)  # re-ack only
            return
        if seq >= self.rx_next + RECEIVE_WINDOW:
            self.stats.rx_out_of_window += 1
            return
        self.rx_seen.add(seq)
        while self.rx_next in self.rx_seen:
            self.rx_seen.discard(self.rx_next)
            self.rx_next += 1
        buf = self.reassembly.get(pkt.msg_id)
        if buf is None:
            buf = self.reassembly[pkt.msg_id] = _RxMessage(pkt.msg_len)
        if buf.add(pkt.frag_offset, pkt.payload):
            del self.reassembly[pkt.msg_id]
            self.completed[pkt.msg_id] = buf.assemble()
            self._release(now)
        self.frames_since_ack += 1
        if self.frames_since_ack >= ACK_EVERY_FRAMES:
            self._emit_sack(now)
        elif self.ack_timer is None or not self.ack_timer.live:
            self.ack_timer = self.eng.arm_timer(
                now + ACK_DELAY_US, lambda t: self._on_ack_timer(t))

    def _release(self, now):
        """Hand completed messages to the app strictly in message-id order."""
        while self.next_deliver_msg_id in self.completed:
            payload = self.completed.pop(self.next_deliver_msg_id)
            self.next_deliver_msg_id += 1
            self.stats.msgs_delivered += 1
            self.channel._push_rx(Message(self.handle, payload), self.engine_id)

    def _on_ack_timer(self, now):
        if self.frames_since_ack > 0:
            self._emit_sack(now)

    def _emit_sack(self, now):
        self.frames_since_ack = 0
        if self.ack_timer is not None:
            self.ack_timer.cancel()
        ranges = self._sack_ranges() if self.sack_enabled else []
        self.eng.emit(wire.build_frame(
            self.eng.local_ip, self.remote_ip, self.tx_udp.src,
            self.tx_udp.dst, wire.PKT_SACK, self.ports.local,
            self.ports.remote, payload=wire.pack_sack_payload(ranges),
            ack=self.rx_next))
        self.stats.sacks_sent += 1

    def _sack_ranges(self):
        if not self.rx_seen:
            return []
        ranges = []
        start = prev = None
        for seq in sorted(self.rx_seen):
            if start is None:
                start = prev = seq
                continue
            if seq == prev + 1:
                prev = seq
                continue
            ranges.append((start, prev + 1))
            if len(ranges) >= SACK_MAX_RANGES:
                return ranges
            start = prev = seq
        ranges.append((start, prev + 1))
        return ranges[:SACK_MAX_RANGES]

    # Teardown.

    def on_fin(self, pkt, now):
        self.eng.emit(wire.build_frame(
            self.eng.local_ip, self.remote_ip, self.tx_udp.src,
            self.tx_udp.dst, wire.PKT_FINACK, self.ports.local,
            self.ports.remote))
        if self.handle.state == ESTABLISHED:
            self.handle._settle(CLOSED)
        self.eng.drop_flow(self)

    def on_finack(self, pkt, now):
        if self.handle.state == ESTABLISHED:
            self.handle._settle(CLOSED)
        self.eng.drop_flow(self)

    def start_close(self, now):
        self.eng.emit(wire.build_frame(
            self.eng.local_ip, self.remote_ip, self.tx_udp.src,
            self.tx_udp.dst, wire.PKT_FIN, self.ports.local,
            self.ports.remote))
        # Peer or the idle reaper finishes the job if the FIN-ACK is lost.
        self.eng.arm_timer(now + IDLE_REAP_US, lambda t: self._reap(t))

    def _reap(self, now):
        if self.key() in self.eng.flows:
            if self.handle.state == ESTABLISHED:
                self.handle._settle(CLOSED)
            self.eng.drop_flow(self)

    def conservation_ok(self):
        s = self.stats
        unique = s.frags_acked_unique + len(self.unacked)
        return (s.frags_sent_unique == unique
                and s.frags_sent_total == s.frags_sent_unique + s.retransmits)
