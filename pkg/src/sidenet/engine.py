"""Per-core engines: shared-nothing run-to-completion packet processing.

Each engine owns exactly one NIC queue pair and every flow whose packets
steer there; engines never exchange state. One iteration drains a bounded
burst from the RX ring, services its channels' TX queues, fires due timers,
and (on a 50 microsecond grid) picks up new connect/listen requests.

Listener registrations are replicated to every engine, because connection
setup intentionally sprays SYNs across all queues; flow state is never
replicated.
"""

import heapq
from collections import deque
from dataclasses import dataclass

from . import handshake, transport, wire
from .channel import ESTABLISHED, FlowHandle

RX_BURST = 32
CHANNEL_MSG_BURST = 32
CONTROL_INTERVAL_US = 50
DEFAULT_TICK_US = 5


@dataclass(frozen=True)
class EnginePolicy:
    """How an application thread picks its engine: round-robin by default,
    or pinned to a specific engine for latency isolation."""

    kind: str
    index: int = -1

    @classmethod
    def round_robin(cls):
        return cls("round_robin")

    @classmethod
    def pinned(cls, index):
        return cls("pinned", index)


def pick_engine(policy, num_engines, attach_count):
    if policy is None or policy.kind == "round_robin":
        return attach_count % num_engines
    if policy.kind == "pinned":
        if not 0 <= policy.index < num_engines:
            raise ValueError("pinned engine %d out of range [0, %d)"
                             % (policy.index, num_engines))
        return policy.index
    raise ValueError("unknown policy %r" % (policy.kind,))


@dataclass
class EngineStats:
    iterations: int = 0
    frames_rx: int = 0
    frames_tx: int = 0
    rx_malformed: int = 0
    rx_unknown_flow: int = 0
    stray_syns: int = 0
    wrong_engine_syns: int = 0
    duplicate_syns: int = 0
    syns_sent: int = 0
    syns_rx: int = 0
    synacks_sent: int = 0
    synacks_rx: int = 0
    synacks_discarded: int = 0
    acks_sent: int = 0
    acks_rx: int = 0
    unknown_synacks: int = 0
    unknown_acks: int = 0
    handshake_retries: int = 0
    handshake_failures: int = 0
    handshakes_established: int = 0
    connects_requested: int = 0
    app_msgs_dropped: int = 0
    retransmits: int = 0


class Timer:
    __slots__ = ("due", "fn", "cancelled", "fired")

    def __init__(self, due, fn):
        self.due = due
        self.fn = fn
        self.cancelled = False
        self.fired = False

    @property
    def live(self):
        return not (self.cancelled or self.fired)

    def cancel(self):
        self.cancelled = True


@dataclass
class Listener:
    port: int
    target_engine: int
    channel: object


class Engine:
    def __init__(self, engine_id, nic, local_ip, num_engines, rng,
                 tick_us=DEFAULT_TICK_US, default_p=handshake.DEFAULT_TARGET_P):
        self.engine_id = engine_id
        self.nic = nic
        self.local_ip = local_ip
        self.num_engines = num_engines
        self.rng = rng
        self.tick_us = tick_us
        self.default_p = default_p
        self.flows = {}
        self.client_handshakes = {}
        self.server_handshakes = {}
        self.listeners = {}
        self.channels = []
        self.control_inbox = deque()
        self.tx_backlog = deque()
        self.stats = EngineStats()
        self._timers = []
        self._timer_seq = 0
        self._control_gate = None  # next 50 us grid point once requests wait
        self._next_allowed = 0

    # Scheduling interface used by the deterministic driver.

    def _immediate_work(self, now):
        if self.tx_backlog or self.nic.rx_pending(self.engine_id):
            return True
        if any(ch.tx_pending() for ch in self.channels):
            return True
        due = self._next_timer_due()
        if due is not None and due <= now:
            return True
        gate = self._control_time(now)
        return gate is not None and now >= gate

    def _control_pending(self):
        return bool(self.control_inbox) or any(
            ch.control_pending() for ch in self.channels)

    def _control_time(self, now):
        """Connect/listen requests are serviced only on the 50 us grid; the
        first grid point after a request is observed becomes its gate."""
        if not self._control_pending():
            self._control_gate = None
            return None
        if self._control_gate is None:
            self._control_gate = ((now // CONTROL_INTERVAL_US) + 1) * CONTROL_INTERVAL_US
        return self._control_gate

    def _next_timer_due(self):
        timers = self._timers
        while timers:
            due, _, timer = timers[0]
            if not timer.live:
                heapq.heappop(timers)
                continue
            return due
        return None

    def due(self, now):
        return now >= self._next_allowed and self._immediate_work(now)

    def next_due(self, now):
        """Earliest future time this engine will have something to do."""
        candidates = []
        if self._immediate_work(now):
            candidates.append(now)
        t = self._next_timer_due()
        if t is not None:
            candidates.append(t)
        gate = self._control_time(now)
        if gate is not None:
            candidates.append(gate)
        if not candidates:
            return None
        return max(min(candidates), self._next_allowed)

    def arm_timer(self, due, fn):
        timer = Timer(due, fn)
        self._timer_seq += 1
        heapq.heappush(self._timers, (due, self._timer_seq, timer))
        return timer

    # The run-to-completion loop body.

    def run_iteration(self, now):
        """One bounded iteration; returns the number of items processed."""
        work = 0
        self.stats.iterations += 1

        while self.tx_backlog:
            if self.nic.tx_burst(self.engine_id, [self.tx_backlog[0]]) != 1:
                break
            self.tx_backlog.popleft()
            work += 1

        for frame in self.nic.rx_burst(self.engine_id, RX_BURST):
            self.stats.frames_rx += 1
            self._dispatch(frame, now)
            work += 1

        for ch in self.channels:
            for handle, payload in ch._pop_tx(CHANNEL_MSG_BURST, self.engine_id):
                self._app_send(handle, payload, now)
                work += 1

        while True:
            due = self._next_timer_due()
            if due is None or due > now:
                break
            _, _, timer = heapq.heappop(self._timers)
            timer.fired = True
            timer.fn(now)
            work += 1

        gate = self._control_time(now)
        if gate is not None and now >= gate:
            for request in self._drain_control():
                self._process_control(request, now)
                work += 1
            self._control_gate = None

        self._next_allowed = now + self.tick_us if work else now
        return work

    def emit(self, frame):
        self.stats.frames_tx += 1
        if self.tx_backlog or self.nic.tx_burst(self.engine_id, [frame]) != 1:
            self.tx_backlog.append(frame)

    # RX dispatch.

    def _dispatch(self, frame, now):
        pkt = wire.parse_frame(frame)
        if pkt is None:
            self.stats.rx_malformed += 1
            return
        t = pkt.pkt_type
        if t == wire.PKT_DATA or t == wire.PKT_SACK:
            flow = self.flows.get((pkt.src_ip, pkt.flow_src, pkt.flow_dst))
            if flow is None:
                self.stats.rx_unknown_flow += 1
                return
            if t == wire.PKT_DATA:
                flow.on_data(pkt, now)
            else:
                flow.on_sack(pkt, now)
        elif t == wire.PKT_SYN:
            self.stats.syns_rx += 1
            self._on_syn(pkt, now)
        elif t == wire.PKT_SYNACK:
            self.stats.synacks_rx += 1
            hs = self.client_handshakes.get((pkt.src_ip, pkt.flow_src, pkt.flow_dst))
            if hs is None:
                self.stats.unknown_synacks += 1
                return
            hs.on_synack(self, now, pkt)
        elif t == wire.PKT_ACK:
            self.stats.acks_rx += 1
            hs = self.server_handshakes.get((pkt.src_ip, pkt.flow_src, pkt.flow_dst))
            if hs is None:
                self.stats.unknown_acks += 1
                return
            hs.on_ack(self, now, pkt)
        elif t == wire.PKT_FIN or t == wire.PKT_FINACK:
            flow = self.flows.get((pkt.src_ip, pkt.flow_src, pkt.flow_dst))
            if flow is None:
                return
            if t == wire.PKT_FIN:
                flow.on_fin(pkt, now)
            else:
                flow.on_finack(pkt, now)

    def _on_syn(self, pkt, now):
        listener = self.listeners.get(pkt.flow_dst)
        if listener is None:
            self.stats.stray_syns += 1
            return
        if listener.target_engine != self.engine_id:
            # Expected spray waste; the owning engine sees its own copy.
            self.stats.wrong_engine_syns += 1
            return
        key = (pkt.src_ip, pkt.flow_src, pkt.flow_dst)
        if key in self.flows:
            self.stats.duplicate_syns += 1
            return
        hs = self.server_handshakes.get(key)
        if hs is None:
            info = wire.unpack_syn_payload(pkt.payload)
            if info is None:
                self.stats.rx_malformed += 1
                return
            client_engines, client_engine_id = info
            mode = (handshake.MODE_OPTIMIZED if pkt.flags & wire.FLAG_OPTIMIZED
                    else handshake.MODE_NAIVE)
            hs = handshake.ServerHandshake(
                listener, pkt.src_ip,
                handshake.FlowPorts(local=pkt.flow_dst, remote=pkt.flow_src),
                mode, max(1, client_engines), client_engine_id, self.default_p)
            self.server_handshakes[key] = hs
        hs.on_syn(self, now, pkt)

    # Channel TX.

    def _app_send(self, handle, payload, now):
        flow = self.flows.get((handle.remote_ip, handle.remote_port,
                               handle.local_port))
        if flow is None or handle.state != ESTABLISHED:
            self.stats.app_msgs_dropped += 1
            return
        flow.send_message(payload, now)

    # Control plane (connect/listen/close), serviced on the 50 us grid.

    def _drain_control(self):
        requests = list(self.control_inbox)
        self.control_inbox.clear()
        for ch in self.channels:
            requests.extend(ch._pop_control())
        return requests

    def _process_control(self, request, now):
        op = request[0]
        if op == "connect":
            _, handle, ports, remote_ip, mode, p, remote_engines = request
            self.stats.connects_requested += 1
            hs = handshake.ClientHandshake(
                handle, ports, remote_ip, mode, p,
                local_engines=self.num_engines,
                remote_engines=remote_engines or self.num_engines)
            self.client_handshakes[hs.key()] = hs
            hs.start(self, now)
        elif op == "listen":
            listener = request[1]
            self.listeners[listener.port] = listener
        elif op == "unlisten":
            self.listeners.pop(request[1], None)
        elif op == "close":
            flow = self.flows.get(request[1])
            if flow is not None:
                flow.start_close(now)

    # Flow lifecycle, called by the handshake state machines.

    def establish_client_flow(self, hs, tx_udp, rx_udp, remote_engine):
        flow = transport.Flow(self, hs.handle, hs.ports, hs.remote_ip,
                              tx_udp, rx_udp, hs.handle.channel)
        flow.touched_by.add(self.engine_id)
        flow.last_activity = 0
        self.flows[hs.key()] = flow
        hs.handle.remote_engine = remote_engine
        hs.handle.attempts = hs.attempt
        hs.handle._settle(ESTABLISHED, attempts=hs.attempt)
        return flow

    def establish_server_flow(self, hs, tx_udp, rx_udp):
        handle = FlowHandle(self.local_ip, hs.remote_ip, hs.ports.local,
                            hs.ports.remote, hs.listener.channel)
        handle.remote_engine = hs.client_engine_id
        handle._settle(ESTABLISHED)
        flow = transport.Flow(self, handle, hs.ports, hs.remote_ip,
                              tx_udp, rx_udp, hs.listener.channel)
        flow.touched_by.add(self.engine_id)
        self.flows[hs.key()] = flow
        return flow

    def drop_flow(self, flow):
        self.flows.pop(flow.key(), None)
        self.client_handshakes.pop(flow.key(), None)
        self.server_handshakes.pop(flow.key(), None)

    def drop_client_handshake(self, hs):
        self.client_handshakes.pop(hs.key(), None)

    def drop_server_handshake(self, hs):
        self.server_handshakes.pop(hs.key(), None)
