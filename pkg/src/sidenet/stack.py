"""The application-facing stack handle: init / attach / listen / connect /
send / recv, in the spirit of BSD sockets but message-oriented.

A Stack plays the role of the per-host sidecar process: it owns the NIC and
one engine per NIC queue, and applications talk to it only through attached
channels. Handles are explicit so several stacks (hosts) coexist in one
test process.

Blocking variants of connect/send/recv park the calling thread and are
meant for the threaded runtime; under the deterministic driver, use the
non-blocking forms and step the simulation.
"""

import threading
from random import Random

from . import handshake
from .channel import Channel, ConnectError, FAILED, CONNECTING
from .engine import Engine, Listener, pick_engine

EPHEMERAL_FLOW_PORT_BASE = 32768


class StackError(Exception):
    pass


class Stack:
    def __init__(self, nic, local_ip, seed=0, tick_us=None,
                 default_mode=handshake.MODE_OPTIMIZED,
                 default_p=handshake.DEFAULT_TARGET_P):
        self.nic = nic
        self.local_ip = local_ip
        self.seed = seed
        self.tick_us = tick_us
        self.default_mode = default_mode
        self.default_p = default_p
        self.engines = []
        self._attach_count = 0
        self._app_count = 0
        self._listen_ports = {}
        self._next_flow_port = EPHEMERAL_FLOW_PORT_BASE
        self._lock = threading.Lock()
        self._initialized = False

    def init(self):
        """Bring up one engine per NIC queue. Must precede attach()."""
        if self._initialized:
            return self
        from .engine import DEFAULT_TICK_US

        n = self.nic.num_queues()
        for i in range(n):
            rng = Random("%s/%d/engine/%d" % (self.local_ip, self.seed, i))
            self.engines.append(Engine(
                i, self.nic, self.local_ip, n, rng,
                tick_us=self.tick_us or DEFAULT_TICK_US,
                default_p=self.default_p))
        self._initialized = True
        return self

    def _require_init(self):
        if not self._initialized:
            raise StackError("stack not initialized; call init() first")

    def attach(self, policy=None):
        """Create a channel bound to one engine (round-robin by default)."""
        self._require_init()
        with self._lock:
            engine_id = pick_engine(policy, len(self.engines), self._attach_count)
            self._attach_count += 1
            self._app_count += 1
            channel = Channel(engine_id, self._app_count)
        self.engines[engine_id].channels.append(channel)
        return channel

    def listen(self, channel, port):
        """Bind a flow port; inbound flows land on this channel's engine."""
        self._require_init()
        if not 0 < port < 65536:
            raise ValueError("port must be in [1, 65535]")
        with self._lock:
            if port in self._listen_ports:
                raise StackError("port %d already bound" % port)
            listener = Listener(port, channel.owner_engine, channel)
            self._listen_ports[port] = listener
        # Replicate to every engine: sprayed SYNs may land on any queue, and
        # each engine decides for itself whether it is the target.
        for eng in self.engines:
            eng.control_inbox.append(("listen", listener))
        return listener

    bind = listen

    def connect(self, channel, remote_ip, remote_port, mode=None, p=None,
                remote_engines=None, blocking=False, timeout=None):
        """Open a flow to a listening peer; serviced at the engine's
        connect-processing interval. Returns the flow handle immediately
        unless blocking."""
        self._require_init()
        from .channel import FlowHandle

        with self._lock:
            local_port = self._alloc_flow_port()
        handle = FlowHandle(self.local_ip, remote_ip, local_port, remote_port,
                            channel)
        ports = handshake.FlowPorts(local=local_port, remote=remote_port)
        channel._push_control(("connect", handle, ports, remote_ip,
                               mode or self.default_mode, p or self.default_p,
                               remote_engines))
        if blocking:
            handle.wait(timeout)
            if handle.state == FAILED:
                raise ConnectError(handle.error or "connect failed",
                                   attempts=handle.attempts)
            if handle.state == CONNECTING:
                raise ConnectError("connect timed out", attempts=handle.attempts)
        return handle

    def _alloc_flow_port(self):
        for _ in range(65536):
            port = self._next_flow_port
            self._next_flow_port += 1
            if self._next_flow_port > 65535:
                self._next_flow_port = EPHEMERAL_FLOW_PORT_BASE
            if port not in self._listen_ports:
                return port
        raise StackError("no free flow ports")

    def send(self, channel, flow, payload, blocking=True, timeout=None):
        return channel.send(flow, payload, block=blocking, timeout=timeout)

    def recv(self, channel, blocking=False, timeout=None):
        return channel.recv(block=blocking, timeout=timeout)

    def close(self, flow):
        key = (flow.remote_ip, flow.remote_port, flow.local_port)
        self.engines[flow.owner_engine].control_inbox.append(("close", key))

    def stats_rows(self):
        """One mapping per engine (NIC queue), for the bench CSV export."""
        rows = []
        for eng in self.engines:
            qstats = self.nic.queue_stats[eng.engine_id]
            row = {"host": self.local_ip, "engine": eng.engine_id}
            row.update(vars(eng.stats))
            row["flows"] = len(eng.flows)
            row["retransmits"] = sum(
                f.stats.retransmits for f in eng.flows.values())
            row["queue_delivered"] = qstats.rx_delivered
            row["queue_ring_drops"] = qstats.rx_overflow_drops
            row["channel_rx_highwater"] = max(
                (ch.stats.rx_highwater for ch in eng.channels), default=0)
            row["channel_tx_highwater"] = max(
                (ch.stats.tx_highwater for ch in eng.channels), default=0)
            rows.append(row)
        return rows


def init(nic, local_ip, **kwargs):
    """Build and initialize a stack over an already-registered NIC."""
    return Stack(nic, local_ip, **kwargs).init()
