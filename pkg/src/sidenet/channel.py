"""Application-facing message channels.

A Channel is the only bridge between one application thread and one engine:
a pair of bounded message queues plus a wakeup signal, so receivers can
sleep instead of polling. The wakeup contract is strict: the engine signals
after every enqueue, and a waiting receiver rechecks the queue before going
to sleep, so a blocking recv can never sleep while a message is available.

Payloads are copied across the channel; the device model has no way to
transmit straight out of application memory.
"""

import threading
from collections import deque
from dataclasses import dataclass

CHANNEL_CAPACITY = 1024

# Flow handle states.
CONNECTING = "connecting"
ESTABLISHED = "established"
FAILED = "failed"
RESET = "reset"
CLOSED = "closed"


class ChannelError(Exception):
    pass


class FlowError(Exception):
    pass


class ConnectError(Exception):
    def __init__(self, message, attempts=0):
        super().__init__(message)
        self.attempts = attempts


@dataclass
class ChannelStats:
    rx_enqueued: int = 0
    rx_dequeued: int = 0
    tx_enqueued: int = 0
    tx_dequeued: int = 0
    empty_polls: int = 0  # non-blocking recvs that found nothing
    wakeups: int = 0
    rx_highwater: int = 0
    tx_highwater: int = 0


class FlowHandle:
    """Application-side view of one connection. State fields are written by
    the owning engine and read by the application thread."""

    def __init__(self, local_ip, remote_ip, local_port, remote_port, channel):
        self.local_ip = local_ip
        self.remote_ip = remote_ip
        self.local_port = local_port
        self.remote_port = remote_port
        self.channel = channel
        self.owner_engine = channel.owner_engine
        self.remote_engine = None  # informational, learned during setup
        self.state = CONNECTING
        self.error = None
        self.attempts = 0
        self._done = threading.Event()

    @property
    def is_established(self):
        return self.state == ESTABLISHED

    @property
    def is_failed(self):
        return self.state in (FAILED, RESET)

    def wait(self, timeout=None):
        """Block until connection setup finished (threaded mode only)."""
        self._done.wait(timeout)
        return self.state

    def _settle(self, state, error=None, attempts=0):
        self.state = state
        self.error = error
        if attempts:
            self.attempts = attempts
        self._done.set()

    def __repr__(self):
        return ("FlowHandle(%s:%d -> %s:%d, %s)"
                % (self.local_ip, self.local_port, self.remote_ip,
                   self.remote_port, self.state))


@dataclass(slots=True)
class Message:
    flow: FlowHandle
    payload: bytes


class Channel:
    """Bounded bidirectional SPSC message queues between one app thread and
    one engine, with control requests carried out of band."""

    def __init__(self, owner_engine, app_id, capacity=CHANNEL_CAPACITY):
        self.owner_engine = owner_engine
        self.app_id = app_id
        self.capacity = capacity
        self._rx = deque()
        self._tx = deque()
        self._control = deque()
        self._rx_cond = threading.Condition()
        self._tx_cond = threading.Condition()
        self.stats = ChannelStats()
        self.touched_by = set()

    # Application side.

    def send(self, flow, payload, block=True, timeout=None):
        """Queue a message for transmission; blocks while the queue is full."""
        if flow.state == CONNECTING:
            raise FlowError("flow not established yet")
        if flow.state != ESTABLISHED:
            raise FlowError("flow is %s" % flow.state)
        if not 1 <= len(payload) <= 8 * 1024 * 1024:
            raise ValueError("payload must be 1 byte .. 8 MiB")
        with self._tx_cond:
            while len(self._tx) >= self.capacity:
                if not block:
                    return False
                if not self._tx_cond.wait(timeout):
                    return False
            self._tx.append((flow, bytes(payload)))
            self.stats.tx_enqueued += 1
            if len(self._tx) > self.stats.tx_highwater:
                self.stats.tx_highwater = len(self._tx)
        return True

    def recv(self, block=False, timeout=None):
        """Dequeue one whole message, or None if nothing is available.

        Non-blocking calls count an empty poll when they come back empty;
        a blocking call parks until the engine's wakeup signal.
        """
        with self._rx_cond:
            if not self._rx and not block:
                self.stats.empty_polls += 1
                return None
            while not self._rx:
                if not self._rx_cond.wait(timeout):
                    return None  # timeout, distinct from any flow error
            msg = self._rx.popleft()
            self.stats.rx_dequeued += 1
            return msg

    def rx_pending(self):
        return len(self._rx)

    # Engine side.

    def _push_rx(self, msg, engine_id):
        self.touched_by.add(engine_id)
        with self._rx_cond:
            self._rx.append(msg)
            self.stats.rx_enqueued += 1
            if len(self._rx) > self.stats.rx_highwater:
                self.stats.rx_highwater = len(self._rx)
            self.stats.wakeups += 1
            self._rx_cond.notify()

    def _pop_tx(self, max_msgs, engine_id):
        self.touched_by.add(engine_id)
        out = []
        with self._tx_cond:
            while self._tx and len(out) < max_msgs:
                out.append(self._tx.popleft())
                self.stats.tx_dequeued += 1
            if out:
                self._tx_cond.notify()
        return out

    def _push_control(self, request):
        self._control.append(request)

    def _pop_control(self):
        out = list(self._control)
        self._control.clear()
        return out

    def control_pending(self):
        return len(self._control)

    def tx_pending(self):
        return len(self._tx)
