"""Randomized port-spraying connection setup.

The NIC hashes each packet's UDP four-tuple to an RX queue with a key the
stack cannot read, so no port can be *chosen* to reach a wanted engine.
Instead, connection setup sprays SYNs over random UDP port pairs until, by
chance, one lands on the right queue at each end. Flow identity lives in
two dedicated 16-bit header ports, decoupled from the UDP ports, so each
direction is free to settle on whatever UDP pair happened to hash well.

Two spray strategies are provided:

* naive: the server answers every correctly-landed SYN with one SYN-ACK on
  the reversed UDP pair, so a single packet succeeds with probability
  1/(n*n) and the 95% batch is log(1-0.95)/log(1-1/n^2) packets.
* optimized: the server answers the first correctly-landed SYN with its own
  spray of fresh random pairs, decoupling the two directions; each side
  needs only log(1-sqrt(0.95))/log(1-1/n) packets.

Whichever pairs win are exchanged in the SYN-ACK and ACK payloads and used
for every subsequent packet of the flow, pinning it to one engine per side.
"""

import math
from dataclasses import dataclass

from . import wire
from .channel import FAILED

MODE_NAIVE = "naive"
MODE_OPTIMIZED = "optimized"

DEFAULT_TARGET_P = 0.95
RETRY_TIMEOUT_US = 300_000
MAX_ATTEMPTS = 8
BATCH_CAP = 4096
EPHEMERAL_LO = 32768
EPHEMERAL_HI = 60999

HS_SYN_SENT = "syn_sent"
HS_SYNACK_SENT = "synack_sent"
HS_ESTABLISHED = "established"
HS_FAILED = "failed"


@dataclass(frozen=True, slots=True)
class FlowPorts:
    """The flow's end-to-end identity; constant for the connection's life."""

    local: int
    remote: int


@dataclass(frozen=True, slots=True)
class UdpPorts:
    """One direction's UDP (src, dst) pair, as chosen by its sender."""

    src: int
    dst: int


def _check_args(n, p):
    if n < 1:
        raise ValueError("engine count must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("target probability must be in (0, 1)")


def naive_batch_size(n, p=DEFAULT_TARGET_P):
    """SYN count so that SYN and reflected SYN-ACK both land correctly with
    probability >= p when both hosts run n engines."""
    _check_args(n, p)
    if n == 1:
        return 1
    return math.ceil(math.log(1.0 - p) / math.log(1.0 - 1.0 / (n * n)))


def optimized_batch_exact(n, p=DEFAULT_TARGET_P):
    """Unrounded per-side spray size for the reduced scheme (1.0 when n=1)."""
    _check_args(n, p)
    if n == 1:
        return 1.0
    return math.log(1.0 - math.sqrt(p)) / math.log(1.0 - 1.0 / n)


def optimized_batch_size(n, p=DEFAULT_TARGET_P):
    """Per-side spray count (ceiling) for the reduced scheme."""
    return math.ceil(optimized_batch_exact(n, p))


def optimized_batch_total(n, p=DEFAULT_TARGET_P):
    """Both directions combined, floor(2x) of the unrounded per-side value.
    n=1 needs no spraying at all, so the total is a single packet."""
    if n == 1:
        _check_args(n, p)
        return 1
    return math.floor(2.0 * optimized_batch_exact(n, p))


def _spray_count(mode, n_remote, n_local, p):
    """SYN batch for one connection attempt against possibly asymmetric hosts."""
    if mode == MODE_OPTIMIZED:
        return optimized_batch_size(n_remote, p)
    joint = n_remote * n_local
    if joint == 1:
        return 1
    return math.ceil(math.log(1.0 - p) / math.log(1.0 - 1.0 / joint))


def draw_udp_pairs(rng, count, used):
    """Fresh random ephemeral-range UDP pairs, disjoint from `used`."""
    pairs = []
    while len(pairs) < count:
        pair = UdpPorts(rng.randint(EPHEMERAL_LO, EPHEMERAL_HI),
                        rng.randint(EPHEMERAL_LO, EPHEMERAL_HI))
        if pair in used:
            continue
        used.add(pair)
        pairs.append(pair)
    return pairs


class ClientHandshake:
    """Connect-side state machine; lives on the engine that must own the flow."""

    def __init__(self, handle, flow_ports, remote_ip, mode, p,
                 local_engines, remote_engines):
        self.handle = handle
        self.ports = flow_ports
        self.remote_ip = remote_ip
        self.mode = mode
        self.p = p
        self.local_engines = local_engines
        self.remote_engines = remote_engines
        self.phase = HS_SYN_SENT
        self.attempt = 1
        self.batch_size = 0
        self.batch_log = []
        self.sprayed = set()
        self.retry_timer = None
        self.established_attempt = 0
        self.started_at = None
        self._winning_synack = None

    def key(self):
        return (self.remote_ip, self.ports.remote, self.ports.local)

    def start(self, eng, now):
        self.started_at = now
        self.batch_size = _spray_count(self.mode, self.remote_engines,
                                       self.local_engines, self.p)
        self._spray(eng, now)

    def _spray(self, eng, now):
        self.batch_log.append(self.batch_size)
        flags = wire.FLAG_OPTIMIZED if self.mode == MODE_OPTIMIZED else 0
        payload = wire.pack_syn_payload(self.local_engines, eng.engine_id)
        for pair in draw_udp_pairs(eng.rng, self.batch_size, self.sprayed):
            eng.emit(wire.build_frame(
                eng.local_ip, self.remote_ip, pair.src, pair.dst,
                wire.PKT_SYN, self.ports.local, self.ports.remote,
                payload=payload, seq=self.attempt, flags=flags))
            eng.stats.syns_sent += 1
        self.retry_timer = eng.arm_timer(now + RETRY_TIMEOUT_US,
                                         lambda t: self.on_timeout(eng, t))

    def on_timeout(self, eng, now):
        if self.phase != HS_SYN_SENT:
            return
        if self.attempt >= MAX_ATTEMPTS:
            self.phase = HS_FAILED
            eng.stats.handshake_failures += 1
            eng.drop_client_handshake(self)
            self.handle._settle(FAILED, "no port pair reached the target "
                                "engines after %d attempts" % self.attempt,
                                attempts=self.attempt)
            return
        self.attempt += 1
        self.batch_size = min(self.batch_size * 2, BATCH_CAP)
        eng.stats.handshake_retries += 1
        self._spray(eng, now)

    def on_synack(self, eng, now, pkt):
        """First SYN-ACK that steered here wins; everything else is noise."""
        if self.phase == HS_ESTABLISHED:
            # A retry SYN-ACK means our ACK was lost; re-send it. Leftovers
            # of the batch we already answered are silently discarded.
            if pkt.seq >= 2:
                self._emit_ack(eng, self._winning_synack)
            else:
                eng.stats.synacks_discarded += 1
            return
        if self.phase != HS_SYN_SENT:
            eng.stats.synacks_discarded += 1
            return
        accepted = wire.unpack_synack_payload(pkt.payload)
        if accepted is None:
            eng.stats.synacks_discarded += 1
            return
        tx_src, tx_dst, remote_engine = accepted
        self.phase = HS_ESTABLISHED
        self.established_attempt = self.attempt
        if self.retry_timer is not None:
            self.retry_timer.cancel()
        self._winning_synack = pkt
        tx_udp = UdpPorts(tx_src, tx_dst)
        rx_udp = UdpPorts(pkt.udp_src, pkt.udp_dst)
        eng.stats.handshakes_established += 1
        eng.establish_client_flow(self, tx_udp, rx_udp, remote_engine)
        self._emit_ack(eng, pkt)

    def _emit_ack(self, eng, synack_pkt):
        payload = wire.pack_ack_payload(synack_pkt.udp_src, synack_pkt.udp_dst)
        flow = eng.flows[self.key()]
        eng.emit(wire.build_frame(
            eng.local_ip, self.remote_ip, flow.tx_udp.src, flow.tx_udp.dst,
            wire.PKT_ACK, self.ports.local, self.ports.remote,
            payload=payload, seq=self.attempt))
        eng.stats.acks_sent += 1


class ServerHandshake:
    """Accept-side state machine; exists only on the listener's target engine."""

    def __init__(self, listener, remote_ip, flow_ports, mode, client_engines,
                 client_engine_id, p):
        self.listener = listener
        self.remote_ip = remote_ip
        self.ports = flow_ports  # local = listener port
        self.mode = mode
        self.client_engines = client_engines
        self.client_engine_id = client_engine_id
        self.p = p
        self.phase = HS_SYNACK_SENT
        self.attempts = 0
        self.accepted_pair = None  # client's UDP pair, as the client sent it
        self.replied_pairs = set()
        self.sprayed = set()
        self.last_client_attempt = 0
        self.retry_timer = None
        self.last_activity = 0

    def key(self):
        return (self.remote_ip, self.ports.remote, self.ports.local)

    def on_syn(self, eng, now, pkt):
        self.last_activity = now
        pair = UdpPorts(pkt.udp_src, pkt.udp_dst)
        if self.mode == MODE_NAIVE:
            # Reply to every correctly-landed SYN: the chance that any one
            # reversed pair reaches the client's engine is what the batch
            # size was computed for.
            if pair in self.replied_pairs:
                eng.stats.duplicate_syns += 1
                return
            self.replied_pairs.add(pair)
            self.accepted_pair = pair
            self.last_client_attempt = max(self.last_client_attempt, pkt.seq)
            self._emit_synack(eng, UdpPorts(pair.dst, pair.src), pair)
            self._ensure_timer(eng, now)
            return
        if pkt.seq <= self.last_client_attempt:
            eng.stats.duplicate_syns += 1
            return
        # First SYN of a (re)try that landed correctly: answer with a fresh
        # spray sized for the client's engine count, carried in the SYN.
        self.last_client_attempt = pkt.seq
        self.accepted_pair = pair
        self._spray_synacks(eng, now)

    def _spray_synacks(self, eng, now):
        self.attempts += 1
        count = optimized_batch_size(self.client_engines, self.p)
        for out_pair in draw_udp_pairs(eng.rng, count, self.sprayed):
            self._emit_synack(eng, out_pair, self.accepted_pair)
        self._ensure_timer(eng, now, restart=True)

    def _emit_synack(self, eng, out_pair, accepted_pair):
        payload = wire.pack_synack_payload(accepted_pair.src, accepted_pair.dst,
                                           eng.engine_id)
        eng.emit(wire.build_frame(
            eng.local_ip, self.remote_ip, out_pair.src, out_pair.dst,
            wire.PKT_SYNACK, self.ports.local, self.ports.remote,
            payload=payload, seq=max(1, self.attempts)))
        eng.stats.synacks_sent += 1

    def _ensure_timer(self, eng, now, restart=False):
        if self.retry_timer is not None:
            if not restart:
                return
            self.retry_timer.cancel()
        if self.attempts == 0:
            self.attempts = 1
        self.retry_timer = eng.arm_timer(now + RETRY_TIMEOUT_US,
                                         lambda t: self.on_timeout(eng, t))

    def on_timeout(self, eng, now):
        """The final ACK never arrived: re-spray so a half-open peer recovers."""
        if self.phase != HS_SYNACK_SENT:
            return
        if self.attempts >= MAX_ATTEMPTS or self.accepted_pair is None:
            eng.drop_server_handshake(self)
            return
        if self.mode == MODE_NAIVE:
            self.attempts += 1
            self._emit_synack(eng, UdpPorts(self.accepted_pair.dst,
                                            self.accepted_pair.src),
                              self.accepted_pair)
            self.retry_timer = eng.arm_timer(now + RETRY_TIMEOUT_US,
                                             lambda t: self.on_timeout(eng, t))
        else:
            self._spray_synacks(eng, now)

    def on_ack(self, eng, now, pkt):
        if self.phase != HS_SYNACK_SENT:
            return
        chosen = wire.unpack_ack_payload(pkt.payload)
        if chosen is None:
            return
        self.phase = HS_ESTABLISHED
        if self.retry_timer is not None:
            self.retry_timer.cancel()
        # Our TX direction uses the SYN-ACK pair the client confirmed; the
        # client's TX direction is whatever pair its ACK just arrived on.
        tx_udp = UdpPorts(chosen[0], chosen[1])
        rx_udp = UdpPorts(pkt.udp_src, pkt.udp_dst)
        eng.stats.handshakes_established += 1
        eng.establish_server_flow(self, tx_udp, rx_udp)
