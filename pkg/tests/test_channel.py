"""Channel semantics: API ordering, backpressure, blocking wakeups."""

import random
import threading

import pytest

from conftest import PollApp, connect_established, make_pair

from sidenet.channel import CHANNEL_CAPACITY, Channel, FlowError, Message
from sidenet.driver import Sim
from sidenet.fabric import FabricConfig
from sidenet.nic import Nic, NicConfig
from sidenet.stack import Stack, StackError


def test_attach_before_init_is_a_state_error():
    nic = Nic(NicConfig(num_queues=1, local_ip="10.0.0.1"))
    stack = Stack(nic, "10.0.0.1")
    with pytest.raises(StackError):
        stack.attach()
    stack.init()
    assert stack.attach().owner_engine == 0


def test_two_attaches_get_distinct_channels():
    sim = Sim(FabricConfig(rng_seed=1), seed=1)
    stack = sim.add_stack("10.0.0.1", 2)
    a, b = stack.attach(), stack.attach()
    assert a is not b
    assert (a.owner_engine, b.owner_engine) == (0, 1)


def test_duplicate_listen_port_rejected():
    sim, client, server, cch, sch = make_pair(seed=2)
    with pytest.raises(StackError):
        server.listen(sch, 80)


def test_nonblocking_recv_on_empty_counts_a_poll():
    sim = Sim(FabricConfig(rng_seed=3), seed=3)
    stack = sim.add_stack("10.0.0.1", 1)
    ch = stack.attach()
    assert ch.recv() is None
    assert ch.stats.empty_polls == 1


def test_send_requires_established_flow():
    sim, client, server, cch, sch = make_pair(seed=4)
    handle = client.connect(cch, "10.0.0.2", 80)
    with pytest.raises(FlowError):
        cch.send(handle, b"too soon")


def test_echo_round_trip_byte_identical():
    sim, client, server, cch, sch = make_pair(seed=5)
    handle = connect_established(sim, client, cch)

    def echo(sim_):
        msg = sch.recv()
        if msg:
            server.send(sch, msg.flow, msg.payload)
            return 1
        return 0

    sim.add_app(PollApp(echo))
    payload = bytes(random.Random(0).randbytes(3000))
    client.send(cch, handle, payload)
    assert sim.run_until(lambda: cch.rx_pending() > 0, max_us=5_000_000)
    reply = cch.recv()
    assert reply.payload == payload
    assert reply.flow is handle


def test_backpressure_bounds_tx_queue_at_capacity():
    sim, client, server, cch, sch = make_pair(seed=6)
    handle = connect_established(sim, client, cch)
    accepted = 0
    while cch.send(handle, b"m", block=False):
        accepted += 1
        assert cch.tx_pending() <= CHANNEL_CAPACITY
    assert accepted == CHANNEL_CAPACITY
    assert cch.stats.tx_highwater == CHANNEL_CAPACITY
    # A blocking send with a timeout observes fullness, not a drop.
    assert cch.send(handle, b"m", block=True, timeout=0.01) is False


def test_channel_counter_identity_no_loss_no_duplication():
    sim, client, server, cch, sch = make_pair(seed=7)
    handle = connect_established(sim, client, cch)
    got = []

    def sink(sim_):
        msg = sch.recv()
        if msg:
            got.append(msg.payload)
            return 1
        return 0

    sim.add_app(PollApp(sink))
    for i in range(50):
        client.send(cch, handle, b"m%02d" % i)
    assert sim.run_until(lambda: len(got) == 50, max_us=10_000_000)
    assert sch.stats.rx_enqueued == sch.stats.rx_dequeued == 50
    assert got == [b"m%02d" % i for i in range(50)]


def test_hundred_concurrent_connects_mostly_first_batch():
    sim, client, server, cch, sch = make_pair(seed=1, engines=4,
                                              server_engine=1,
                                              client_engine=2)
    handles = [client.connect(cch, "10.0.0.2", 80) for _ in range(100)]
    ok = sim.run_until(lambda: all(h.state != "connecting" for h in handles),
                       max_us=60_000_000)
    assert ok and all(h.is_established for h in handles)
    first_batch = sum(h.attempts == 1 for h in handles)
    assert first_batch >= 93


def test_blocking_recv_times_out_with_none():
    ch = Channel(0, 1)
    assert ch.recv(block=True, timeout=0.01) is None


def test_blocking_recv_never_sleeps_with_data_ready():
    ch = Channel(0, 1)
    ch._push_rx(Message(None, b"ready"), engine_id=0)
    assert ch.recv(block=True, timeout=5).payload == b"ready"


def test_randomized_interleavings_lose_no_wakeups():
    """Producer and consumer race over one channel; every message must be
    observed by exactly one blocking recv, with no deadlock."""
    ch = Channel(0, 1)
    rng = random.Random(99)
    rounds = 400
    got = []

    def consumer():
        while len(got) < rounds:
            msg = ch.recv(block=True, timeout=5)
            assert msg is not None, "lost wakeup: consumer starved"
            got.append(msg.payload)

    t = threading.Thread(target=consumer)
    t.start()
    for i in range(rounds):
        ch._push_rx(Message(None, i.to_bytes(4, "big")), engine_id=0)
        if rng.random() < 0.3:
            threading.Event().wait(rng.random() * 0.0005)
    t.join(timeout=30)
    assert not t.is_alive()
    assert sorted(got) == [i.to_bytes(4, "big") for i in range(rounds)]
    assert ch.stats.rx_enqueued == ch.stats.rx_dequeued == rounds


def test_blocked_receiver_spin_counter_stays_zero():
    ch = Channel(0, 1)
    seen = []

    def consumer():
        for _ in range(20):
            seen.append(ch.recv(block=True, timeout=5))

    t = threading.Thread(target=consumer)
    t.start()
    for i in range(20):
        ch._push_rx(Message(None, b"%d" % i), engine_id=0)
        threading.Event().wait(0.001)
    t.join(timeout=10)
    assert len(seen) == 20 and all(m is not None for m in seen)
    assert ch.stats.empty_polls == 0  # parked, never spinning


def test_polling_receiver_spin_counter_grows():
    ch = Channel(0, 1)
    for _ in range(100):
        assert ch.recv(block=False) is None
    assert ch.stats.empty_polls == 100
