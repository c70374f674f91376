"""Connection-setup behavior over the simulated fabric."""

from conftest import connect_established, make_pair

from sidenet.channel import ConnectError
from sidenet.handshake import (MODE_NAIVE, MODE_OPTIMIZED,
                               RETRY_TIMEOUT_US)


def engine_stat(stack, name):
    return sum(getattr(e.stats, name) for e in stack.engines)


def test_single_engine_handshake_is_three_packets():
    sim, client, server, cch, sch = make_pair(seed=1, engines=1)
    connect_established(sim, client, cch, mode=MODE_NAIVE)
    assert engine_stat(client, "syns_sent") == 1
    assert engine_stat(server, "synacks_sent") == 1
    assert engine_stat(client, "acks_sent") == 1


def test_naive_spray_is_47_distinct_pairs_at_n4():
    sim, client, server, cch, sch = make_pair(seed=2, engines=4,
                                              server_engine=1,
                                              client_engine=2)
    handle = connect_established(sim, client, cch, mode=MODE_NAIVE)
    assert handle.attempts == 1
    assert engine_stat(client, "syns_sent") == 47
    eng = client.engines[2]
    hs = eng.client_handshakes[("10.0.0.2", 80, handle.local_port)]
    assert len(hs.sprayed) == 47  # deduplicated random UDP pairs


def test_optimized_server_sprays_thirteen_synacks_at_n4():
    # Seed chosen to land the handshake on the first batch.
    sim, client, server, cch, sch = make_pair(seed=4, engines=4,
                                              server_engine=3)
    handle = connect_established(sim, client, cch, mode=MODE_OPTIMIZED)
    assert handle.attempts == 1
    assert engine_stat(client, "syns_sent") == 13
    assert engine_stat(server, "synacks_sent") == 13


def test_wrong_engine_syns_are_ignored_not_answered():
    sim, client, server, cch, sch = make_pair(seed=4, engines=4,
                                              server_engine=0)
    connect_established(sim, client, cch, mode=MODE_NAIVE)
    assert engine_stat(server, "wrong_engine_syns") > 0
    for eng in server.engines:
        if eng.engine_id != 0:
            assert eng.stats.synacks_sent == 0
            assert not eng.flows


def test_duplicate_syn_after_establishment_absorbed():
    sim, client, server, cch, sch = make_pair(seed=5, engines=1)
    handle = connect_established(sim, client, cch, mode=MODE_OPTIMIZED)
    sim.run_for(1000)  # let the server finish its side
    target = server.engines[0]
    key = ("10.0.0.1", handle.local_port, 80)
    flow = target.flows[key]
    before = target.stats.synacks_sent
    dups_before = target.stats.duplicate_syns
    # Replay the accepted SYN (same flow ports, same UDP pair).
    from sidenet import wire

    replay = wire.build_frame(
        "10.0.0.1", "10.0.0.2", flow.rx_udp.src, flow.rx_udp.dst,
        wire.PKT_SYN, handle.local_port, 80,
        payload=wire.pack_syn_payload(1, 0), seq=1, flags=wire.FLAG_OPTIMIZED)
    sim.fabric.send("10.0.0.1", replay)
    sim.run_for(1000)
    assert target.stats.duplicate_syns == dups_before + 1
    assert target.stats.synacks_sent == before  # no new batch


def test_later_synacks_of_batch_discarded():
    sim, client, server, cch, sch = make_pair(seed=6, engines=4,
                                              server_engine=2,
                                              client_engine=1)
    handle = connect_established(sim, client, cch, mode=MODE_OPTIMIZED)
    sim.run_for(1000)
    acks = engine_stat(client, "acks_sent")
    assert acks == 1  # straggler SYN-ACKs from the same batch answered nothing
    assert (engine_stat(client, "synacks_discarded")
            + engine_stat(client, "unknown_synacks")) > 0


def test_retry_doubles_batch_and_caps():
    sim, client, server, cch, sch = make_pair(seed=7, engines=4,
                                              loss_probability=1.0)
    handle = client.connect(cch, "10.0.0.2", 80, mode=MODE_NAIVE)
    ok = sim.run_until(lambda: handle.state != "connecting",
                       max_us=10 * RETRY_TIMEOUT_US)
    assert ok and handle.is_failed
    assert handle.attempts == 8
    assert sim.now >= 8 * RETRY_TIMEOUT_US
    eng = client.engines[0]
    # Handshake was dropped on failure; schedule is visible in total SYNs.
    expected = [47, 94, 188, 376, 752, 1504, 3008, 4096]
    assert engine_stat(client, "syns_sent") == sum(expected)


def test_connect_to_unbound_port_fails_after_eight_retries():
    sim, client, server, cch, sch = make_pair(seed=8, engines=2)
    handle = client.connect(cch, "10.0.0.2", 9999)
    sim.run_until(lambda: handle.is_failed, max_us=10 * RETRY_TIMEOUT_US)
    assert handle.is_failed and handle.attempts == 8
    assert sim.now >= 8 * RETRY_TIMEOUT_US  # 2.4 s of virtual time
    assert engine_stat(server, "stray_syns") > 0


def test_blocking_connect_raises_connect_error(tmp_path):
    sim, client, server, cch, sch = make_pair(seed=9, engines=1,
                                              loss_probability=1.0)

    import threading

    handle_box = {}

    def dial():
        try:
            client.connect(cch, "10.0.0.2", 80, blocking=True, timeout=30)
        except ConnectError as exc:
            handle_box["err"] = exc

    t = threading.Thread(target=dial)
    t.start()
    sim.run_until(lambda: "err" in handle_box, max_us=10 * RETRY_TIMEOUT_US)
    t.join(timeout=5)
    assert handle_box["err"].attempts == 8


def test_affinity_both_directions_steer_to_owning_engines():
    sim, client, server, cch, sch = make_pair(seed=10, engines=4,
                                              server_engine=1,
                                              client_engine=3)
    handles = [connect_established(sim, client, cch) for _ in range(20)]
    sim.run_for(2000)  # let the final ACKs land so the server side settles
    client_eng = client.engines[3]
    for handle in handles:
        key = (handle.remote_ip, handle.remote_port, handle.local_port)
        flow = client_eng.flows[key]
        # The pair we transmit with must steer to the server-side owner...
        tx_frame_queue = sim.fabric.steer("10.0.0.2", _fake_frame(
            "10.0.0.1", "10.0.0.2", flow.tx_udp.src, flow.tx_udp.dst))
        server_owner = _owner_engine(server, ("10.0.0.1", handle.local_port, 80))
        assert tx_frame_queue == server_owner == 1
        # ...and the pair the peer answers with must steer back to ours.
        rx_frame_queue = sim.fabric.steer("10.0.0.1", _fake_frame(
            "10.0.0.2", "10.0.0.1", flow.rx_udp.src, flow.rx_udp.dst))
        assert rx_frame_queue == 3


def _fake_frame(src, dst, sport, dport):
    from sidenet import wire

    return wire.build_frame(src, dst, sport, dport, wire.PKT_DATA, 1, 2)


def _owner_engine(stack, key):
    owners = [e.engine_id for e in stack.engines if key in e.flows]
    assert len(owners) == 1, owners
    return owners[0]


def test_flow_count_unaffected_by_engine_count():
    """Decoupled flow ports: many flows coexist at n=8 between two hosts."""
    sim, client, server, cch, sch = make_pair(seed=11, engines=8,
                                              server_engine=5,
                                              client_engine=2,
                                              base_delay_us=5)
    handles = []
    for _ in range(100):
        handles.append(client.connect(cch, "10.0.0.2", 80))
    ok = sim.run_until(lambda: all(h.state != "connecting" for h in handles),
                       max_us=60_000_000)
    assert ok
    assert all(h.is_established for h in handles)
    ports = {h.local_port for h in handles}
    assert len(ports) == 100


def test_handshake_insensitive_to_hash_byteswap():
    wins = 0
    for seed in range(30):
        sim, client, server, cch, sch = make_pair(seed=seed, engines=4,
                                                  server_engine=seed % 4,
                                                  client_engine=(seed + 1) % 4,
                                                  hash_byteswap=True)
        handle = client.connect(cch, "10.0.0.2", 80)
        sim.run_until(lambda: handle.state != "connecting", max_us=30_000_000)
        wins += handle.is_established
    assert wins == 30


def test_lost_handshake_ack_recovers_via_synack_retry():
    """Drop the first ACK; the server's re-spray must complete the flow."""
    sim, client, server, cch, sch = make_pair(seed=12, engines=1)
    from sidenet import wire

    state = {"dropped": 0}

    def ack_killer(frame):
        pkt = wire.parse_frame(frame)
        if pkt is not None and pkt.pkt_type == wire.PKT_ACK and not state["dropped"]:
            state["dropped"] = 1
            return True
        return False

    sim.fabric._tap = ack_killer
    handle = connect_established(sim, client, cch)
    assert state["dropped"] == 1
    # Client side is up; server side completes after the 300 ms re-spray.
    ok = sim.run_until(lambda: any(server.engines[0].flows.values()),
                       max_us=3 * RETRY_TIMEOUT_US)
    assert ok
    client.send(cch, handle, b"ping")
    ok = sim.run_until(lambda: sch.rx_pending() > 0, max_us=5_000_000)
    assert ok and sch.recv().payload == b"ping"
