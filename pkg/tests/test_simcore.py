import random

import pytest

from mpolice.simnet.core import EventLoop, Link, SimPacket, tx_time_ns


def test_tx_time_exact():
    # 1000 bytes at 8 Mbps is exactly 1 ms
    assert tx_time_ns(1000, 8_000_000) == 1_000_000


def test_loop_orders_by_time_then_node_then_seq():
    loop = EventLoop()
    out = []
    loop.schedule(50, 2, out.append, "t50.n2")
    loop.schedule(50, 1, out.append, "t50.n1.a")
    loop.schedule(50, 1, out.append, "t50.n1.b")
    loop.schedule(10, 9, out.append, "t10")
    loop.run(100)
    assert out == ["t10", "t50.n1.a", "t50.n1.b", "t50.n2"]
    assert loop.now_ns == 100


def test_loop_rejects_past_events():
    loop = EventLoop()
    loop.schedule(5, 0, lambda: None)
    loop.run(10)
    with pytest.raises(ValueError):
        loop.schedule(9, 0, lambda: None)


def test_loop_stops_at_horizon():
    loop = EventLoop()
    out = []
    loop.schedule(5, 0, out.append, 1)
    loop.schedule(15, 0, out.append, 2)
    loop.run(10)
    assert out == [1]
    assert loop.pending() == 1


def _catcher(log):
    def sink(pkt, m, start_ns, tx):
        log.append((pkt, m, start_ns, tx))
    return sink


def test_link_serializes_and_delays():
    loop = EventLoop()
    got = []
    link = Link(loop, 0, "l", 8_000_000, 5_000_000, 100, _catcher(got))
    link.send(SimPacket("data", "s", 1, size=1000))
    link.send(SimPacket("data", "s", 1, size=1000))
    loop.run(10_000_000)
    # tx is 1 ms each; second packet waits for the first
    assert [(m, start) for _, m, start, _ in got] == [(1, 0), (1, 1_000_000)]
    assert loop.dispatched == 2


def test_link_drop_tail():
    loop = EventLoop()
    got = []
    link = Link(loop, 0, "l", 8_000_000, 0, 3, _catcher(got))
    admitted = [link.send(SimPacket("data", "s", 1, size=1000))
                for _ in range(5)]
    assert admitted == [1, 1, 1, 0, 0]
    assert link.dropped == 2
    loop.run(10_000_000)
    assert link.delivered == 3
    assert link.in_flight() == 0


def test_link_frees_slots_as_packets_complete():
    loop = EventLoop()
    link = Link(loop, 0, "l", 8_000_000, 0, 1, lambda *a: None)
    assert link.send(SimPacket("data", "s", 1, size=1000)) == 1
    assert link.send(SimPacket("data", "s", 1, size=1000)) == 0
    loop.run(1_000_000)   # first tx complete
    assert link.send(SimPacket("data", "s", 1, size=1000)) == 1


def test_train_partial_admission_clips_frames():
    loop = EventLoop()
    got = []
    link = Link(loop, 0, "l", 8_000_000, 2_000_000, 6, _catcher(got))
    frames = [bytes([i]) for i in range(10)]
    train = SimPacket("data", "s", 1, size=1000, count=10, frames=frames)
    assert link.send(train) == 6
    assert train.count == 6
    assert train.frames == [bytes([i]) for i in range(6)]
    assert link.dropped == 4
    loop.run(50_000_000)
    (pkt, m, start, tx) = got[0]
    assert (m, start, tx) == (6, 0, 1_000_000)
    # member j's bits arrive at start + (j+1)*tx + delay
    assert start + 6 * tx + 2_000_000 == 8_000_000


def test_train_members_occupy_individual_slots():
    loop = EventLoop()
    link = Link(loop, 0, "l", 8_000_000, 0, 10, lambda *a: None)
    assert link.send(SimPacket("data", "s", 1, size=1000, count=7)) == 7
    assert link.occupancy(loop.now_ns) == 7
    assert link.send(SimPacket("data", "s", 1, size=1000, count=7)) == 3
    loop.run(4_500_000)   # 4 tx slots elapsed
    assert link.occupancy(loop.now_ns) == 6


def test_wire_loss_consumes_capacity_but_never_arrives():
    loop = EventLoop()
    got = []
    link = Link(loop, 0, "l", 8_000_000, 0, 100, _catcher(got),
                loss_rate=1.0, rng=random.Random(1))
    link.send(SimPacket("data", "s", 1, size=1000))
    loop.run(10_000_000)
    assert got == []
    assert link.lost == 1
    assert link.in_flight() == 0


def test_conservation_under_random_load():
    loop = EventLoop()
    delivered_members = []
    link = Link(loop, 0, "l", 20_000_000, 1_000_000, 40,
                lambda pkt, m, s, tx: delivered_members.append(m),
                loss_rate=0.1, rng=random.Random(3))
    rng = random.Random(7)
    t = 0
    for _ in range(400):
        t += rng.randrange(0, 400_000)
        loop.run(t)
        count = rng.choice([1, 1, 1, 5, 17])
        link.send(SimPacket("data", "s", 1, size=rng.randrange(64, 1500),
                            count=count))
    loop.run(t + 1_000_000_000)
    assert link.injected == link.delivered + link.dropped + link.lost
    assert link.in_flight() == 0
    assert sum(delivered_members) == link.delivered


def test_packet_rejects_oversize():
    with pytest.raises(ValueError):
        SimPacket("data", "s", 1, size=1501)
