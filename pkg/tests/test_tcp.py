import math
import random

from mpolice.simnet.core import EventLoop, Link, SimPacket
from mpolice.simnet.tcp import RTO_MIN_MS, FlowReceiver, TcpFlow

WIRE = 1400


def build_path(loss=0.0, rate=200_000_000, delay_ms=50, buffer_pkts=20_000,
               seed=5):
    """Flow -> lossy data link -> receiver -> clean ack link -> flow."""
    loop = EventLoop()
    recv = FlowReceiver()
    box = {}

    def on_ack(pkt, m, start, tx):
        box["flow"].on_ack(pkt.seq)

    ack_link = Link(loop, 3, "ack", rate, delay_ms * 1_000_000,
                    buffer_pkts, on_ack)

    def on_data(pkt, m, start, tx):
        ack = recv.on_data(pkt.seq)
        ack_link.send(SimPacket("ack", "v", 0, size=40, seq=ack))

    data_link = Link(loop, 2, "data", rate, delay_ms * 1_000_000,
                     buffer_pkts, on_data, loss_rate=loss,
                     rng=random.Random(seed))

    def send_fn(flow, seq):
        data_link.send(SimPacket("data", "s", 1, size=WIRE, seq=seq))

    flow = TcpFlow(loop, 1, send_fn)
    box["flow"] = flow
    return loop, flow, recv, data_link


def test_receiver_cumulative_acks_and_reordering():
    r = FlowReceiver()
    assert r.on_data(0) == 1
    assert r.on_data(2) == 1      # hole at 1 -> duplicate ack
    assert r.on_data(3) == 1
    assert r.on_data(1) == 4      # hole filled, held segments drain
    assert r.on_data(1) == 4      # stale duplicate changes nothing


def test_lossless_path_reaches_link_rate():
    loop, flow, recv, _ = build_path(rate=20_000_000, delay_ms=10)
    flow.start()
    loop.run(20_000_000_000)
    # 20 Mbps, 1400 B packets -> 1785.7 pkt/s ceiling
    delivered_rate = recv.rcv_next / 20.0
    assert delivered_rate >= 0.9 * 20_000_000 / (WIRE * 8)
    assert flow.timeouts == 0
    assert flow.retransmits == 0


def test_cwnd_grows_past_bdp_without_loss():
    loop, flow, recv, _ = build_path(rate=200_000_000, delay_ms=50)
    flow.start()
    loop.run(30_000_000_000)
    bdp_pkts = 200_000_000 * 0.1 / (WIRE * 8)
    assert flow.cwnd >= bdp_pkts


def test_triple_dupack_halves_window():
    loop, flow, recv, link = build_path(rate=200_000_000, delay_ms=50)
    flow.start()
    loop.run(3_000_000_000)
    cwnd_before = flow.cwnd
    # surgically lose the next packet only
    link.loss_rate = 1.0
    link._rng = random.Random(0)
    orig = flow.send_fn

    def lose_one(f, seq):
        orig(f, seq)
        link.loss_rate = 0.0

    flow.send_fn = lose_one
    loop.run(9_000_000_000)
    flow.send_fn = orig
    loop.run(12_000_000_000)
    assert flow.retransmits >= 1
    assert flow.timeouts == 0
    assert flow.cwnd < cwnd_before
    assert flow.cwnd >= cwnd_before / 2 - 1


def test_rto_backoff_doubles_until_progress():
    loop = EventLoop()
    sent_at = []

    def blackhole(flow, seq):
        sent_at.append(loop.now_ns)

    flow = TcpFlow(loop, 0, blackhole)
    flow.start()
    loop.run(16_000_000_000)
    # initial window of 2, then timeout retransmits at 1s, 3s, 7s, 15s
    gaps = [round((b - a) / 1e9) for a, b in zip(sent_at[1:], sent_at[2:])]
    assert gaps == [1, 2, 4, 8]
    assert flow.cwnd == 1.0
    assert flow.rto_ms == RTO_MIN_MS * 16


def test_rto_resets_after_progress():
    loop, flow, recv, link = build_path(rate=200_000_000, delay_ms=10)
    flow.start()
    link.loss_rate = 1.0
    link._rng = random.Random(0)
    loop.run(3_500_000_000)          # a couple of timeouts
    assert flow.rto_ms > RTO_MIN_MS
    link.loss_rate = 0.0
    loop.run(8_000_000_000)
    assert flow.rto_ms == RTO_MIN_MS
    assert recv.rcv_next > 0


def test_steady_loss_tracks_inverse_sqrt_rule():
    # 1% iid loss, 100 ms rtt: rate ~= 1.22 / (rtt * sqrt(p)) packets/s
    loop, flow, recv, _ = build_path(loss=0.01, seed=11)
    flow.start()
    loop.run(60_000_000_000)
    measured = recv.rcv_next / 60.0
    predicted = 1.22 / (0.1 * math.sqrt(0.01))
    assert 0.7 * predicted <= measured <= 1.3 * predicted, \
        f"measured {measured:.1f} pkt/s vs rule {predicted:.1f}"
