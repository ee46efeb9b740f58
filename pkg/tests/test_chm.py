"""Receiver-gate tests: trailer judgment, feedback packing, bypass alarm."""

import random

import pytest

from mpolice.capability import AesCbcMac, common_frame, distinct_frame, encode, generate_distinct
from mpolice.chm import (
    DELIVER_COMMON,
    DELIVER_DISTINCT,
    INVALID,
    MAX_CAPS_PER_FRAME,
    ReceiverGate,
)
from mpolice.policer import Policer, PolicerParams

KEY = bytes(range(32, 48))
MAC = AesCbcMac(KEY)


def gate(**kw) -> ReceiverGate:
    return ReceiverGate(MAC, **kw)


def distinct(ip_mp=1, ts=0, p_id=1, f=7, t_a=0):
    return distinct_frame(MAC, ip_mp, ts, p_id, f, t_a)


# -------------------------------------------------------------------- ingest

def test_ingest_distinct_delivers_and_queues():
    g = gate()
    payload = b"x" * 100
    got, verdict = g.ingest(payload + distinct(ts=50), now_ms=60)
    assert verdict == DELIVER_DISTINCT and got == payload
    assert g.pending(1) == 1 and g.delivered_distinct == 1


def test_ingest_common_delivers_without_queueing():
    g = gate()
    payload = b"y" * 30
    got, verdict = g.ingest(payload + common_frame(MAC, 1, 50), now_ms=60)
    assert verdict == DELIVER_COMMON and got == payload
    assert g.pending() == 0 and g.delivered_common == 1


def test_ingest_invalid_delivers_nothing():
    g = gate()
    frame = distinct(ts=50)
    corrupted = frame[:-1] + bytes([frame[-1] ^ 1])
    got, verdict = g.ingest(b"z" * 10 + corrupted, now_ms=60)
    assert verdict == INVALID and got is None
    assert g.bypass_total == 1
    # short packet: cannot even hold a trailer
    got, verdict = g.ingest(b"tiny", now_ms=60)
    assert verdict == INVALID and got is None
    assert g.bypass_total == 2
    # missing trailer on the object path
    assert g.ingest_trailer(None, 60) == INVALID
    assert g.bypass_total == 3
    assert g.pending() == 0


def test_ingest_stale_is_invalid():
    g = gate(replay_window_ms=100)
    frame = distinct(ts=0)
    assert g.ingest_trailer(frame, now_ms=100) == DELIVER_DISTINCT
    assert g.ingest_trailer(distinct(ts=0, p_id=2), now_ms=101) == INVALID


# ------------------------------------------------------------------- packing

def greedy_packing_oracle(n, capacity):
    """Frame sizes for n queued echoes under a per-frame capacity."""
    sizes = [capacity] * (n // capacity)
    if n % capacity:
        sizes.append(n % capacity)
    return sizes


def test_flush_matches_greedy_oracle():
    rng = random.Random(11)
    for _ in range(40):
        n = rng.randrange(1, 80)
        capacity = rng.randrange(1, MAX_CAPS_PER_FRAME + 1)
        g = gate()
        for i in range(n):
            g.ingest_trailer(distinct(p_id=(i % 128) + 1, f=i // 128), 0)
        frames = g.flush_feedback(1, 0, ack_capacity=capacity)
        assert [fr[0] & 0x0F for fr in frames] == \
            greedy_packing_oracle(n, capacity)
        assert all(len(fr) == 1 + 40 * (fr[0] & 0x0F) for fr in frames)
        assert g.pending() == 0


def test_flush_example_forty_caps():
    g = gate()
    for i in range(40):
        g.ingest_trailer(distinct(p_id=(i % 128) + 1, f=i // 128), 0)
    counts = [fr[0] & 0x0F for fr in g.flush_feedback(1, 0)]
    assert counts == [15, 15, 10]


def test_header_high_nibble_zero_and_order_preserved():
    g = gate()
    frames_in = [distinct(p_id=i + 1) for i in range(5)]
    for fr in frames_in:
        g.ingest_trailer(fr, 0)
    out = g.flush_feedback(1, 0)
    assert len(out) == 1 and out[0][0] == 5
    assert out[0][0] >> 4 == 0
    assert [out[0][1 + 40 * k: 41 + 40 * k] for k in range(5)] == frames_in


def test_feedback_never_mixes_boxes():
    g = gate()
    for box in (1, 2):
        for i in range(3):
            g.ingest_trailer(distinct(ip_mp=box, p_id=i + 1), 0)
    a = g.flush_feedback(1, 0)
    b = g.flush_feedback(2, 0)
    assert len(a) == 1 and len(b) == 1
    for frame, box in ((a[0], 1), (b[0], 2)):
        for k in range(frame[0]):
            cap = frame[1 + 40 * k: 41 + 40 * k]
            assert int.from_bytes(cap[2:6], "big") == box


def test_each_echo_flushed_exactly_once():
    g = gate()
    frames_in = {distinct(p_id=i + 1, f=i) for i in range(50)}
    for fr in frames_in:
        g.ingest_trailer(fr, 0)
    seen = []
    seen += g.flush_feedback(1, 0, ack_capacity=7)
    seen += g.flush_feedback(1, 0)     # second drain: nothing left
    caps = []
    for frame in seen:
        for k in range(frame[0] & 0x0F):
            caps.append(frame[1 + 40 * k: 41 + 40 * k])
    assert len(caps) == 50 and set(caps) == frames_in


def test_take_for_ack_single_frame():
    g = gate()
    for i in range(20):
        g.ingest_trailer(distinct(p_id=i + 1), 0)
    frame = g.take_for_ack(1, 0)
    assert frame[0] & 0x0F == 15 and g.pending(1) == 5
    assert g.take_for_ack(2, 0) is None
    frame = g.take_for_ack(1, 0, capacity=3)
    assert frame[0] & 0x0F == 3 and g.pending(1) == 2


def test_tick_flushes_only_overdue():
    g = gate(flush_deadline_ms=200)
    g.ingest_trailer(distinct(ip_mp=1, p_id=1, ts=0), now_ms=0)
    g.ingest_trailer(distinct(ip_mp=2, p_id=1, ts=100), now_ms=100)
    assert g.tick(now_ms=150) == []
    out = g.tick(now_ms=200)           # box 1's echo is exactly at deadline
    assert len(out) == 1 and out[0][0] == 1
    assert g.pending(1) == 0 and g.pending(2) == 1
    out = g.tick(now_ms=300)
    assert len(out) == 1 and out[0][0] == 2


def test_ack_capacity_validation():
    with pytest.raises(ValueError):
        gate(ack_capacity=0)
    with pytest.raises(ValueError):
        gate(ack_capacity=16)
    g = gate()
    g.ingest_trailer(distinct(), 0)
    with pytest.raises(ValueError):
        g.flush_feedback(1, 0, ack_capacity=16)


# --------------------------------------------------------------------- alarm

def test_bypass_alarm_sliding_window():
    g = gate()
    for t in range(60):
        g.ingest_trailer(None, t)
    assert not g.bypass_alarm(59, window_ms=100, threshold=60)
    g.ingest_trailer(None, 60)
    assert g.bypass_alarm(60, window_ms=100, threshold=60)
    # events age out of the window
    assert not g.bypass_alarm(160, window_ms=100, threshold=0)
    assert g.bypass_total == 61        # lifetime counter is monotonic
    with pytest.raises(ValueError):
        g.bypass_alarm(0, window_ms=0)


def test_reset_alarm_clears_window_only():
    g = gate()
    for t in range(5):
        g.ingest_trailer(None, t)
    g.reset_alarm()
    assert not g.bypass_alarm(5, window_ms=100, threshold=0)
    assert g.bypass_total == 5


# --------------------------------------------------------------- round trip

def test_feedback_round_trip_sets_window_bits():
    """Box -> receiver -> packed echo -> box: the loop that infers loss."""
    box = Policer(MAC, ip_mp=9, params=PolicerParams())
    g = gate()
    f = 1234
    entry = box._create_entry(f, 0)
    entry.w_r = 40
    trailers = [box.handle_packet(f, i).frame for i in range(30)]
    for i, tr in enumerate(trailers):
        if i % 3 != 0:                 # every third packet lost downstream
            g.ingest_trailer(tr, now_ms=50)
    for frame in g.flush_feedback(9, 60):
        box.record_feedback_ack(frame, 60)
    expected = sum(1 << i for i in range(30) if i % 3 != 0)
    assert entry.w_v == expected
