"""Receiver-side capability handling.

The receiver's gate strips the 40-byte capability trailer from every
arriving packet, authenticates it, and batches the distinct capabilities
for return to the box that issued them. Echoes piggyback on outgoing ACKs
when there are any; capabilities that sit longer than the flush deadline go
out in standalone feedback frames, which is also how traffic from
ACK-less senders is served.

A packed feedback frame is one header byte (capability count in the low
nibble, high nibble zero) followed by count 40-byte capability frames, all
addressed to a single issuing box; frames never mix boxes.

Packets arriving with no trailer, or one that fails authentication or is
stale, deliver nothing and are counted toward the bypass alarm: a burst of
them means somebody is slipping past the upstream filter, and the alarm is
what triggers re-keying.
"""

from __future__ import annotations

from collections import deque
from typing import Deque, Dict, List, Optional, Tuple

from .capability import (
    FRAME_LEN,
    TAG_COMMON,
    TAG_DISTINCT,
    AesCbcMac,
    Verdict,
    verify,
)

MAX_CAPS_PER_FRAME = 15

DELIVER_DISTINCT = "distinct"
DELIVER_COMMON = "common"
INVALID = "invalid"


class ReceiverGate:
    """Trailer verification, feedback batching, and the bypass alarm."""

    def __init__(self, mac: AesCbcMac, replay_window_ms: float = 1000,
                 flush_deadline_ms: int = 200,
                 ack_capacity: int = MAX_CAPS_PER_FRAME):
        if not 1 <= ack_capacity <= MAX_CAPS_PER_FRAME:
            raise ValueError(f"ack capacity must be in [1, {MAX_CAPS_PER_FRAME}]")
        if flush_deadline_ms <= 0:
            raise ValueError("flush deadline must be positive")
        self.mac = mac
        self.replay_window_ms = replay_window_ms
        self.flush_deadline_ms = flush_deadline_ms
        self.ack_capacity = ack_capacity
        # issuing box -> queue of (capability frame, enqueue ms)
        self.buffers: Dict[int, Deque[Tuple[bytes, int]]] = {}
        self.bypass_times: Deque[int] = deque()
        self.bypass_total = 0
        self.delivered_distinct = 0
        self.delivered_common = 0
        self._common_ok = b""       # last MAC-verified common trailer

    # -------------------------------------------------------------- ingest

    def ingest(self, data: bytes, now_ms: int):
        """Strip and judge the trailer of one arriving packet.

        Returns (payload, verdict): payload is the packet minus its trailer
        when the capability verified, else None (nothing is delivered).
        """
        if len(data) < FRAME_LEN:
            self._bypass(now_ms)
            return None, INVALID
        verdict = self.ingest_trailer(data[-FRAME_LEN:], now_ms)
        if verdict == INVALID:
            return None, verdict
        return data[:-FRAME_LEN], verdict

    def ingest_trailer(self, trailer: Optional[bytes], now_ms: int) -> str:
        """Judge a bare 40-byte trailer (None means the packet had none)."""
        if trailer is None:
            self._bypass(now_ms)
            return INVALID
        if trailer == self._common_ok and \
                now_ms - int.from_bytes(trailer[6:10], "big") \
                <= self.replay_window_ms:
            # every common packet stamped in the same ms carries the same
            # trailer bytes, so one MAC check vouches for the whole run
            self.delivered_common += 1
            return DELIVER_COMMON
        if verify(self.mac, trailer, now_ms,
                  self.replay_window_ms) is not Verdict.VALID:
            self._bypass(now_ms)
            return INVALID
        if trailer[1] == TAG_COMMON:
            self._common_ok = trailer
        if trailer[1] == TAG_DISTINCT:
            ip_mp = int.from_bytes(trailer[2:6], "big")
            queue = self.buffers.get(ip_mp)
            if queue is None:
                queue = self.buffers[ip_mp] = deque()
            queue.append((trailer, now_ms))
            self.delivered_distinct += 1
            return DELIVER_DISTINCT
        self.delivered_common += 1
        return DELIVER_COMMON

    def _bypass(self, now_ms: int) -> None:
        self.bypass_total += 1
        self.bypass_times.append(now_ms)

    # ------------------------------------------------------------ feedback

    def _pack(self, queue: Deque[Tuple[bytes, int]], capacity: int) -> bytes:
        n = min(capacity, len(queue))
        parts = [bytes([n])]
        for _ in range(n):
            parts.append(queue.popleft()[0])
        return b"".join(parts)

    def take_for_ack(self, ip_mp: int, now_ms: int,
                     capacity: Optional[int] = None) -> Optional[bytes]:
        """One frame's worth of echoes to ride an ACK headed to this box."""
        queue = self.buffers.get(ip_mp)
        if not queue:
            return None
        return self._pack(queue, capacity or self.ack_capacity)

    def flush_feedback(self, ip_mp: int, now_ms: int,
                       ack_capacity: Optional[int] = None) -> List[bytes]:
        """Drain everything queued for one box into greedy full frames."""
        capacity = ack_capacity or self.ack_capacity
        if not 1 <= capacity <= MAX_CAPS_PER_FRAME:
            raise ValueError(f"ack capacity must be in [1, {MAX_CAPS_PER_FRAME}]")
        queue = self.buffers.get(ip_mp)
        frames = []
        while queue:
            frames.append(self._pack(queue, capacity))
        return frames

    def tick(self, now_ms: int) -> List[Tuple[int, bytes]]:
        """Standalone flushes for boxes whose oldest echo is overdue."""
        out: List[Tuple[int, bytes]] = []
        for ip_mp, queue in self.buffers.items():
            if queue and now_ms - queue[0][1] >= self.flush_deadline_ms:
                for frame in self.flush_feedback(ip_mp, now_ms):
                    out.append((ip_mp, frame))
        return out

    def pending(self, ip_mp: Optional[int] = None) -> int:
        if ip_mp is not None:
            return len(self.buffers.get(ip_mp, ()))
        return sum(len(q) for q in self.buffers.values())

    # --------------------------------------------------------------- alarm

    def bypass_alarm(self, now_ms: int, window_ms: int = 1000,
                     threshold: int = 50) -> bool:
        """True when invalid arrivals within the window exceed the threshold."""
        if window_ms <= 0 or threshold < 0:
            raise ValueError("alarm window and threshold must be positive")
        times = self.bypass_times
        while times and times[0] <= now_ms - window_ms:
            times.popleft()
        return len(times) > threshold

    def reset_alarm(self) -> None:
        self.bypass_times.clear()
