"""Event loop, packets, and drop-tail links.

Time is integer nanoseconds throughout. Ties are broken by (node order,
sequence number) so identical runs replay identically regardless of hash
randomization or dict history.

Packets come in two granularities. Interactive traffic (TCP data, ACKs,
feedback) is one event per packet. Constant-rate flood traffic is carried
as trains: one object describing `count` back-to-back packets of equal
size, policed individually upstream but transported with O(1) events per
hop. Links serve train members sequentially and report each member's
completion time analytically, so downstream consumers still see exact
per-packet timing.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Callable, List, Optional, Tuple

from ..bypassfilter import MTU, OUTER_OVERHEAD
from ..capability import FRAME_LEN

MSS = 1360          # payload clamp for policed TCP data
TCP_HEADER = 40
UDP_HEADER = 28

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def ms_of(t_ns: int) -> int:
    return t_ns // NS_PER_MS


def tx_time_ns(size_bytes: int, rate_bps: int) -> int:
    return (size_bytes * 8 * NS_PER_S) // rate_bps


class EventLoop:
    """Single-threaded run-to-completion scheduler."""

    __slots__ = ("now_ns", "_heap", "_seq", "dispatched")

    def __init__(self):
        self.now_ns = 0
        self._heap: List[tuple] = []
        self._seq = 0
        self.dispatched = 0

    def schedule(self, t_ns: int, order: int, fn: Callable, *args) -> None:
        if t_ns < self.now_ns:
            raise ValueError(f"event scheduled in the past: {t_ns} < {self.now_ns}")
        heapq.heappush(self._heap, (t_ns, order, self._seq, fn, args))
        self._seq += 1

    def run(self, until_ns: int) -> None:
        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] <= until_ns:
            t_ns, _, _, fn, args = pop(heap)
            self.now_ns = t_ns
            self.dispatched += 1
            fn(*args)
        self.now_ns = until_ns

    def pending(self) -> int:
        return len(self._heap)


class SimPacket:
    """One packet, or a train of `count` equal-size packets.

    `frames` holds the capability trailer bytes for each member, aligned
    with member index; a single packet uses a one-element list or None.
    `size` is the on-wire size of one member.
    """

    __slots__ = ("kind", "sender", "f", "mbox", "flow", "flow_idx", "seq",
                 "size", "payload", "count", "frames", "ports", "fb", "dest")

    def __init__(self, kind: str, sender: str, f: int, size: int,
                 payload: int = 0, count: int = 1,
                 frames: Optional[List[Optional[bytes]]] = None,
                 mbox: int = -1, flow=None, flow_idx: int = 0, seq: int = 0,
                 ports: Optional[int] = None, fb: Optional[bytes] = None,
                 dest: str = "victim"):
        if size > MTU:
            raise ValueError(f"packet size {size} exceeds MTU {MTU}")
        self.kind = kind
        self.sender = sender
        self.f = f
        self.mbox = mbox
        self.flow = flow
        self.flow_idx = flow_idx
        self.seq = seq
        self.size = size
        self.payload = payload
        self.count = count
        self.frames = frames
        self.ports = ports
        self.fb = fb
        self.dest = dest

    def clip(self, m: int) -> None:
        """Keep the first m members; the tail was dropped somewhere."""
        if m < self.count:
            self.count = m
            if self.frames is not None:
                del self.frames[m:]


class Link:
    """FIFO drop-tail link: finite packet buffer, serialization, propagation.

    The sink is called once per packet/train at the moment the last admitted
    member's bits have arrived at the far end, with the service start time
    and per-member transmission time so member arrivals can be reconstructed
    exactly. Partially admitted trains are clipped in place.
    """

    __slots__ = ("loop", "order", "name", "rate_bps", "delay_ns",
                 "buffer_pkts", "sink", "loss_rate", "_rng",
                 "_done", "busy_until_ns",
                 "injected", "delivered", "dropped", "lost",
                 "injected_bytes", "delivered_bytes")

    def __init__(self, loop: EventLoop, order: int, name: str, rate_bps: int,
                 delay_ns: int, buffer_pkts: int, sink: Callable,
                 loss_rate: float = 0.0, rng=None):
        if rate_bps <= 0 or buffer_pkts <= 0:
            raise ValueError("link capacity and buffer must be positive")
        self.loop = loop
        self.order = order
        self.name = name
        self.rate_bps = rate_bps
        self.delay_ns = delay_ns
        self.buffer_pkts = buffer_pkts
        self.sink = sink
        self.loss_rate = loss_rate
        self._rng = rng
        self._done = deque()    # completion times of buffered packets
        self.busy_until_ns = 0
        self.injected = 0
        self.delivered = 0
        self.dropped = 0
        self.lost = 0
        self.injected_bytes = 0
        self.delivered_bytes = 0

    def occupancy(self, now_ns: int) -> int:
        done = self._done
        while done and done[0] <= now_ns:
            done.popleft()
        return len(done)

    def send(self, pkt: SimPacket) -> int:
        """Returns the number of members admitted (0 = tail-dropped)."""
        now = self.loop.now_ns
        count = pkt.count
        self.injected += count
        self.injected_bytes += count * pkt.size
        free = self.buffer_pkts - self.occupancy(now)
        m = count if count <= free else (free if free > 0 else 0)
        if m < count:
            self.dropped += count - m
            if m == 0:
                return 0
            pkt.clip(m)
        if self.loss_rate and self._rng is not None and \
                self._rng.random() < self.loss_rate:
            # wire loss: the packet occupies the link but never arrives
            self.lost += m
            start = self.busy_until_ns if self.busy_until_ns > now else now
            tx = tx_time_ns(pkt.size, self.rate_bps)
            self._done.append(start + m * tx)
            self.busy_until_ns = start + m * tx
            return m
        start = self.busy_until_ns if self.busy_until_ns > now else now
        tx = tx_time_ns(pkt.size, self.rate_bps)
        end = start + m * tx
        if m == 1:
            self._done.append(end)
        else:
            self._done.extend(range(start + tx, end + 1, tx))
        self.busy_until_ns = end
        self.loop.schedule(end + self.delay_ns, self.order,
                           self._deliver, pkt, m, start, tx)
        return m

    def _deliver(self, pkt: SimPacket, m: int, start_ns: int, tx: int) -> None:
        self.delivered += m
        self.delivered_bytes += m * pkt.size
        self.sink(pkt, m, start_ns, tx)

    def in_flight(self) -> int:
        return self.injected - self.delivered - self.dropped - self.lost

    def stats(self) -> Tuple[str, int, int, int, int]:
        return (self.name, self.injected, self.delivered, self.dropped,
                self.lost)
