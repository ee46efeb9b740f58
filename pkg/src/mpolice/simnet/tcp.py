"""Minimal loss-responsive transport: slow start, AIMD, timeouts.

Deliberately small: additive increase (one segment per window per round
trip), halving on triple duplicate ACKs, retransmission timeouts with
exponential backoff floored at one second. Sequence numbers count
segments, not bytes; cumulative ACKs carry the next expected segment.
That is enough to reproduce back-off-and-recover dynamics without
modeling SACK or delayed ACKs.
"""

from __future__ import annotations

from typing import Callable, Set

from .core import EventLoop, NS_PER_MS

INIT_CWND = 2.0
INIT_SSTHRESH = float(1 << 20)
RTO_MIN_MS = 1000
RTO_MAX_MS = 64000


class FlowReceiver:
    """Reorder buffer for one flow; emits cumulative ACK numbers."""

    __slots__ = ("rcv_next", "_held")

    def __init__(self):
        self.rcv_next = 0
        self._held: Set[int] = set()

    def on_data(self, seq: int) -> int:
        if seq == self.rcv_next:
            self.rcv_next += 1
            held = self._held
            while self.rcv_next in held:
                held.remove(self.rcv_next)
                self.rcv_next += 1
        elif seq > self.rcv_next:
            self._held.add(seq)
        return self.rcv_next


class TcpFlow:
    """Sender half of one long-lived flow with unlimited data to push."""

    __slots__ = ("loop", "order", "send_fn", "cwnd", "ssthresh", "una",
                 "next_seq", "dup", "rto_ms", "max_cwnd", "in_recovery",
                 "recover_seq", "_timer_epoch", "_timer_armed",
                 "sent", "retransmits", "timeouts")

    def __init__(self, loop: EventLoop, order: int,
                 send_fn: Callable[["TcpFlow", int], None],
                 max_cwnd: float = 4096.0):
        self.loop = loop
        self.order = order
        self.send_fn = send_fn
        self.cwnd = INIT_CWND
        self.ssthresh = INIT_SSTHRESH
        self.una = 0
        self.next_seq = 0
        self.dup = 0
        self.rto_ms = RTO_MIN_MS
        self.max_cwnd = max_cwnd
        self.in_recovery = False
        self.recover_seq = 0
        self._timer_epoch = 0
        self._timer_armed = False
        self.sent = 0
        self.retransmits = 0
        self.timeouts = 0

    # --------------------------------------------------------------- sending

    def start(self) -> None:
        self._fill_window()

    def flight(self) -> int:
        return self.next_seq - self.una

    def _fill_window(self) -> None:
        limit = self.una + int(self.cwnd)
        while self.next_seq < limit:
            self.send_fn(self, self.next_seq)
            self.next_seq += 1
            self.sent += 1
        if self.next_seq > self.una:
            self._arm_timer()

    def _retransmit(self, rearm: bool = True) -> None:
        self.send_fn(self, self.una)
        self.retransmits += 1
        if rearm:
            self._rearm_timer()

    # ---------------------------------------------------------------- timers

    def _arm_timer(self) -> None:
        if self._timer_armed:
            return
        self._timer_armed = True
        self._timer_epoch += 1
        self.loop.schedule(self.loop.now_ns + self.rto_ms * NS_PER_MS,
                           self.order, self._on_rto, self._timer_epoch)

    def _rearm_timer(self) -> None:
        self._timer_armed = False
        self._arm_timer()

    def _cancel_timer(self) -> None:
        self._timer_epoch += 1
        self._timer_armed = False

    def _on_rto(self, epoch: int) -> None:
        if epoch != self._timer_epoch or not self._timer_armed:
            return
        self._timer_armed = False
        if self.next_seq == self.una:
            return
        self.timeouts += 1
        self.ssthresh = max(self.flight() / 2.0, 2.0)
        self.cwnd = 1.0
        self.dup = 0
        self.in_recovery = False
        self.rto_ms = min(self.rto_ms * 2, RTO_MAX_MS)
        self._retransmit()
        # go-back-N: everything past the hole is presumed lost; without
        # selective ACKs resending in order is the only way to repair a
        # window full of interleaved holes in bounded time
        self.next_seq = self.una + 1

    # ------------------------------------------------------------------ ACKs

    def on_ack(self, ack: int) -> None:
        if ack > self.una:
            acked = ack - self.una
            self.una = ack
            if self.in_recovery and ack < self.recover_seq:
                # Partial progress: the next hole was lost in the same burst.
                # Deflate by what left the pipe, resend the hole, and leave
                # the timer from the start of recovery running so a long
                # repair crawl degrades into a timeout instead of stalling.
                self.cwnd = max(self.cwnd - acked + 1.0, 1.0)
                self._retransmit(rearm=False)
                self._fill_window()
                return
            self.dup = 0
            self.rto_ms = RTO_MIN_MS
            if self.in_recovery:
                self.in_recovery = False
                self.cwnd = self.ssthresh
            elif self.cwnd < self.ssthresh:
                # byte-counting cap: a big cumulative jump must not blast
                # an equally big burst into the path
                self.cwnd = min(self.cwnd + min(acked, 2.0), self.max_cwnd)
            else:
                self.cwnd = min(self.cwnd + acked / self.cwnd, self.max_cwnd)
            if self.next_seq > self.una:
                self._rearm_timer()
            else:
                self._cancel_timer()
            self._fill_window()
        elif self.next_seq > self.una:
            self.dup += 1
            if self.in_recovery:
                # Window inflation: each further duplicate means one more
                # segment left the network, so new data may flow while the
                # hole is being repaired.
                self.cwnd = min(self.cwnd + 1.0, self.max_cwnd)
                self._fill_window()
            elif self.dup == 3:
                self.in_recovery = True
                self.recover_seq = self.next_seq
                self.ssthresh = max(self.flight() / 2.0, 2.0)
                self.cwnd = self.ssthresh + 3.0
                self._retransmit()
