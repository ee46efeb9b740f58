"""Per-sender traffic policing at a forwarding box.

Every victim-bound packet is charged to a per-sender flow entry. A sender's
packet window (set by the victim's allocation policy once per accounting
period) admits packets to the privileged queue; everything past the window
rides best-effort and is dropped outright while loss rates run high. Packets
that are forwarded get a capability trailer; the receiver echoes distinct
capabilities back, and the missing ones are how the box infers downstream
loss it cannot see directly.

Two loss signals gate best-effort traffic:

* per-sender long-term rate, an EWMA over period loss estimates, and
* a box-wide short-term rate measured over batches of 100 distinct
  capabilities (the fraction never returned).

Time is simulated integer milliseconds throughout this module.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Dict, List, Optional, Tuple

from .capability import (
    AesCbcMac,
    CommonCapability,
    DecodeError,
    DistinctCapability,
    common_frame,
    decode,
    distinct_frame,
)
from .policies import AllocationContext, NaturalShare

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3

# decision verdicts / queue names
PRIVILEGED = "privileged"
BEST_EFFORT = "best_effort"
DROPPED = "dropped"
NO_QUEUE = "none"

IDLE_EVICT_PERIODS = 10


def fnv1a64(data) -> int:
    """64-bit FNV-1a over bytes (strings are UTF-8 encoded)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class PolicerParams:
    """Tunables for one policing box; defaults are the reference values."""

    __slots__ = ("d_p_s", "th_cap", "th_rtt_s", "th_slr_drop", "beta",
                 "th_lpass", "s_slr", "d_p_ms", "th_rtt_ms")

    def __init__(self, d_p_s: float = 4.0, th_cap: int = 128,
                 th_rtt_s: float = 1.0, th_slr_drop: float = 0.05,
                 beta: float = 0.8, th_lpass: int = 5, s_slr: int = 100):
        if d_p_s <= 0 or th_rtt_s <= 0:
            raise ValueError("periods must be positive")
        if th_rtt_s >= d_p_s:
            raise ValueError("feedback wait must be shorter than the period")
        if not 0 < th_slr_drop < 1:
            raise ValueError("drop threshold must be in (0, 1)")
        if not 0 <= beta < 1:
            raise ValueError("loss-rate smoothing must be in [0, 1)")
        if th_cap < 1 or th_cap > 128:
            raise ValueError("per-period capability cap must be in [1, 128]")
        if th_lpass < 1 or s_slr < 1:
            raise ValueError("thresholds must be positive")
        self.d_p_s = d_p_s
        self.th_cap = th_cap
        self.th_rtt_s = th_rtt_s
        self.th_slr_drop = th_slr_drop
        self.beta = beta
        self.th_lpass = th_lpass
        self.s_slr = s_slr
        self.d_p_ms = int(round(d_p_s * 1000))
        self.th_rtt_ms = int(round(th_rtt_s * 1000))


class FlowEntry:
    """Accounting state for one sender at one box."""

    __slots__ = ("f", "as_id", "t_a_period", "p_id", "n_r", "n_d", "w_r",
                 "w_v", "l_r", "n_h", "last_seen", "period_index")

    def __init__(self, f: int, as_id: int, now_ms: int):
        self.f = f
        self.as_id = as_id
        self.t_a_period = now_ms   # start of the current accounting period
        self.p_id = 0              # distinct capabilities issued this period
        self.n_r = 0               # packets received this period
        self.n_d = 0               # best-effort packets dropped this period
        self.w_r = 0               # privileged window for this period
        self.w_v = 0               # 128-bit feedback bitmap, bit i = id i+1
        self.l_r = 0.0             # smoothed long-term loss rate
        self.n_h = 0.0             # delivered estimate from last period
        self.last_seen = now_ms
        self.period_index = 0


class CTable:
    """One batch of recently issued distinct capabilities.

    Frames are the hash keys; the value records whether the receiver echoed
    the capability back. When the batch is full the box waits one feedback
    round-trip, then scores the batch: the unreturned fraction is the
    short-term loss rate. A partial batch older than one accounting period
    is scored early so the signal cannot stall.
    """

    __slots__ = ("entries", "t_slr", "t_first", "slr", "cycle_index")

    def __init__(self):
        self.entries: Dict[bytes, bool] = {}
        self.t_slr: Optional[int] = None    # ms when the batch filled
        self.t_first: Optional[int] = None  # ms when the batch started
        self.slr = 0.0
        self.cycle_index = 0

    def unreceived(self) -> int:
        return sum(1 for got in self.entries.values() if not got)

    def reset(self) -> None:
        self.entries.clear()
        self.t_slr = None
        self.t_first = None
        self.cycle_index += 1


class PolicingDecision:
    """Outcome of policing one packet."""

    __slots__ = ("verdict", "queue", "frame")

    def __init__(self, verdict: str, queue: str, frame: Optional[bytes]):
        self.verdict = verdict
        self.queue = queue
        self.frame = frame

    def __repr__(self):
        return f"PolicingDecision({self.verdict}, {self.queue})"


_DROP_DECISION = PolicingDecision(DROPPED, NO_QUEUE, None)


def compute_llr(entry: FlowEntry, params: PolicerParams) -> float:
    """Loss rate of one finished period from the entry's counters.

    Unreturned distinct capabilities sample the downstream loss of everything
    the box forwarded; the box's own best-effort drops are added on top.
    Short periods (fewer packets than the pass threshold) score zero.
    """
    if entry.n_r < params.th_lpass:
        return 0.0
    return (downstream_loss_estimate(entry) + entry.n_d) / entry.n_r


def downstream_loss_estimate(entry: FlowEntry) -> float:
    """Forwarded packets presumed lost after the box, from feedback gaps."""
    p_id = entry.p_id
    if p_id == 0:
        return 0.0
    zero_bits = p_id - (entry.w_v & ((1 << p_id) - 1)).bit_count()
    return (entry.n_r - entry.n_d) * zero_bits / p_id


class Policer:
    """Policing box: per-sender accounting plus two priority FIFO queues.

    The box is driven by the caller's clock (simulated ms). ``handle_packet``
    makes the forwarding decision and stamps a capability frame;
    ``record_feedback`` consumes echoed capabilities; ``dequeue`` drains the
    queues privileged-first. ``on_rollover`` (if set) observes every period
    boundary with the period's closing counters, for metrics.
    """

    def __init__(self, mac: AesCbcMac, ip_mp: int,
                 params: Optional[PolicerParams] = None,
                 policy: Optional[Callable] = None,
                 as_of: Optional[Callable[[int], int]] = None,
                 queue_capacity: Optional[int] = None):
        self.mac = mac
        self.ip_mp = ip_mp
        self.params = params or PolicerParams()
        self.policy = policy or NaturalShare()
        self.as_of = as_of or (lambda f: 0)
        self.itable: Dict[int, FlowEntry] = {}
        self.ctable = CTable()
        self.ctx = AllocationContext()
        self.queue_capacity = queue_capacity
        self.queues = {PRIVILEGED: deque(), BEST_EFFORT: deque()}
        self.queue_drops = {PRIVILEGED: 0, BEST_EFFORT: 0}
        self.feedback_discards: Dict[str, int] = {}
        self.feedback_accepted = 0
        self.slr_samples: List[Tuple[int, int, float]] = []
        self.on_rollover: Optional[Callable] = None
        self._common_cache: Tuple[int, bytes] = (-1, b"")

    # ------------------------------------------------------------- intake

    def handle_packet(self, f: int, now_ms: int) -> PolicingDecision:
        """Police one packet from sender ``f`` arriving at ``now_ms``."""
        ct = self.ctable
        if ct.entries:
            self._ctable_score(ct, now_ms)
        entry = self.itable.get(f)
        if entry is None:
            entry = self._create_entry(f, now_ms)
        elif now_ms - entry.t_a_period > self.params.d_p_ms:
            # the arrival falls past the period end, so it belongs to (and
            # is judged under) the next period's window and loss state
            self._rollover(entry, now_ms)
        entry.last_seen = now_ms
        entry.n_r += 1
        # w_r is the maximum number of privileged packets per period, so
        # the w_r-th arrival itself still rides the privileged queue
        if entry.n_r <= entry.w_r:
            decision = PolicingDecision(PRIVILEGED, PRIVILEGED,
                                        self._stamp(entry, now_ms))
        elif ct.slr < self.params.th_slr_drop and \
                entry.l_r < self.params.th_slr_drop:
            decision = PolicingDecision(BEST_EFFORT, BEST_EFFORT,
                                        self._stamp(entry, now_ms))
        else:
            entry.n_d += 1
            decision = _DROP_DECISION
        return decision

    def handle_burst(self, f: int, t0_ns: int, count: int,
                     spacing_ns: int) -> List[Tuple[int, str, bytes]]:
        """Police ``count`` evenly spaced packets from one sender.

        Packet i arrives at t0_ns + i * spacing_ns. Semantically identical
        to ``count`` sequential handle_packet calls at those times, but
        contiguous dropped stretches are accounted in O(1). Returns the
        accepted packets as (index, queue, capability frame).
        """
        accepted: List[Tuple[int, str, bytes]] = []
        params = self.params
        d_p_ms = params.d_p_ms
        th = params.th_slr_drop
        ct = self.ctable
        entry = self.itable.get(f)
        if entry is None:
            entry = self._create_entry(f, t0_ns // 1_000_000)
        i = 0
        while i < count:
            t_ns = t0_ns + i * spacing_ns
            now_ms = t_ns // 1_000_000
            # fast path: this packet is a guaranteed drop, and so is every
            # packet up to the next state change the drop could not cause
            if entry.n_r + 1 > entry.w_r and \
                    not (ct.slr < th and entry.l_r < th):
                horizon = entry.t_a_period + d_p_ms      # last ms before roll
                if ct.t_first is not None:
                    if ct.t_slr is not None and len(ct.entries) >= params.s_slr:
                        horizon = min(horizon, ct.t_slr + params.th_rtt_ms)
                    else:
                        horizon = min(horizon, ct.t_first + d_p_ms)
                if now_ms <= horizon:
                    # packets i .. i+m-1 all land in or before the horizon ms
                    if spacing_ns:
                        budget_ns = (horizon + 1) * 1_000_000 - 1 - t_ns
                        m = min(budget_ns // spacing_ns + 1, count - i)
                    else:
                        m = count - i
                    entry.n_r += m
                    entry.n_d += m
                    i += m
                    entry.last_seen = (t0_ns + (i - 1) * spacing_ns) // 1_000_000
                    continue
            # slow path: full per-packet semantics
            if ct.entries:
                self._ctable_score(ct, now_ms)
            if now_ms - entry.t_a_period > d_p_ms:
                self._rollover(entry, now_ms)
            entry.last_seen = now_ms
            entry.n_r += 1
            if entry.n_r <= entry.w_r:
                accepted.append((i, PRIVILEGED, self._stamp(entry, now_ms)))
            elif ct.slr < th and entry.l_r < th:
                accepted.append((i, BEST_EFFORT, self._stamp(entry, now_ms)))
            else:
                entry.n_d += 1
            i += 1
        return accepted

    # ------------------------------------------------------------ internals

    def _create_entry(self, f: int, now_ms: int) -> FlowEntry:
        entry = FlowEntry(f, self.as_of(f), now_ms)
        self.itable[f] = entry
        self.ctx.add_sender(f, entry.as_id)
        return entry

    def _stamp(self, entry: FlowEntry, now_ms: int) -> bytes:
        """Issue the capability for one forwarded packet."""
        params = self.params
        if entry.p_id < params.th_cap and \
                now_ms - entry.t_a_period < params.d_p_ms - params.th_rtt_ms:
            entry.p_id += 1
            frame = distinct_frame(self.mac, self.ip_mp, now_ms & 0xFFFFFFFF,
                                   entry.p_id, entry.f, entry.t_a_period & 0xFFFFFFFF)
            ct = self.ctable
            if len(ct.entries) < params.s_slr:
                ct.entries[frame] = False
                if ct.t_first is None:
                    ct.t_first = now_ms
                if len(ct.entries) == params.s_slr:
                    ct.t_slr = now_ms
            return frame
        cached_ms, cached = self._common_cache
        if cached_ms != now_ms:
            cached = common_frame(self.mac, self.ip_mp, now_ms & 0xFFFFFFFF)
            self._common_cache = (now_ms, cached)
        return cached

    def _ctable_score(self, ct: CTable, now_ms: int) -> None:
        """Finish a feedback batch if its waiting time is over."""
        if ct.t_slr is not None and len(ct.entries) >= self.params.s_slr:
            if now_ms > ct.t_slr + self.params.th_rtt_ms:
                ct.slr = ct.unreceived() / self.params.s_slr
                self.slr_samples.append((ct.cycle_index, now_ms, ct.slr))
                ct.reset()
        elif ct.t_first is not None and \
                now_ms - ct.t_first > self.params.d_p_ms:
            # stale partial batch: score what we have so it cannot stall
            ct.slr = ct.unreceived() / len(ct.entries)
            self.slr_samples.append((ct.cycle_index, now_ms, ct.slr))
            ct.reset()

    def _rollover(self, entry: FlowEntry, now_ms: int) -> None:
        """Close the accounting period and set next period's window.

        The period is a unit of time, not of arrivals: when the triggering
        packet comes after several silent periods, the elapsed empty ones
        still count (no arrivals, so their loss sample is zero and the
        moving average decays once per period). Without this, a sender in
        timeout backoff would see its average decay once per probe while
        doubling the probe gap, and could never shed a bad score.
        """
        params = self.params
        n_loss = downstream_loss_estimate(entry)
        recent = 0.0 if entry.n_r < params.th_lpass \
            else (n_loss + entry.n_d) / entry.n_r
        entry.l_r = (1.0 - params.beta) * recent + params.beta * entry.l_r
        new_nh = entry.n_r - entry.n_d - n_loss
        self.ctx.n_total_size += new_nh - entry.n_h
        entry.n_h = new_nh
        w_r_old = entry.w_r
        entry.w_r = self.policy(self.ctx, entry)
        if self.on_rollover is not None:
            self.on_rollover(self, entry, now_ms, w_r_old, recent, n_loss)
        elapsed = (now_ms - entry.t_a_period) // params.d_p_ms
        if elapsed > 1:
            idle = int(elapsed) - 1
            entry.l_r *= params.beta ** idle
            self.ctx.n_total_size -= entry.n_h
            entry.n_h = 0
            entry.w_r = self.policy(self.ctx, entry)
            entry.period_index += idle
        entry.w_v = 0
        entry.p_id = 0
        entry.n_r = 0
        entry.n_d = 0
        entry.t_a_period = now_ms
        entry.period_index += 1

    # ------------------------------------------------------------ feedback

    def record_feedback(self, frame: bytes, now_ms: int) -> bool:
        """Consume one echoed capability frame; True when a bit was set."""
        try:
            cap = decode(frame, self.mac)
        except DecodeError as err:
            reason = "forged" if err.reason == "mac" else "malformed"
            self._discard(reason)
            return False
        if isinstance(cap, CommonCapability):
            self._discard("common")
            return False
        # the batch is box-global: mark it even when the period moved on
        entries = self.ctable.entries
        if frame in entries:
            entries[frame] = True
        entry = self.itable.get(cap.f)
        if entry is None:
            self._discard("unknown_sender")
            return False
        if cap.t_a != (entry.t_a_period & 0xFFFFFFFF):
            self._discard("stale_period")
            return False
        entry.w_v |= 1 << (cap.p_id - 1)
        self.feedback_accepted += 1
        return True

    def record_feedback_ack(self, payload: bytes, now_ms: int) -> int:
        """Parse a packed feedback frame (header byte + 40-byte frames)."""
        if not payload:
            return 0
        n = payload[0] & 0x0F
        done = 0
        for k in range(n):
            frame = payload[1 + 40 * k: 41 + 40 * k]
            if len(frame) < 40:
                self._discard("malformed")
                break
            if self.record_feedback(frame, now_ms):
                done += 1
        return done

    def _discard(self, reason: str) -> None:
        self.feedback_discards[reason] = \
            self.feedback_discards.get(reason, 0) + 1

    # -------------------------------------------------------------- queues

    def enqueue(self, item, queue: str) -> bool:
        """Append to a priority queue; False when the queue is full."""
        q = self.queues[queue]
        if self.queue_capacity is not None and \
                len(q) >= self.queue_capacity:
            self.queue_drops[queue] += 1
            return False
        q.append(item)
        return True

    def dequeue(self):
        """Pop the next packet, strict priority, FIFO within a queue."""
        priv = self.queues[PRIVILEGED]
        if priv:
            return priv.popleft()
        best = self.queues[BEST_EFFORT]
        if best:
            return best.popleft()
        return None

    def dequeue_many(self, budget: int) -> list:
        out = []
        for _ in range(budget):
            item = self.dequeue()
            if item is None:
                break
            out.append(item)
        return out

    def queued(self) -> int:
        return len(self.queues[PRIVILEGED]) + len(self.queues[BEST_EFFORT])

    # --------------------------------------------------------- maintenance

    def evict_idle(self, now_ms: int) -> int:
        """Drop entries idle for more than ten accounting periods."""
        limit = IDLE_EVICT_PERIODS * self.params.d_p_ms
        stale = [f for f, e in self.itable.items()
                 if now_ms - e.last_seen > limit]
        for f in stale:
            entry = self.itable.pop(f)
            self.ctx.remove_sender(f, entry.n_h)
        return len(stale)

    def dump_itable(self) -> str:
        """Tab-separated diagnostic dump, one line per sender."""
        lines = ["f\tt_a\tp_id\tn_r\tn_d\tw_r\tw_v\tl_r\tn_h"]
        for f, e in self.itable.items():
            lines.append(f"{f:016x}\t{e.t_a_period}\t{e.p_id}\t{e.n_r}\t"
                         f"{e.n_d}\t{e.w_r}\t{e.w_v:032x}\t"
                         f"{e.l_r!r}\t{e.n_h!r}")
        return "\n".join(lines) + "\n"
