"""Receiver-chosen bandwidth allocation policies.

A policy converts the accounting state of one sender (its flow entry) plus
shared allocation totals into the sender's packet window for the next
period. Policies run at every period rollover, so they must be O(1)-ish per
call; the context object keeps the expensive sums incrementally.

All policies return a whole number of packets, never negative. Registered
names: ``natural``, ``per_sender``, ``per_as``, ``per_as_per_sender`` (the
last two coincide: an AS budget is split equally among the AS's active
senders). A premium overlay can wrap any of them to grant per-member
reserved windows.
"""

from __future__ import annotations

import math
from typing import Dict, Iterable, List, Optional, Tuple


class AllocationContext:
    """Totals shared by every sender policed at one box.

    n_total_size is the running sum over active senders of their last
    delivered-packet estimate; it is maintained incrementally at rollover
    and eviction. When a coordination group is attached, totals are summed
    across the whole group so every member box allocates from the union.
    """

    def __init__(self):
        self.n_total_size = 0.0
        self.senders: Dict[int, int] = {}      # sender id -> AS id
        self.per_as: Dict[int, int] = {}       # AS id -> active sender count
        self.group: Optional[List["AllocationContext"]] = None

    # -- membership maintenance (called by the policing box) --------------

    def add_sender(self, f: int, as_id: int) -> None:
        if f in self.senders:
            return
        self.senders[f] = as_id
        self.per_as[as_id] = self.per_as.get(as_id, 0) + 1

    def remove_sender(self, f: int, n_h: float) -> None:
        as_id = self.senders.pop(f, None)
        if as_id is None:
            return
        self.n_total_size -= n_h
        left = self.per_as[as_id] - 1
        if left:
            self.per_as[as_id] = left
        else:
            del self.per_as[as_id]

    # -- group-aware views -------------------------------------------------

    def members(self) -> List["AllocationContext"]:
        return self.group if self.group is not None else [self]

    def total_size(self) -> float:
        return sum(c.n_total_size for c in self.members())

    def sender_count(self) -> int:
        return sum(len(c.senders) for c in self.members())

    def as_sender_counts(self) -> Dict[int, int]:
        merged: Dict[int, int] = {}
        for c in self.members():
            for as_id, n in c.per_as.items():
                merged[as_id] = merged.get(as_id, 0) + n
        return merged


def aggregate_share(contexts: Iterable[AllocationContext]) -> AllocationContext:
    """Merge allocation totals from several boxes into one context.

    The merge is plain summation, so a coordinated fair share computed on
    the result equals the share a single box would compute over the union
    of the senders.
    """
    merged = AllocationContext()
    for ctx in contexts:
        merged.n_total_size += ctx.n_total_size
        for f, as_id in ctx.senders.items():
            if f in merged.senders:
                raise ValueError(f"sender {f} present at more than one box")
            merged.senders[f] = as_id
            merged.per_as[as_id] = merged.per_as.get(as_id, 0) + 1
    return merged


class NaturalShare:
    """Window = the sender's own delivered estimate from the last period."""

    name = "natural"

    def __call__(self, ctx: AllocationContext, entry) -> int:
        return max(0, math.floor(entry.n_h))


class PerSenderFairshare:
    """Window = equal split of the delivered total across active senders."""

    name = "per_sender"

    def __call__(self, ctx: AllocationContext, entry) -> int:
        count = ctx.sender_count()
        if count == 0:
            return 0
        return max(0, math.floor(ctx.total_size() / count))


class PerAsFairshare:
    """Equal split across active ASes, then equal split inside the AS."""

    name = "per_as"

    def __call__(self, ctx: AllocationContext, entry) -> int:
        as_counts = ctx.as_sender_counts()
        if not as_counts:
            return 0
        budget = math.floor(max(0.0, ctx.total_size()) / len(as_counts))
        n = as_counts.get(entry.as_id, 0)
        if n == 0:
            return 0
        return budget // n


class _ReducedView:
    """Context proxy with the premium reservations carved out of the pool."""

    def __init__(self, ctx: AllocationContext, reserved: float):
        self._ctx = ctx
        self._reserved = reserved

    def total_size(self) -> float:
        return max(0.0, self._ctx.total_size() - self._reserved)

    def sender_count(self) -> int:
        return self._ctx.sender_count()

    def as_sender_counts(self) -> Dict[int, int]:
        return self._ctx.as_sender_counts()


class PremiumOverlay:
    """Guarantee reserved windows to paying members on top of a base policy.

    Reservations are packets per period, keyed by ("as", as_id) or
    ("sender", f). An AS reservation is split equally among the AS's active
    senders. Members receive max(reservation, base share); everyone's base
    share is computed over the pool minus the reservations of currently
    active members.
    """

    name = "premium"

    def __init__(self, base, reservations: Dict[Tuple[str, int], float]):
        for (kind, _), pkts in reservations.items():
            if kind not in ("as", "sender"):
                raise ValueError(f"unknown premium member kind: {kind}")
            if pkts < 0:
                raise ValueError("premium reservation must be >= 0")
        self.base = base
        self.reservations = dict(reservations)

    def _active_reserved(self, ctx: AllocationContext) -> float:
        as_counts = ctx.as_sender_counts()
        total = 0.0
        for (kind, ident), pkts in self.reservations.items():
            if kind == "as" and as_counts.get(ident, 0) > 0:
                total += pkts
            elif kind == "sender":
                present = any(ident in c.senders for c in ctx.members())
                if present:
                    total += pkts
        return total

    def member_reservation(self, ctx: AllocationContext, entry) -> float:
        """Reserved packets for this sender, 0 when not a member."""
        r = self.reservations.get(("sender", entry.f))
        if r is not None:
            return r
        r = self.reservations.get(("as", entry.as_id))
        if r is not None:
            n = ctx.as_sender_counts().get(entry.as_id, 1)
            return r / max(1, n)
        return 0.0

    def __call__(self, ctx: AllocationContext, entry) -> int:
        reduced = _ReducedView(ctx, self._active_reserved(ctx))
        base = self.base(reduced, entry)
        mine = self.member_reservation(ctx, entry)
        if mine > 0:
            return max(math.floor(mine), base)
        return base


POLICIES = {
    "natural": NaturalShare,
    "per_sender": PerSenderFairshare,
    "per_as": PerAsFairshare,
    "per_as_per_sender": PerAsFairshare,
}


def make_policy(name: str):
    try:
        return POLICIES[name]()
    except KeyError:
        raise ValueError(f"unknown policy: {name!r} "
                         f"(choose from {sorted(POLICIES)})") from None
