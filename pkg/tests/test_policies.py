"""Allocation policy tests: shares, overlays, and context merging."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpolice.policer import FlowEntry
from mpolice.policies import (
    AllocationContext,
    NaturalShare,
    PerAsFairshare,
    PerSenderFairshare,
    PremiumOverlay,
    aggregate_share,
    make_policy,
)


def entry(f=1, as_id=0, n_h=0.0):
    e = FlowEntry(f, as_id, 0)
    e.n_h = n_h
    return e


def ctx_with(senders):
    """senders: iterable of (f, as_id, n_h)."""
    ctx = AllocationContext()
    for f, as_id, n_h in senders:
        ctx.add_sender(f, as_id)
        ctx.n_total_size += n_h
    return ctx


# ----------------------------------------------------------------- natural

def test_natural_share_floors_own_estimate():
    pol = NaturalShare()
    ctx = AllocationContext()
    assert pol(ctx, entry(n_h=37.9)) == 37
    assert pol(ctx, entry(n_h=0.4)) == 0
    assert pol(ctx, entry(n_h=-3.0)) == 0   # never negative


# -------------------------------------------------------------- per sender

def test_per_sender_fairshare_even_split():
    ctx = ctx_with([(1, 0, 100.0), (2, 0, 50.0), (3, 1, 10.0)])
    pol = PerSenderFairshare()
    assert pol(ctx, entry(1)) == 160 // 3
    assert pol(ctx, entry(2)) == 160 // 3   # same share for everyone


def test_per_sender_fairshare_empty_and_negative():
    pol = PerSenderFairshare()
    assert pol(AllocationContext(), entry(1)) == 0
    ctx = ctx_with([(1, 0, -5.0)])
    assert pol(ctx, entry(1)) == 0


def test_per_sender_incremental_bookkeeping_matches_recompute():
    # the running total must equal a from-scratch sum at all times
    rng = random.Random(5)
    ctx = AllocationContext()
    truth = {}
    for step in range(300):
        op = rng.random()
        if op < 0.5 or not truth:
            f = rng.randrange(20)
            if f not in truth:
                ctx.add_sender(f, f % 3)
                truth[f] = 0.0
            new = rng.uniform(0, 50)
            ctx.n_total_size += new - truth[f]
            truth[f] = new
        else:
            f = rng.choice(list(truth))
            ctx.remove_sender(f, truth.pop(f))
        assert ctx.n_total_size == pytest.approx(sum(truth.values()))
        assert ctx.sender_count() == len(truth)


# ------------------------------------------------------------------ per AS

def two_level_split_oracle(total, as_counts, as_id):
    """Brute-force: equal AS budgets, then equal split inside the AS."""
    budget = math.floor(max(0.0, total) / len(as_counts))
    return budget // as_counts[as_id]


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.integers(0, 6), st.integers(1, 9),
                       min_size=1, max_size=6),
       st.floats(0, 1e6, allow_nan=False))
def test_per_as_fairshare_matches_two_level_oracle(as_counts, total):
    ctx = AllocationContext()
    f = 0
    firsts = {}
    for as_id, n in as_counts.items():
        for _ in range(n):
            ctx.add_sender(f, as_id)
            firsts.setdefault(as_id, f)
            f += 1
    ctx.n_total_size = total
    pol = PerAsFairshare()
    for as_id in as_counts:
        got = pol(ctx, entry(firsts[as_id], as_id))
        assert got == two_level_split_oracle(total, as_counts, as_id)


def test_per_as_names_coincide():
    assert type(make_policy("per_as")) is type(make_policy("per_as_per_sender"))
    with pytest.raises(ValueError):
        make_policy("weighted")


def test_per_as_unknown_as_gets_zero():
    ctx = ctx_with([(1, 0, 100.0)])
    assert PerAsFairshare()(ctx, entry(9, as_id=5)) == 0


# ----------------------------------------------------------------- premium

def test_premium_member_gets_reservation_when_base_is_smaller():
    ctx = ctx_with([(i, 0, 10.0) for i in range(9)] + [(9, 1, 10.0)])
    pol = PremiumOverlay(PerSenderFairshare(), {("as", 1): 50.0})
    # pool after the carve-out: 100 - 50 = 50 over 10 senders -> base 5
    assert pol(ctx, entry(1, 0)) == 5
    assert pol(ctx, entry(9, 1)) == 50


def test_premium_member_keeps_base_when_larger():
    ctx = ctx_with([(1, 0, 100.0), (2, 1, 100.0)])
    pol = PremiumOverlay(PerSenderFairshare(), {("as", 1): 10.0})
    # reduced pool 190 over 2 -> base 95 beats the 10-packet reservation
    assert pol(ctx, entry(2, 1)) == 95


def test_premium_as_reservation_split_among_senders():
    ctx = ctx_with([(1, 1, 0.0), (2, 1, 0.0), (3, 0, 100.0)])
    pol = PremiumOverlay(PerSenderFairshare(), {("as", 1): 60.0})
    assert pol(ctx, entry(1, 1)) == 30
    assert pol(ctx, entry(2, 1)) == 30


def test_premium_sender_reservation_and_inactive_member():
    ctx = ctx_with([(1, 0, 30.0), (2, 0, 30.0)])
    pol = PremiumOverlay(PerSenderFairshare(),
                         {("sender", 1): 40.0, ("sender", 99): 500.0})
    # sender 99 is absent: its reservation must not shrink the pool
    assert pol(ctx, entry(1, 0)) == 40
    assert pol(ctx, entry(2, 0)) == (60 - 40) // 2


def test_premium_validation():
    with pytest.raises(ValueError):
        PremiumOverlay(NaturalShare(), {("tier", 1): 5.0})
    with pytest.raises(ValueError):
        PremiumOverlay(NaturalShare(), {("as", 1): -5.0})


# ------------------------------------------------------------ coordination

def test_aggregate_share_sums_and_rejects_duplicates():
    a = ctx_with([(1, 0, 10.0), (2, 1, 20.0)])
    b = ctx_with([(3, 1, 5.0)])
    merged = aggregate_share([a, b])
    assert merged.n_total_size == pytest.approx(35.0)
    assert merged.sender_count() == 3
    assert merged.as_sender_counts() == {0: 1, 1: 2}
    with pytest.raises(ValueError):
        aggregate_share([a, a])


def test_group_share_equals_single_box_over_union():
    # merge transparency: a grouped fair share matches one box holding all
    boxes = [ctx_with([(1, 0, 30.0), (2, 0, 6.0)]),
             ctx_with([(3, 1, 12.0)]),
             ctx_with([(4, 2, 0.0), (5, 2, 24.0)])]
    group = list(boxes)
    for b in boxes:
        b.group = group
    merged = aggregate_share([ctx_with([(1, 0, 30.0), (2, 0, 6.0)]),
                              ctx_with([(3, 1, 12.0)]),
                              ctx_with([(4, 2, 0.0), (5, 2, 24.0)])])
    pol = PerSenderFairshare()
    for b in boxes:
        assert pol(b, entry(1)) == pol(merged, entry(1))
    pol_as = PerAsFairshare()
    assert pol_as(boxes[0], entry(1, 0)) == pol_as(merged, entry(1, 0))
    assert pol_as(boxes[2], entry(5, 2)) == pol_as(merged, entry(5, 2))
