"""Multi-box coordination: loss-series comparison and share merging.

Boxes that police disjoint slices of the same victim-bound traffic cannot
see each other's counters, but their short-term loss-rate series move
together when their traffic shares a bottleneck. Correlating the series
window by window detects that; boxes classified as co-bottlenecked can
then allocate from merged totals so fairness holds across the whole set,
not just within each box's slice.

A loss-rate sample is (cycle index, completion time ms, rate), exactly what
the policing box logs at the end of every feedback batch.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from .policies import AllocationContext, aggregate_share

Sample = Tuple[int, int, float]

CORRELATION_WINDOW = 100
DETECT_THRESHOLD = 0.5
DETECT_ROUNDS = 3


def slr_correlation(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson coefficient of two aligned loss-rate windows.

    Series without variance correlate with nothing: the coefficient is
    defined as 0 when either side is constant.
    """
    if len(a) != len(b):
        raise ValueError(f"window lengths differ: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least two samples per window")
    xs = np.asarray(a, dtype=float)
    ys = np.asarray(b, dtype=float)
    xd = xs - xs.mean()
    yd = ys - ys.mean()
    denom = float(np.sqrt((xd * xd).sum() * (yd * yd).sum()))
    if denom == 0.0:
        return 0.0
    return float((xd * yd).sum() / denom)


def _median_gap(series: Sequence[Sample]) -> float:
    times = [t for _, t, _ in series]
    gaps = [b - a for a, b in zip(times, times[1:]) if b > a]
    if not gaps:
        return 1.0
    return float(np.median(gaps))


def align_series(a: Sequence[Sample], b: Sequence[Sample]
                 ) -> Tuple[List[float], List[float]]:
    """Pair samples by nearest completion time, within half a cycle.

    Batches complete independently at each box, so indices mean nothing
    across boxes; time does. Samples with no counterpart inside the
    tolerance are dropped.
    """
    if not a or not b:
        return [], []
    tol = min(_median_gap(a), _median_gap(b)) / 2
    out_a: List[float] = []
    out_b: List[float] = []
    i = j = 0
    while i < len(a) and j < len(b):
        dt = b[j][1] - a[i][1]
        if abs(dt) <= tol:
            out_a.append(a[i][2])
            out_b.append(b[j][2])
            i += 1
            j += 1
        elif dt < 0:
            j += 1
        else:
            i += 1
    return out_a, out_b


def correlation_windows(a: Sequence[Sample], b: Sequence[Sample],
                        window: int = CORRELATION_WINDOW) -> List[float]:
    """One coefficient per full window of aligned samples."""
    if window < 2:
        raise ValueError("window must hold at least two samples")
    xs, ys = align_series(a, b)
    coeffs = []
    for start in range(0, len(xs) - window + 1, window):
        coeffs.append(slr_correlation(xs[start:start + window],
                                      ys[start:start + window]))
    return coeffs


def detect_cobottleneck(coefficients: Sequence[float],
                        threshold: float = DETECT_THRESHOLD,
                        rounds: int = DETECT_ROUNDS) -> bool:
    """True when the last ``rounds`` coefficients all clear the threshold.

    Insufficient history is a negative: boxes must never merge allocation
    state on a hunch.
    """
    if rounds < 1:
        raise ValueError("rounds must be positive")
    if len(coefficients) < rounds:
        return False
    return all(c > threshold for c in coefficients[-rounds:])


class CoordinationGroup:
    """Bind allocation contexts so policies allocate from the union."""

    def __init__(self, contexts: List[AllocationContext]):
        if not contexts:
            raise ValueError("a group needs at least one member")
        self.contexts = list(contexts)
        for ctx in self.contexts:
            ctx.group = self.contexts

    def merged(self) -> AllocationContext:
        return aggregate_share(self.contexts)


__all__ = [
    "CORRELATION_WINDOW",
    "DETECT_ROUNDS",
    "DETECT_THRESHOLD",
    "CoordinationGroup",
    "aggregate_share",
    "align_series",
    "correlation_windows",
    "detect_cobottleneck",
    "slr_correlation",
]
