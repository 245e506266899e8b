"""Finite unions of closed intervals stored as (lo, hi) endpoint arrays."""
from __future__ import annotations

import numpy as np


def merge(lo, hi):
    """Sorted disjoint cover of the union of [lo_i, hi_i]."""
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    if lo.size == 0:
        return np.empty(0), np.empty(0)
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    reach = np.maximum.accumulate(hi)
    # a new block starts where the next left end clears everything so far
    starts = np.concatenate([[True], lo[1:] > reach[:-1]])
    idx = np.flatnonzero(starts)
    ends = np.concatenate([idx[1:] - 1, [lo.size - 1]])
    return lo[idx], reach[ends]


def measure(lo, hi) -> float:
    """Lebesgue measure of the union."""
    a, b = merge(lo, hi)
    return float(np.sum(b - a))


def intersection_measure(lo1, hi1, lo2, hi2) -> float:
    """|U1 ∩ U2| = |U1| + |U2| - |U1 ∪ U2|, each U a finite union."""
    u = measure(np.concatenate([lo1, lo2]), np.concatenate([hi1, hi2]))
    m1, m2 = measure(lo1, hi1), measure(lo2, hi2)
    out = m1 + m2 - u
    # below the cancellation error of the difference the sets only touch
    return out if out > 8 * np.finfo(float).eps * (m1 + m2) else 0.0


def clip(lo, hi, a: float, b: float):
    lo = np.maximum(np.asarray(lo, dtype=float), a)
    hi = np.minimum(np.asarray(hi, dtype=float), b)
    keep = lo <= hi
    return lo[keep], hi[keep]


def contains(lo, hi, x) -> np.ndarray:
    """Membership of points x in a merged union (lo, hi sorted and disjoint)."""
    x = np.asarray(x, dtype=float)
    k = np.searchsorted(lo, x, side="right") - 1
    ok = k >= 0
    kk = np.where(ok, k, 0)
    return ok & (x <= hi[kk]) if lo.size else np.zeros(x.shape, dtype=bool)
