"""Rank statistics shared by the forecast generators and the evaluation metrics."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _tie_pairs(sorted_vals):
    n = sorted_vals.shape[0]
    total = 0
    run = 1
    for i in range(1, n):
        if sorted_vals[i] == sorted_vals[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


@njit(cache=True)
def _count_inversions(a, buf):
    # bottom-up merge sort; counts pairs i < j with a[i] > a[j]
    n = a.shape[0]
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    inv += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = a[j]
                j += 1
                k += 1
        for m in range(n):
            a[m] = buf[m]
        width *= 2
    return inv


@njit(cache=True)
def concordance_balance(x, y):
    """Concordant minus discordant pairs, ties counted as neither. O(n log n)."""
    n = x.shape[0]
    o1 = np.argsort(y, kind="mergesort")
    o2 = np.argsort(x[o1], kind="mergesort")
    order = o1[o2]
    xs = x[order]
    ys = y[order].copy()
    # joint ties: runs where both x and y are equal in (x, y) order
    joint = 0
    run = 1
    for i in range(1, n):
        if xs[i] == xs[i - 1] and ys[i] == ys[i - 1]:
            run += 1
        else:
            joint += run * (run - 1) // 2
            run = 1
    joint += run * (run - 1) // 2
    tx = _tie_pairs(xs)
    swaps = _count_inversions(ys, np.empty_like(ys))
    ty = _tie_pairs(ys)
    n0 = n * (n - 1) // 2
    return n0 - tx - ty + joint - 2 * swaps


def kendall_tau(f, y) -> float:
    """Kendall tau-a: (concordant - discordant) / C(T, 2)."""
    f = np.ascontiguousarray(f, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if f.shape != y.shape or f.ndim != 1:
        raise ValueError("kendall_tau needs two 1-d arrays of equal length")
    n = f.size
    if n < 2:
        raise ValueError("kendall_tau needs at least two values")
    return concordance_balance(f, y) / (n * (n - 1) / 2)


def average_rank(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size)
    start = 0
    for i in range(1, x.size + 1):
        if i == x.size or xs[i] != xs[start]:
            ranks[order[start:i]] = 0.5 * (start + i - 1) + 1.0
            start = i
    return ranks
