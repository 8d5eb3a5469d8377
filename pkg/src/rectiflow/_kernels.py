"""Compiled inner loops: truncated Gaussian-kernel regression on a cell grid
and an epsilon-scaling auction for dense squared-Euclidean assignment."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _grid_nw(q, p, vals, cell_start, cell_count, ncell, lo, cell, offsets):
    # q, p are pre-scaled by the bandwidth; kernel is exp(-r^2/2), cut at r < cell
    cutoff2 = cell * cell
    m, d = q.shape
    k = vals.shape[1]
    out = np.zeros((m, k))
    wsum = np.zeros(m)
    wmax = np.zeros(m)
    idx = np.empty(d, np.int64)
    for a in range(m):
        for j in range(d):
            idx[j] = np.int64(np.floor((q[a, j] - lo[j]) / cell))
        for o in range(offsets.shape[0]):
            flat = 0
            ok = True
            for j in range(d):
                c = idx[j] + offsets[o, j]
                if c < 0 or c >= ncell[j]:
                    ok = False
                    break
                flat = flat * ncell[j] + c
            if not ok:
                continue
            s = cell_start[flat]
            for b in range(s, s + cell_count[flat]):
                r2 = 0.0
                for j in range(d):
                    diff = q[a, j] - p[b, j]
                    r2 += diff * diff
                if r2 < cutoff2:
                    w = np.exp(-0.5 * r2)
                    wsum[a] += w
                    if w > wmax[a]:
                        wmax[a] = w
                    for l in range(k):
                        out[a, l] += w * vals[b, l]
    return out, wsum, wmax


def grid_cells(p_scaled: np.ndarray, cutoff: float) -> int:
    """Number of grid cells a truncated evaluation would allocate."""
    span = p_scaled.max(0) - p_scaled.min(0) + 2 * cutoff
    return int(np.prod(np.floor(span / cutoff) + 2))


def grid_nw(query, pts, vals, h, cutoff=6.0):
    """Truncated Nadaraya-Watson sums.

    Only particles within ``cutoff`` bandwidths of a query contribute.

    Returns:
        ``(num, den, wmax)``: weighted value sums, weight sums and the largest
        single weight per query (all relative to ``exp(0)`` at zero distance).
    """
    d = pts.shape[1]
    q = np.ascontiguousarray(query / h)
    p = pts / h
    lo = p.min(0) - cutoff
    ncell = (np.floor((p.max(0) - lo) / cutoff) + 2).astype(np.int64)
    cid = np.floor((p - lo) / cutoff).astype(np.int64)
    flat = np.ravel_multi_index(tuple(cid.T), tuple(ncell))
    order = np.argsort(flat, kind="stable")
    total = int(np.prod(ncell))
    cell_count = np.bincount(flat[order], minlength=total)
    cell_start = np.concatenate([[0], np.cumsum(cell_count)[:-1]]).astype(np.int64)
    offsets = np.array(np.meshgrid(*[[-1, 0, 1]] * d, indexing="ij")).reshape(d, -1).T.copy()
    return _grid_nw(q, np.ascontiguousarray(p[order]), np.ascontiguousarray(vals[order]),
                    cell_start, cell_count.astype(np.int64), ncell, lo, float(cutoff), offsets)


@numba.njit(cache=True, nogil=True)
def _auction_sqeuclid(x, y, eps_start, eps_end, theta):
    # Forward Gauss-Seidel auction maximizing sum_i 2<x_i, y_j> - |y_j|^2,
    # equivalent to minimizing sum_i |x_i - y_j|^2.
    n, d = x.shape
    yy = np.empty(n)
    for j in range(n):
        s = 0.0
        for k in range(d):
            s += y[j, k] * y[j, k]
        yy[j] = s
    price = np.zeros(n)
    owner = -np.ones(n, np.int64)
    assign = -np.ones(n, np.int64)
    queue = np.empty(n, np.int64)
    eps = eps_start
    nbids = 0
    while True:
        for j in range(n):
            owner[j] = -1
        for i in range(n):
            assign[i] = -1
            queue[i] = i
        qlen = n
        head = 0
        while qlen > 0:
            i = queue[head]
            head = (head + 1) % n
            qlen -= 1
            v1 = -np.inf
            v2 = -np.inf
            j1 = -1
            for j in range(n):
                dot = 0.0
                for k in range(d):
                    dot += x[i, k] * y[j, k]
                v = 2.0 * dot - yy[j] - price[j]
                if v > v1:
                    v2 = v1
                    v1 = v
                    j1 = j
                elif v > v2:
                    v2 = v
            if v2 == -np.inf:
                v2 = v1
            price[j1] += v1 - v2 + eps
            nbids += 1
            prev = owner[j1]
            if prev >= 0:
                assign[prev] = -1
                queue[(head + qlen) % n] = prev
                qlen += 1
            owner[j1] = i
            assign[i] = j1
        if eps <= eps_end:
            break
        eps = max(eps / theta, eps_end)
    return assign, price, nbids


def auction_assignment(x: np.ndarray, y: np.ndarray, eps_end: float | None = None,
                       theta: float = 5.0):
    """Squared-Euclidean assignment by epsilon-scaling auction.

    The result satisfies epsilon-complementary slackness at ``eps_end``, so its
    total cost is within ``n * eps_end`` of the optimum. With integer-free real
    costs the default ``eps_end`` makes that gap negligible against double
    precision rounding of the total.

    Returns:
        ``(assign, prices, nbids)`` where ``assign[i]`` is the target row of
        source row ``i``.
    """
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n = x.shape[0]
    spread = float(np.abs(x).max() + np.abs(y).max())
    scale = max(spread * spread * x.shape[1], 1e-300)
    if eps_end is None:
        eps_end = 1e-9 * scale / n
    return _auction_sqeuclid(x, y, scale, float(eps_end), float(theta))
