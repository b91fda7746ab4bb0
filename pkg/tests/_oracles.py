"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written the slow, obvious way: nested
loops, exhaustive state search, O(n^2) scans. None of it shares code with
the production modules, so agreement between the two is evidence rather
than tautology.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np


def conv2d_loops(x, weight, bias, stride=1, padding=0, groups=1):
    """Direct-summation cross-correlation, loop over every output scalar."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    c, h, w = x.shape
    out_c, in_cg, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    go = out_c // groups
    out = np.zeros((out_c, oh, ow))
    for o in range(out_c):
        c0 = (o // go) * in_cg
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ci in range(in_cg):
                    for ki in range(kh):
                        for kj in range(kw):
                            acc += weight[o, ci, ki, kj] * xp[c0 + ci,
                                                             i * stride + ki,
                                                             j * stride + kj]
                out[o, i, j] = acc + bias[o]
    return out


def group_norm_loops(x, groups, gamma, beta, eps=1e-5):
    """Per-group moments recomputed with plain python loops."""
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[0]
    per = c // groups
    out = np.empty_like(x)
    for g in range(groups):
        chunk = x[g * per:(g + 1) * per]
        mu = chunk.mean()
        var = chunk.var()
        out[g * per:(g + 1) * per] = (chunk - mu) / math.sqrt(var + eps)
    return gamma[:, None, None] * out + beta[:, None, None]


def channel_pool_scan(x):
    """Per-pixel max/mean computed one position at a time."""
    x = np.asarray(x, dtype=np.float64)
    _, h, w = x.shape
    out = np.empty((2, h, w))
    for i in range(h):
        for j in range(w):
            col = x[:, i, j]
            out[0, i, j] = col.max()
            out[1, i, j] = col.mean()
    return out


def rotate90_index_map(shape, axis, direction):
    """Index-permutation oracle for quarter turns about one spatial axis.

    Returns an array `pos` of the rotated shape where pos[out_index] holds
    the flat source index that must land there.
    """
    c, h, w = shape
    src = np.arange(c * h * w).reshape(c, h, w)
    out_shape = (w, h, c) if axis == "h" else (h, c, w)
    if axis == "h":
        # (C, W) plane turns; H rides along as the middle axis.
        out = np.empty((w, h, c), dtype=np.int64)
        for ci in range(c):
            for wi in range(w):
                for hi in range(h):
                    if direction == "ccw":
                        out[w - 1 - wi, hi, ci] = src[ci, hi, wi]
                    else:
                        out[wi, hi, c - 1 - ci] = src[ci, hi, wi]
        return out
    out = np.empty((h, c, w), dtype=np.int64)
    for ci in range(c):
        for hi in range(h):
            for wi in range(w):
                if direction == "ccw":
                    out[h - 1 - hi, ci, wi] = src[ci, hi, wi]
                else:
                    out[hi, c - 1 - ci, wi] = src[ci, hi, wi]
    return out


def finite_difference_grad(fn, m, h=1e-6):
    """Central finite differences of a scalar function over matrix entries."""
    m = np.asarray(m, dtype=np.float64)
    g = np.zeros_like(m)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            hi = m.copy()
            lo = m.copy()
            hi[i, j] += h
            lo[i, j] -= h
            g[i, j] = (fn(hi) - fn(lo)) / (2.0 * h)
    return g


def gram_schmidt_by_hand(r6):
    """Frame vectors from a 6-value rotation, spelled out step by step."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1, a2 = r6[:3], r6[3:]
    e1 = a1 / np.linalg.norm(a1)
    cross = np.cross(e1, a2)
    e2 = cross / np.linalg.norm(cross)
    e3 = np.cross(e2, e1)
    return e1, e2, e3


def nearest_neighbor_bruteforce(query, reference):
    """O(n*m) nearest-neighbor distances from each query point."""
    query = np.asarray(query, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    out = np.empty(len(query))
    for i, q in enumerate(query):
        out[i] = np.sqrt(((reference - q) ** 2).sum(axis=1)).min()
    return out


def add_bruteforce(points, pose_a, pose_b):
    ra, ta = pose_a
    rb, tb = pose_b
    total = 0.0
    for p in points:
        pa = ra @ p + ta
        pb = rb @ p + tb
        total += math.sqrt(((pa - pb) ** 2).sum())
    return total / len(points)


def adds_bruteforce(points, pose_a, pose_b):
    ra, ta = pose_a
    rb, tb = pose_b
    moved_a = [ra @ p + ta for p in points]
    moved_b = [rb @ p + tb for p in points]
    total = 0.0
    for pa in moved_a:
        best = math.inf
        for pb in moved_b:
            d = math.sqrt(((pa - pb) ** 2).sum())
            if d < best:
                best = d
        total += best
    return total / len(points)


def auc_sweep(errors, max_threshold, n=200_000):
    """Riemann-midpoint integral of the accuracy-vs-threshold step curve."""
    errors = np.asarray(errors, dtype=np.float64)
    ts = (np.arange(n) + 0.5) * (max_threshold / n)
    acc = (errors[:, None] <= ts[None, :]).mean(axis=0)
    return 100.0 * acc.mean()


def boundary_ring(box):
    """All pixels on the box outline, walked clockwise from the top-left."""
    xs, ys, w, h = box.x, box.y, box.w, box.h
    ring = []
    for u in range(w):
        ring.append((xs + u, ys))
    for v in range(1, h):
        ring.append((xs + w - 1, ys + v))
    if h > 1:
        for u in range(w - 2, -1, -1):
            ring.append((xs + u, ys + h - 1))
    if w > 1:
        for v in range(h - 2, 0, -1):
            ring.append((xs, ys + v))
    return ring


def _dominates(a, b):
    """Interval containment over the three (hi, lo) channel pairs."""
    return (a[0] <= b[0] and a[1] >= b[1]
            and a[2] <= b[2] and a[3] >= b[3]
            and a[4] <= b[4] and a[5] >= b[5])


def mbd_exact(crop, seed_rc):
    """Exact minimum barrier per pixel from one seed, by exhaustive search.

    The search carries the full per-channel (max, min) path state and keeps
    every non-dominated state per pixel, so no optimal path can be lost to
    the greedy collapse a raster scan performs. Returns the (h, w) array of
    minimal worst-channel spans.
    """
    crop = np.asarray(crop, dtype=np.float64)
    h, w, _ = crop.shape
    vals = crop.reshape(h * w, 3)
    sr, sc = seed_rc
    start = sr * w + sc
    v = vals[start]
    init = (v[0], v[0], v[1], v[1], v[2], v[2])
    frontiers = [set() for _ in range(h * w)]
    frontiers[start].add(init)
    queue = deque([(start, init)])
    while queue:
        i, st = queue.popleft()
        if st not in frontiers[i]:
            continue  # displaced by a dominating state after being queued
        r, c = divmod(i, w)
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            j = nr * w + nc
            p = vals[j]
            nst = (st[0] if st[0] > p[0] else p[0],
                   st[1] if st[1] < p[0] else p[0],
                   st[2] if st[2] > p[1] else p[1],
                   st[3] if st[3] < p[1] else p[1],
                   st[4] if st[4] > p[2] else p[2],
                   st[5] if st[5] < p[2] else p[2])
            fr = frontiers[j]
            if nst in fr or any(_dominates(o, nst) for o in fr):
                continue
            for o in [o for o in fr if _dominates(nst, o)]:
                fr.discard(o)
            fr.add(nst)
            queue.append((j, nst))
    out = np.empty((h, w))
    for i, fr in enumerate(frontiers):
        best = math.inf
        for st in fr:
            span = max(st[0] - st[1], st[2] - st[3], st[4] - st[5])
            if span < best:
                best = span
        out[i // w, i % w] = best
    return out


def barrier_scores_exact(image, box, seeds, alpha):
    """Exact per-pixel score: best seed by squared span plus distance term.

    The scalar cost expression deliberately mirrors the production one
    operation for operation, so any disagreement can only come from the
    path search itself.
    """
    image = np.asarray(image, dtype=np.float64)
    crop = image[box.y:box.y + box.h, box.x:box.x + box.w]
    h, w = box.h, box.w
    inv = 1.0 / 255.0
    a_over_diag = alpha / box.diagonal
    best = np.full((h, w), math.inf)
    for sx, sy in seeds:
        lx, ly = sx - box.x, sy - box.y
        spans = mbd_exact(crop, (ly, lx))
        for y in range(h):
            for x in range(w):
                cost = (spans[y, x] * inv) ** 2 + a_over_diag * math.hypot(x - lx, y - ly)
                if cost < best[y, x]:
                    best[y, x] = cost
    return best


def min_total_error_matching(cost):
    """Exhaustive assignment minimizing total cost on a small square matrix."""
    import itertools

    n = cost.shape[0]
    best_perm, best_total = None, math.inf
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if total < best_total:
            best_perm, best_total = perm, total
    return best_perm, best_total
