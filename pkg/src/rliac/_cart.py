"""Histogram-binned Gini CART for binary labels (numba kernel)."""

import numpy as np
from numba import njit

N_BINS = 64


def bin_edges(X, n_bins=N_BINS):
    """Per-feature split candidates: interior order statistics, deduplicated, padded with +inf."""
    srt = np.sort(np.asarray(X, dtype=np.float64), axis=0)
    n = len(srt)
    ranks = (np.arange(1, n_bins) * (n - 1)) // n_bins
    edges = np.full((X.shape[1], n_bins - 1), np.inf)
    for j in range(X.shape[1]):
        u = np.unique(srt[ranks, j])
        edges[j, :len(u)] = u
    return edges


@njit(cache=True)
def _binarize(X, edges):
    # counting edges below each value vectorises better than a binary search
    n, d = X.shape
    m = edges.shape[1]
    out = np.empty((n, d), np.uint8)
    for j in range(d):
        e = edges[j].copy()
        for i in range(n):
            v = X[i, j]
            c = 0
            for k in range(m):
                c += e[k] < v
            out[i, j] = c
    return out


def binarize(X, edges):
    """Bin index of each value: number of edges strictly below it, so bin <= b  <=>  x <= edges[b]."""
    return _binarize(np.ascontiguousarray(X, dtype=np.float64), edges)


@njit(cache=True)
def _grow(xb, y, edges, max_depth, min_leaf):
    n, d = xb.shape
    n_bins = edges.shape[1] + 1
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap, np.float64)

    idx = np.arange(n)
    # explicit stack of (node, start, end, depth)
    stack = np.empty((cap, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    hist = np.zeros((d, n_bins, 2), np.int64)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        cnt = end - start
        pos = 0
        for i in range(start, end):
            pos += y[idx[i]]
        value[node] = pos / cnt
        if depth >= max_depth or cnt < 2 * min_leaf or pos == 0 or pos == cnt:
            continue

        hist[:, :, :] = 0
        for i in range(start, end):
            s = idx[i]
            lab = y[s]
            for j in range(d):
                hist[j, xb[s, j], lab] += 1
        neg = cnt - pos
        parent = (pos * pos + neg * neg) / cnt
        best = parent + 1e-12
        best_f = -1
        best_b = -1
        for j in range(d):
            l0 = 0
            l1 = 0
            for b in range(n_bins - 1):
                l0 += hist[j, b, 0]
                l1 += hist[j, b, 1]
                nl = l0 + l1
                nr = cnt - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                if hist[j, b, 0] + hist[j, b, 1] == 0:
                    continue
                r0 = neg - l0
                r1 = pos - l1
                score = (l0 * l0 + l1 * l1) / nl + (r0 * r0 + r1 * r1) / nr
                if score > best:
                    best = score
                    best_f = j
                    best_b = b
        if best_f < 0:
            continue

        # partition idx[start:end] in place
        i = start
        k = end - 1
        while i <= k:
            if xb[idx[i], best_f] <= best_b:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[k]
                idx[k] = tmp
                k -= 1
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = edges[best_f, best_b]
        left[node] = lnode
        right[node] = rnode
        stack[top, 0] = rnode
        stack[top, 1] = i
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = start
        stack[top, 2] = i
        stack[top, 3] = depth + 1
        top += 1
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def grow(X, y, max_depth=12, min_leaf=5, n_bins=N_BINS):
    """Grow one tree; returns (feature, threshold, left, right, value) node arrays."""
    edges = bin_edges(X, n_bins)
    return grow_binned(binarize(X, edges), y, edges, max_depth, min_leaf)


def grow_binned(xb, y, edges, max_depth=12, min_leaf=5):
    """Grow one tree on pre-binned features (bins from ``binarize`` with the same edges)."""
    return _grow(np.ascontiguousarray(xb), np.ascontiguousarray(y, dtype=np.int64), edges,
                 int(max_depth), int(min_leaf))


@njit(cache=True)
def predict_packed(X, starts, feature, threshold, left, right, value):
    """Mean leaf value over all packed trees for every row of X."""
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(starts.shape[0]):
            node = starts[t]
            while left[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc / starts.shape[0]
    return out
