"""Compiled inner loops (numba). Callers validate arguments; these do not."""

import numba
import numpy as np


@numba.njit(cache=True)
def sqdist(a, b):
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    dz = a[2] - b[2]
    return dx * dx + dy * dy + dz * dz


@numba.njit(cache=True)
def fps(points, m, start):
    n = points.shape[0]
    out = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = start
    for s in range(m):
        out[s] = cur
        mind[cur] = -1.0
        best = -1
        bestd = -1.0
        p = points[cur]
        for i in range(n):
            if mind[i] < 0.0:
                continue
            d = sqdist(points[i], p)
            if d < mind[i]:
                mind[i] = d
            # strict '>' keeps the lowest index on ties
            if mind[i] > bestd:
                bestd = mind[i]
                best = i
        cur = best
    return out


@numba.njit(cache=True)
def knn(queries, reference, k):
    q = queries.shape[0]
    n = reference.shape[0]
    out = np.empty((q, k), dtype=np.int64)
    dist = np.empty(k)
    for i in range(q):
        filled = 0
        qi = queries[i]
        for j in range(n):
            d = sqdist(reference[j], qi)
            if filled == k and d >= dist[k - 1]:
                continue
            # insertion after any equal distances keeps lower indices first
            pos = filled if filled < k else k - 1
            while pos > 0 and dist[pos - 1] > d:
                if pos < k:
                    dist[pos] = dist[pos - 1]
                    out[i, pos] = out[i, pos - 1]
                pos -= 1
            dist[pos] = d
            out[i, pos] = j
            if filled < k:
                filled += 1
    return out


@numba.njit(cache=True)
def knn_blocks(points, block, k):
    """k-NN within consecutive blocks of `block` rows; indices are global."""
    total = points.shape[0]
    out = np.empty((total, k), dtype=np.int64)
    for b0 in range(0, total, block):
        sub = points[b0:b0 + block]
        local = knn(sub, sub, k)
        for i in range(block):
            for j in range(k):
                out[b0 + i, j] = local[i, j] + b0
    return out


@numba.njit(cache=True)
def gather_max(x, idx):
    m, k = idx.shape
    c = x.shape[1]
    out = np.empty((m, c))
    arg = np.empty((m, c), dtype=np.int64)
    for i in range(m):
        r = idx[i, 0]
        for ch in range(c):
            out[i, ch] = x[r, ch]
            arg[i, ch] = r
        for j in range(1, k):
            r = idx[i, j]
            for ch in range(c):
                v = x[r, ch]
                if v > out[i, ch]:
                    out[i, ch] = v
                    arg[i, ch] = r
    return out, arg


@numba.njit(cache=True)
def scatter_cols(arg, g, n):
    """out[arg[i, c], c] += g[i, c]."""
    m, c = g.shape
    out = np.zeros((n, c))
    for i in range(m):
        for ch in range(c):
            out[arg[i, ch], ch] += g[i, ch]
    return out


@numba.njit(cache=True)
def scatter_rows(rows, g, n):
    """out[rows[i], :] += g[i, :]."""
    c = g.shape[1]
    out = np.zeros((n, c))
    for i in range(rows.shape[0]):
        r = rows[i]
        for ch in range(c):
            out[r, ch] += g[i, ch]
    return out


@numba.njit(cache=True)
def nearest(a, b):
    """For each row of a: (index of nearest row of b, squared distance)."""
    na = a.shape[0]
    nb = b.shape[0]
    idx = np.empty(na, dtype=np.int64)
    dmin = np.empty(na)
    for i in range(na):
        best = np.inf
        bi = 0
        for j in range(nb):
            d = sqdist(a[i], b[j])
            if d < best:
                best = d
                bi = j
        idx[i] = bi
        dmin[i] = best
    return idx, dmin


@numba.njit(cache=True)
def group_max(z, k):
    """Max over each block of k consecutive rows: (G*k, c) -> (G, c) plus in-block argmax."""
    rows, c = z.shape
    groups = rows // k
    out = np.empty((groups, c))
    arg = np.zeros((groups, c), dtype=np.int64)
    for g in range(groups):
        base = g * k
        for ch in range(c):
            out[g, ch] = z[base, ch]
        for j in range(1, k):
            for ch in range(c):
                v = z[base + j, ch]
                if v > out[g, ch]:
                    out[g, ch] = v
                    arg[g, ch] = j
    return out, arg


@numba.njit(cache=True)
def group_max_backward(x, wt, arg, gout, k, need_x, need_w):
    """Gradients of sum(gout * max_block(x @ w + b)) where only argmax rows carry gradient.

    wt is w transposed (c, a). Returns gx (rows, a), gwt (c, a), gb (c,).
    """
    groups, c = gout.shape
    a = x.shape[1]
    gx = np.zeros((x.shape[0], a)) if need_x else np.zeros((0, a))
    gwt = np.zeros((c, a)) if need_w else np.zeros((0, a))
    gb = np.zeros(c)
    for g in range(groups):
        for ch in range(c):
            go = gout[g, ch]
            if go == 0.0:
                continue
            r = g * k + arg[g, ch]
            gb[ch] += go
            if need_x:
                for i in range(a):
                    gx[r, i] += go * wt[ch, i]
            if need_w:
                for i in range(a):
                    gwt[ch, i] += go * x[r, i]
    return gx, gwt, gb


@numba.njit(cache=True)
def mask_grad(g, y):
    """g where y > 0 else 0 (relu backward from the relu output)."""
    out = np.empty_like(g)
    gf = g.reshape(-1)
    yf = y.reshape(-1)
    of = out.reshape(-1)
    for i in range(gf.shape[0]):
        of[i] = gf[i] if yf[i] > 0.0 else 0.0
    return out


@numba.njit(cache=True)
def gather_sub_relu(src, centre, idx):
    """out[i*k + j] = relu(src[idx[i, j]] - centre[i])."""
    m, k = idx.shape
    c = src.shape[1]
    out = np.empty((m * k, c))
    for i in range(m):
        for j in range(k):
            r = idx[i, j]
            row = i * k + j
            for ch in range(c):
                v = src[r, ch] - centre[i, ch]
                out[row, ch] = v if v > 0.0 else 0.0
    return out


@numba.njit(cache=True)
def gather_sub_relu_backward(g, out, idx, n):
    m, k = idx.shape
    c = g.shape[1]
    gsrc = np.zeros((n, c))
    gcentre = np.zeros((m, c))
    for i in range(m):
        for j in range(k):
            r = idx[i, j]
            row = i * k + j
            for ch in range(c):
                if out[row, ch] > 0.0:
                    v = g[row, ch]
                    gsrc[r, ch] += v
                    gcentre[i, ch] -= v
    return gsrc, gcentre
