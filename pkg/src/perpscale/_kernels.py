"""Compiled inner loops.

Every kernel that runs in parallel splits work over rows only. Each row's
arithmetic runs in a fixed sequential order and any cross-row reduction is
done afterwards by the caller in index order, so results do not depend on
the thread count.
"""

import numpy as np
from numba import njit, prange

FLAG_OK = 0
FLAG_CLAMPED_HIGH = 1
FLAG_CLAMPED_LOW = 2
FLAG_DEGENERATE = 3

LOG2_SIGMA_LO = np.log2(1e-12)
LOG2_SIGMA_HI = np.log2(1e12)
_LOG2_SIGMA_LIMIT = 500.0
_EXPAND_STEP = 40.0

MAX_TREE_DEPTH = 48
SIDE_FACTOR = 2.0 * np.sqrt(2.0)


# -- distances -------------------------------------------------------------


@njit(cache=True, parallel=True)
def sq_dists(X, Y):
    """Squared Euclidean distances between rows of X and rows of Y."""
    n, m, d = X.shape[0], Y.shape[0], X.shape[1]
    out = np.empty((n, m))
    for i in prange(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = X[i, k] - Y[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out


@njit(cache=True, parallel=True)
def knn(X, Y, k, exclude_self):
    """Exact k nearest rows of Y for each row of X.

    Ties are broken by the smaller row index of Y, so callers pass Y sorted
    by id. With ``exclude_self`` X must be Y and row i never lists itself.
    """
    n, m, d = X.shape[0], Y.shape[0], X.shape[1]
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for i in prange(n):
        row = np.empty(m)
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = X[i, t] - Y[j, t]
                acc += diff * diff
            row[j] = acc
        if exclude_self:
            row[i] = np.inf
        order = np.argsort(row, kind="mergesort")
        for j in range(k):
            idx[i, j] = order[j]
            dist[i, j] = row[order[j]]
    return idx, dist


# -- perplexity and bandwidth search ---------------------------------------


@njit(cache=True)
def _log_perplexity(d, dmin, beta):
    """Natural-log entropy of exp(-beta * (d - dmin)) normalised over d."""
    s = 0.0
    e = 0.0
    for j in range(d.shape[0]):
        shifted = d[j] - dmin
        w = np.exp(-beta * shifted)
        s += w
        e += w * shifted
    return np.log(s) + beta * e / s


@njit(cache=True)
def _beta(log2_sigma):
    # 1 / (2 sigma^2)
    return 0.5 * np.exp2(-2.0 * log2_sigma)


@njit(cache=True)
def solve_row(d, target, tol, max_iter):
    """Bisection on log2(sigma) so that the row perplexity hits ``target``.

    Returns (sigma, achieved perplexity, bisection iterations, flag).
    """
    m = d.shape[0]
    dmin = d[0]
    dmax = d[0]
    for j in range(1, m):
        if d[j] < dmin:
            dmin = d[j]
        if d[j] > dmax:
            dmax = d[j]

    if dmax == dmin:
        # uniform for every sigma
        flag = FLAG_OK if abs(m - target) <= tol else FLAG_DEGENERATE
        return 1.0, float(m), 1, flag

    lo = LOG2_SIGMA_LO
    hi = LOG2_SIGMA_HI
    if target > m:
        # perplexity never exceeds the support size
        return np.exp2(hi), np.exp(_log_perplexity(d, dmin, _beta(hi))), 0, FLAG_CLAMPED_HIGH
    ties = 0
    for j in range(m):
        if d[j] == dmin:
            ties += 1
    if target < ties:
        # nor drops below the number of tied nearest neighbors
        return np.exp2(lo), np.exp(_log_perplexity(d, dmin, _beta(lo))), 0, FLAG_CLAMPED_LOW
    while np.exp(_log_perplexity(d, dmin, _beta(hi))) < target - tol:
        if hi >= _LOG2_SIGMA_LIMIT:
            return np.exp2(hi), np.exp(_log_perplexity(d, dmin, _beta(hi))), 0, FLAG_CLAMPED_HIGH
        lo = hi
        hi = min(hi + _EXPAND_STEP, _LOG2_SIGMA_LIMIT)
    while np.exp(_log_perplexity(d, dmin, _beta(lo))) > target + tol:
        if lo <= -_LOG2_SIGMA_LIMIT:
            return np.exp2(lo), np.exp(_log_perplexity(d, dmin, _beta(lo))), 0, FLAG_CLAMPED_LOW
        hi = lo
        lo = max(lo - _EXPAND_STEP, -_LOG2_SIGMA_LIMIT)

    mid = 0.5 * (lo + hi)
    perp = 0.0
    it = 0
    while it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        perp = np.exp(_log_perplexity(d, dmin, _beta(mid)))
        if abs(perp - target) <= tol:
            return np.exp2(mid), perp, it, FLAG_OK
        if perp < target:
            lo = mid
        else:
            hi = mid
    # bracket exhausted at machine precision; report the closer end
    p_lo = np.exp(_log_perplexity(d, dmin, _beta(lo)))
    p_hi = np.exp(_log_perplexity(d, dmin, _beta(hi)))
    if abs(p_lo - target) < abs(p_hi - target):
        return np.exp2(lo), p_lo, it, FLAG_OK
    return np.exp2(hi), p_hi, it, FLAG_OK


@njit(cache=True)
def _row_probabilities(d, sigma, out):
    dmin = d[0]
    for j in range(1, d.shape[0]):
        if d[j] < dmin:
            dmin = d[j]
    beta = 0.5 / (sigma * sigma)
    s = 0.0
    for j in range(d.shape[0]):
        out[j] = np.exp(-beta * (d[j] - dmin))
        s += out[j]
    for j in range(d.shape[0]):
        out[j] /= s


@njit(cache=True, parallel=True)
def solve_rows(D, target, tol, max_iter):
    """Bandwidths and conditional probabilities for each row of D (n x m)."""
    n, m = D.shape
    sigma = np.empty(n)
    achieved = np.empty(n)
    iters = np.empty(n, dtype=np.int64)
    flags = np.empty(n, dtype=np.int64)
    P = np.empty((n, m))
    for i in prange(n):
        s, a, it, f = solve_row(D[i], target, tol, max_iter)
        sigma[i] = s
        achieved[i] = a
        iters[i] = it
        flags[i] = f
        _row_probabilities(D[i], s, P[i])
    return sigma, achieved, iters, flags, P


@njit(cache=True, parallel=True)
def solve_rows_dense(D, target, tol, max_iter):
    """As ``solve_rows`` on a full n x n matrix, skipping the diagonal.

    The returned P is n x n with a zero diagonal.
    """
    n = D.shape[0]
    sigma = np.empty(n)
    achieved = np.empty(n)
    iters = np.empty(n, dtype=np.int64)
    flags = np.empty(n, dtype=np.int64)
    P = np.zeros((n, n))
    for i in prange(n):
        row = np.empty(n - 1)
        c = 0
        for j in range(n):
            if j != i:
                row[c] = D[i, j]
                c += 1
        s, a, it, f = solve_row(row, target, tol, max_iter)
        sigma[i] = s
        achieved[i] = a
        iters[i] = it
        flags[i] = f
        probs = np.empty(n - 1)
        _row_probabilities(row, s, probs)
        c = 0
        for j in range(n):
            if j != i:
                P[i, j] = probs[c]
                c += 1
    return sigma, achieved, iters, flags, P


@njit(cache=True, parallel=True)
def solve_bandwidths_streaming(X, target, tol, max_iter):
    """Dense-mode bandwidths without materialising the n x n distance matrix."""
    n, d = X.shape
    sigma = np.empty(n)
    achieved = np.empty(n)
    flags = np.empty(n, dtype=np.int64)
    for i in prange(n):
        row = np.empty(n - 1)
        c = 0
        for j in range(n):
            if j != i:
                acc = 0.0
                for t in range(d):
                    diff = X[i, t] - X[j, t]
                    acc += diff * diff
                row[c] = acc
                c += 1
        s, a, it, f = solve_row(row, target, tol, max_iter)
        sigma[i] = s
        achieved[i] = a
        flags[i] = f
    return sigma, achieved, flags


@njit(cache=True, parallel=True)
def restricted_perplexities(X, sigma):
    """Perplexity of each row's Gaussian over the other rows of X with a fixed sigma."""
    n, d = X.shape
    out = np.empty(n)
    for i in prange(n):
        row = np.empty(n - 1)
        c = 0
        for j in range(n):
            if j != i:
                acc = 0.0
                for t in range(d):
                    diff = X[i, t] - X[j, t]
                    acc += diff * diff
                row[c] = acc
                c += 1
        dmin = row[0]
        for j in range(1, n - 1):
            if row[j] < dmin:
                dmin = row[j]
        out[i] = np.exp(_log_perplexity(row, dmin, 0.5 / (sigma[i] * sigma[i])))
    return out


# -- gradients -------------------------------------------------------------


@njit(cache=True, parallel=True)
def attraction(Y, indptr, indices, data):
    """Per-point sum_j p_ij w_ij (y_i - y_j) and sum_j p_ij log w_ij over the P support."""
    n, dim = Y.shape
    attr = np.zeros((n, dim))
    plogw = np.zeros(n)
    for i in prange(n):
        for ptr in range(indptr[i], indptr[i + 1]):
            j = indices[ptr]
            d2 = 0.0
            for t in range(dim):
                diff = Y[i, t] - Y[j, t]
                d2 += diff * diff
            w = 1.0 / (1.0 + d2)
            pw = data[ptr] * w
            for t in range(dim):
                attr[i, t] += pw * (Y[i, t] - Y[j, t])
            plogw[i] += data[ptr] * np.log(w)
    return attr, plogw


@njit(cache=True, parallel=True)
def attraction_2d(Y, indptr, indices, data):
    """``attraction`` unrolled for two embedding dimensions."""
    n = Y.shape[0]
    attr = np.zeros((n, 2))
    plogw = np.zeros(n)
    for i in prange(n):
        ax = 0.0
        ay = 0.0
        acc = 0.0
        yx = Y[i, 0]
        yy = Y[i, 1]
        for ptr in range(indptr[i], indptr[i + 1]):
            j = indices[ptr]
            dx = yx - Y[j, 0]
            dy = yy - Y[j, 1]
            q = 1.0 + dx * dx + dy * dy
            pw = data[ptr] / q
            ax += pw * dx
            ay += pw * dy
            acc -= data[ptr] * np.log(q)
        attr[i, 0] = ax
        attr[i, 1] = ay
        plogw[i] = acc
    return attr, plogw


@njit(cache=True, parallel=True)
def exact_repulsion(Y):
    """Per-point sum_j w_ij^2 (y_i - y_j) and sum_j w_ij over all j != i."""
    n, dim = Y.shape
    rep = np.zeros((n, dim))
    zrow = np.zeros(n)
    for i in prange(n):
        for j in range(n):
            if j == i:
                continue
            d2 = 0.0
            for t in range(dim):
                diff = Y[i, t] - Y[j, t]
                d2 += diff * diff
            w = 1.0 / (1.0 + d2)
            zrow[i] += w
            ww = w * w
            for t in range(dim):
                rep[i, t] += ww * (Y[i, t] - Y[j, t])
    return rep, zrow


# -- Barnes-Hut quadtree ---------------------------------------------------
# geo columns: center x, center y, half width, mass sum x, mass sum y
# topo columns: child 0..3, count, representative point


@njit(cache=True)
def _grow(geo, topo):
    cap = geo.shape[0]
    g = np.empty((2 * cap, 5))
    t = np.full((2 * cap, 6), -1, dtype=np.int64)
    g[:cap] = geo
    t[:cap] = topo
    return g, t


@njit(cache=True)
def build_quadtree(Y):
    n = Y.shape[0]
    xmin = Y[0, 0]
    xmax = Y[0, 0]
    ymin = Y[0, 1]
    ymax = Y[0, 1]
    for i in range(1, n):
        xmin = min(xmin, Y[i, 0])
        xmax = max(xmax, Y[i, 0])
        ymin = min(ymin, Y[i, 1])
        ymax = max(ymax, Y[i, 1])
    half = 0.5 * max(xmax - xmin, ymax - ymin)
    half = half * (1.0 + 1e-9) + 1e-300

    cap = 4 * n + 16
    geo = np.empty((cap, 5))
    topo = np.full((cap, 6), -1, dtype=np.int64)
    leaf_of = np.empty(n, dtype=np.int64)
    geo[0, 0] = 0.5 * (xmin + xmax)
    geo[0, 1] = 0.5 * (ymin + ymax)
    geo[0, 2] = half
    geo[0, 3] = 0.0
    geo[0, 4] = 0.0
    topo[0, 4] = 0
    nnodes = 1

    for i in range(n):
        x = Y[i, 0]
        y = Y[i, 1]
        node = 0
        depth = 0
        while True:
            if topo[node, 0] >= 0:
                # internal: descend
                topo[node, 4] += 1
                geo[node, 3] += x
                geo[node, 4] += y
                q = (1 if x > geo[node, 0] else 0) + (2 if y > geo[node, 1] else 0)
                node = topo[node, q]
                depth += 1
                continue
            if topo[node, 4] <= 0:
                topo[node, 4] = 1
                topo[node, 5] = i
                geo[node, 3] = x
                geo[node, 4] = y
                leaf_of[i] = node
                break
            j = topo[node, 5]
            if (Y[j, 0] == x and Y[j, 1] == y) or depth >= MAX_TREE_DEPTH:
                topo[node, 4] += 1
                geo[node, 3] += x
                geo[node, 4] += y
                leaf_of[i] = node
                break
            # occupied leaf holding one distinct location: split it
            if nnodes + 4 > geo.shape[0]:
                geo, topo = _grow(geo, topo)
            h = 0.5 * geo[node, 2]
            for q in range(4):
                c = nnodes + q
                geo[c, 0] = geo[node, 0] + (h if q & 1 else -h)
                geo[c, 1] = geo[node, 1] + (h if q & 2 else -h)
                geo[c, 2] = h
                geo[c, 3] = 0.0
                geo[c, 4] = 0.0
                topo[c, 0] = -1
                topo[c, 1] = -1
                topo[c, 2] = -1
                topo[c, 3] = -1
                topo[c, 4] = 0
                topo[c, 5] = -1
                topo[node, q] = c
            nnodes += 4
            # existing points (all at Y[j]) move down together
            cnt = topo[node, 4]
            qj = (1 if Y[j, 0] > geo[node, 0] else 0) + (2 if Y[j, 1] > geo[node, 1] else 0)
            c = topo[node, qj]
            topo[c, 4] = cnt
            topo[c, 5] = j
            geo[c, 3] = geo[node, 3]
            geo[c, 4] = geo[node, 4]
            if cnt == 1:
                leaf_of[j] = c
            else:
                for p in range(i):
                    if leaf_of[p] == node:
                        leaf_of[p] = c
            topo[node, 5] = -1
            # loop again at the same node, now internal
    return geo[:nnodes], topo[:nnodes], leaf_of


@njit(cache=True, parallel=True)
def bh_repulsion(Y, geo, topo, leaf_of, theta):
    """Barnes-Hut estimate of the per-point repulsion and normalisation terms.

    A cell is summarised by its centre of mass when its side length divided
    by the distance to that centre is below ``theta`` and the cell does not
    contain the query point; otherwise it is opened.
    """
    n = Y.shape[0]
    rep = np.zeros((n, 2))
    zrow = np.zeros(n)
    for i in prange(n):
        x = Y[i, 0]
        y = Y[i, 1]
        stack = np.empty(4 * MAX_TREE_DEPTH + 8, dtype=np.int64)
        top = 0
        stack[0] = 0
        top = 1
        fx = 0.0
        fy = 0.0
        z = 0.0
        while top > 0:
            top -= 1
            node = stack[top]
            cnt = topo[node, 4]
            if cnt <= 0:
                continue
            mx = geo[node, 3] / cnt
            my = geo[node, 4] / cnt
            dx = x - mx
            dy = y - my
            d2 = dx * dx + dy * dy
            if topo[node, 0] < 0:
                c = cnt - 1 if leaf_of[i] == node else cnt
                if c > 0:
                    w = 1.0 / (1.0 + d2)
                    z += c * w
                    ww = c * w * w
                    fx += ww * dx
                    fy += ww * dy
                continue
            side = SIDE_FACTOR * geo[node, 2]
            inside = (abs(x - geo[node, 0]) <= geo[node, 2]) and (abs(y - geo[node, 1]) <= geo[node, 2])
            if (not inside) and side * side < theta * theta * d2:
                w = 1.0 / (1.0 + d2)
                z += cnt * w
                ww = cnt * w * w
                fx += ww * dx
                fy += ww * dy
            else:
                for q in range(4):
                    ch = topo[node, q]
                    if topo[ch, 4] > 0:
                        stack[top] = ch
                        top += 1
        rep[i, 0] = fx
        rep[i, 1] = fy
        zrow[i] = z
    return rep, zrow
