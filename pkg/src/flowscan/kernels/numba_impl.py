"""Numba-compiled kernels. Same contracts as numpy_impl."""

import numpy as np
from numba import njit


@njit(cache=True)
def bilinear_gather(image, fi, fj):
    h, w = image.shape
    n = fi.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for k in range(n):
        i0 = int(np.floor(fi[k]))
        j0 = int(np.floor(fj[k]))
        di = fi[k] - i0
        dj = fj[k] - j0
        acc = 0.0
        for oi in range(2):
            wi = (1.0 - di) if oi == 0 else di
            ii = i0 + oi
            if ii < 0 or ii >= h:
                continue
            for oj in range(2):
                wj = (1.0 - dj) if oj == 0 else dj
                jj = j0 + oj
                if jj < 0 or jj >= w:
                    continue
                acc += wi * wj * image[ii, jj]
        out[k] = acc
    return out


@njit(cache=True)
def line_gram(dev):
    n_s, n_r, n_gamma = dev.shape
    gram = np.zeros((n_gamma, n_s, n_s), dtype=np.float64)
    for j in range(n_gamma):
        for s in range(n_s):
            for t in range(s, n_s):
                acc = 0.0
                for d in range(n_r):
                    acc += dev[s, d, j] * dev[t, d, j]
                gram[j, s, t] = acc
                gram[j, t, s] = acc
    return gram


@njit(cache=True)
def _logdet_chol_small(mat):
    # In-place Cholesky log-determinant of a small SPD matrix.
    n = mat.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(i, n):
            s = mat[i, j]
            for k in range(i):
                s -= mat[i, k] * mat[j, k]
            if i == j:
                if s <= 0.0:
                    return -np.inf
                mat[i, i] = np.sqrt(s)
                acc += np.log(mat[i, i])
            else:
                mat[j, i] = s / mat[i, i]
    return 2.0 * acc


@njit(cache=True)
def candidate_gram_logdet(gram, cands, scale, n_r):
    n_s = gram.shape[1]
    s_count, l = cands.shape
    out = np.empty(s_count, dtype=np.float64)
    base = n_r * l * np.log(scale)
    inv = 1.0 / (scale * n_s)
    small = np.empty((n_s, n_s), dtype=np.float64)
    for c in range(s_count):
        for s in range(n_s):
            for t in range(n_s):
                small[s, t] = 1.0 if s == t else 0.0
        for p in range(l):
            j = cands[c, p]
            for s in range(n_s):
                for t in range(n_s):
                    small[s, t] += gram[j, s, t] * inv
        out[c] = base + _logdet_chol_small(small)
    return out


@njit(cache=True)
def select_max_sum_with_exclusion(scores, l, radius):
    n = scores.shape[0]
    gap = radius + 1
    neg = -np.inf
    g = np.full((n + gap + 1, l + 1), neg)
    for i in range(n + gap + 1):
        g[i, 0] = 0.0
    for i in range(n - 1, -1, -1):
        nxt = min(i + gap, n)
        for k in range(1, l + 1):
            take = scores[i] + g[nxt, k - 1]
            skip = g[i + 1, k]
            g[i, k] = take if take >= skip else skip
    out = np.full(l, -1, dtype=np.int64)
    if not np.isfinite(g[0, l]):
        return out
    i = 0
    k = l
    pos = 0
    while k > 0:
        nxt = min(i + gap, n)
        if scores[i] + g[nxt, k - 1] >= g[i + 1, k]:
            out[pos] = i
            pos += 1
            k -= 1
            i = nxt
        else:
            i += 1
    return out


@njit(cache=True)
def ellipse_field(canvas, cy, cx, a, b, cos_t, sin_t, wall_w, wall_amp, fill_amp):
    h, w = canvas.shape
    for y in range(h):
        dy = y - cy
        for x in range(w):
            dx = x - cx
            xr = (cos_t * dx + sin_t * dy) / a
            yr = (-sin_t * dx + cos_t * dy) / b
            d = np.sqrt(xr * xr + yr * yr)
            rd = (d - 1.0) / wall_w
            canvas[y, x] += wall_amp * np.exp(-rd * rd) + fill_amp * np.exp(-2.0 * d * d)
    return canvas
