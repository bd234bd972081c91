"""Vectorized numpy reference implementations of the hot kernels."""

import numpy as np


def bilinear_gather(image, fi, fj):
    """Sample `image` at fractional coordinates (fi, fj), zero outside.

    Each output value is the bilinear combination of the four surrounding
    pixels; taps falling outside the image contribute zero.
    """
    h, w = image.shape
    i0 = np.floor(fi).astype(np.int64)
    j0 = np.floor(fj).astype(np.int64)
    di = fi - i0
    dj = fj - j0

    out = np.zeros(fi.shape[0], dtype=np.float64)
    for oi, oj, wt in (
        (0, 0, (1.0 - di) * (1.0 - dj)),
        (0, 1, (1.0 - di) * dj),
        (1, 0, di * (1.0 - dj)),
        (1, 1, di * dj),
    ):
        ii = i0 + oi
        jj = j0 + oj
        ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
        vals = np.zeros_like(out)
        vals[ok] = image[ii[ok], jj[ok]]
        out += wt * vals
    return out


def line_gram(dev):
    """Per-column Gram blocks of an ensemble deviation tensor.

    dev has shape (n_s, n_r, n_gamma); the result G has shape
    (n_gamma, n_s, n_s) with G[j, s, t] = sum_d dev[s, d, j] * dev[t, d, j].
    """
    return np.einsum("sdj,tdj->jst", dev, dev, optimize=True)


def candidate_gram_logdet(gram, cands, scale, n_r):
    """Log-determinant scores for candidate line sets.

    For a candidate with columns L the predicted observation covariance is
    (1/n_s) D D^T + scale*I over M = n_r*|L| pixels, where D stacks the
    per-sample deviations of those columns. Its log-determinant equals

        M*log(scale) + logdet(I_{n_s} + sum_{j in L} gram[j] / (scale*n_s))

    by the Weinstein-Aronszajn identity, which is what this computes.
    Requires scale > 0.
    """
    n_s = gram.shape[1]
    cands = np.asarray(cands, dtype=np.int64)
    s_count, l = cands.shape
    gsum = gram[cands.reshape(-1)].reshape(s_count, l, n_s, n_s).sum(axis=1)
    small = np.eye(n_s)[None, :, :] + gsum / (scale * n_s)
    sign, logdet = np.linalg.slogdet(small)
    if np.any(sign <= 0):
        # small = I + PSD/c is PD in exact arithmetic; guard fp corner cases
        logdet = np.where(sign <= 0, -np.inf, logdet)
    return n_r * l * np.log(scale) + logdet


def select_max_sum_with_exclusion(scores, l, radius):
    """Exact maximizer of sum(scores[S]) over |S| = l with min index gap > radius.

    Returns the lexicographically smallest optimal index set (ascending).
    Returns an array whose first element is -1 when infeasible.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    gap = radius + 1
    neg = -np.inf
    # g[i, k] = best sum achievable from items i..n-1 selecting k items
    g = np.full((n + gap + 1, l + 1), neg)
    g[:, 0] = 0.0
    for i in range(n - 1, -1, -1):
        nxt = min(i + gap, n)
        for k in range(1, l + 1):
            take = scores[i] + g[nxt, k - 1]
            skip = g[i + 1, k]
            g[i, k] = take if take >= skip else skip
    out = np.full(l, -1, dtype=np.int64)
    if not np.isfinite(g[0, l]):
        return out
    i, k = 0, l
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


def ellipse_field(canvas, cy, cx, a, b, cos_t, sin_t, wall_w, wall_amp, fill_amp):
    """Accumulate a soft elliptical ring plus interior fill into `canvas`."""
    h, w = canvas.shape
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - cy
    dx = xx - cx
    xr = (cos_t * dx + sin_t * dy) / a
    yr = (-sin_t * dx + cos_t * dy) / b
    d = np.sqrt(xr * xr + yr * yr)
    canvas += wall_amp * np.exp(-(((d - 1.0) / wall_w) ** 2))
    canvas += fill_amp * np.exp(-2.0 * d * d)
    return canvas
