"""Independent brute-force reference implementations used only by tests.

These deliberately avoid the vectorized paths (and the library primitives)
used by the package: plain Python loops, explicit distance searches, explicit
convolution. Slow but unambiguous.
"""

import math

import numpy as np


def oracle_alpha_bar(kind, T, beta_start, beta_end):
    """Straight product loop over the beta table."""
    prod = 1.0
    out = []
    for t in range(T):
        if T == 1:
            frac = 0.0
        else:
            frac = t / (T - 1)
        if kind == "linear":
            beta = beta_start + (beta_end - beta_start) * frac
        else:
            sq = math.sqrt(beta_start) + (math.sqrt(beta_end) - math.sqrt(beta_start)) * frac
            beta = sq * sq
        prod *= 1.0 - beta
        out.append(prod)
    return out


def oracle_mae(P, G):
    total = 0.0
    h, w = P.shape
    for i in range(h):
        for j in range(w):
            total += abs(P[i, j] - (1.0 if G[i, j] else 0.0))
    return total / (h * w)


def oracle_binarize(p, tau):
    # level 0 keeps strictly positive responses
    return p > 0.0 if tau == 0.0 else p >= tau


def oracle_f_max(P, G, beta2=0.3):
    h, w = P.shape
    gt_count = int(np.sum(G))
    if gt_count == 0:
        return 0.0
    best = 0.0
    for k in range(256):
        tau = k / 255.0
        tp = fp = fn = 0
        for i in range(h):
            for j in range(w):
                pred = oracle_binarize(P[i, j], tau)
                if pred and G[i, j]:
                    tp += 1
                elif pred:
                    fp += 1
                elif G[i, j]:
                    fn += 1
        if tp + fp == 0:
            prec = 0.0
        else:
            prec = tp / (tp + fp)
        rec = tp / gt_count
        denom = beta2 * prec + rec
        f = 0.0 if denom == 0 else (1 + beta2) * prec * rec / denom
        best = max(best, f)
    return best


def _oracle_nearest_fg(G):
    """Brute-force nearest-foreground search: distances and source indices."""
    h, w = G.shape
    fg = [(i, j) for i in range(h) for j in range(w) if G[i, j]]
    dist = np.zeros((h, w))
    src = np.zeros((h, w, 2), dtype=int)
    for i in range(h):
        for j in range(w):
            if G[i, j]:
                src[i, j] = (i, j)
                continue
            best_d, best_ij = None, None
            for (fi, fj) in fg:
                d = math.hypot(i - fi, j - fj)
                if best_d is None or d < best_d:
                    best_d, best_ij = d, (fi, fj)
            dist[i, j] = best_d
            src[i, j] = best_ij
    return dist, src


def _oracle_gauss_filter(A, size=7, sigma=5.0):
    """Explicit zero-padded convolution with a normalized Gaussian kernel."""
    half = size // 2
    kernel = np.zeros((size, size))
    for a in range(size):
        for b in range(size):
            kernel[a, b] = math.exp(-((a - half) ** 2 + (b - half) ** 2) / (2 * sigma**2))
    kernel /= kernel.sum()
    h, w = A.shape
    out = np.zeros_like(A)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(size):
                for b in range(size):
                    ii, jj = i + a - half, j + b - half
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += kernel[a, b] * A[ii, jj]
            out[i, j] = acc
    return out


def oracle_f_weighted(P, G):
    h, w = P.shape
    if not np.any(G):
        return 0.0
    E = np.abs(P - G.astype(float))
    dist, src = _oracle_nearest_fg(G)
    Et = E.copy()
    for i in range(h):
        for j in range(w):
            if not G[i, j]:
                si, sj = src[i, j]
                Et[i, j] = E[si, sj]
    EA = _oracle_gauss_filter(Et)
    min_e_ea = E.copy()
    for i in range(h):
        for j in range(w):
            if G[i, j] and EA[i, j] < E[i, j]:
                min_e_ea[i, j] = EA[i, j]
    B = np.ones((h, w))
    for i in range(h):
        for j in range(w):
            if not G[i, j]:
                B[i, j] = 2.0 - math.exp(math.log(0.5) / 5.0 * dist[i, j])
    Ew = min_e_ea * B
    fg_vals = [Ew[i, j] for i in range(h) for j in range(w) if G[i, j]]
    bg_vals = [Ew[i, j] for i in range(h) for j in range(w) if not G[i, j]]
    tpw = len(fg_vals) - sum(fg_vals)
    fpw = sum(bg_vals)
    rec = 1.0 - sum(fg_vals) / len(fg_vals)
    prec = tpw / (1e-20 + tpw + fpw)
    return 2.0 * rec * prec / (1e-20 + rec + prec)


def _oracle_ssim(pred, gt):
    if pred.size == 0:
        return 0.0
    n = pred.size
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + 1e-20)
    sy = ((gt - y) ** 2).sum() / (n - 1 + 1e-20)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + 1e-20)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + 1e-20)
    return 1.0 if b == 0 else 0.0


def oracle_s_measure(P, G, alpha=0.5):
    y = G.mean()
    if y == 0:
        return 1.0 - P.mean()
    if y == 1:
        return float(P.mean())

    # object term
    fg_vals = P[G]
    bg_vals = 1.0 - P[~G]
    def obj(vals):
        if vals.size == 0:
            return 0.0
        x, sx = vals.mean(), vals.std()
        return 2.0 * x / (x * x + 1.0 + sx + 1e-20)
    mu = G.mean()
    s_obj = mu * obj(fg_vals) + (1 - mu) * obj(bg_vals)

    # region term: split at rounded GT centroid
    rows, cols = G.shape
    total = G.sum()
    X = int(round(sum(G[i, j] * j for i in range(rows) for j in range(cols)) / total))
    Y = int(round(sum(G[i, j] * i for i in range(rows) for j in range(cols)) / total))
    area = rows * cols
    gd = G.astype(float)
    w1 = X * Y / area
    w2 = (cols - X) * Y / area
    w3 = X * (rows - Y) / area
    w4 = 1 - w1 - w2 - w3
    s_reg = (
        w1 * _oracle_ssim(P[:Y, :X], gd[:Y, :X])
        + w2 * _oracle_ssim(P[:Y, X:], gd[:Y, X:])
        + w3 * _oracle_ssim(P[Y:, :X], gd[Y:, :X])
        + w4 * _oracle_ssim(P[Y:, X:], gd[Y:, X:])
    )
    return max(alpha * s_obj + (1 - alpha) * s_reg, 0.0)


def oracle_e_measure(P, G):
    h, w = P.shape
    gd = G.astype(float)
    g_mean = gd.mean()
    scores = []
    for k in range(256):
        tau = k / 255.0
        binp = np.array(
            [[1.0 if oracle_binarize(P[i, j], tau) else 0.0 for j in range(w)] for i in range(h)]
        )
        if g_mean == 0.0:
            enhanced = 1.0 - binp
        elif g_mean == 1.0:
            enhanced = binp
        else:
            phi_g = gd - g_mean
            phi_p = binp - binp.mean()
            enhanced = np.zeros((h, w))
            for i in range(h):
                for j in range(w):
                    align = (
                        2.0
                        * phi_g[i, j]
                        * phi_p[i, j]
                        / (phi_g[i, j] ** 2 + phi_p[i, j] ** 2 + 1e-20)
                    )
                    enhanced[i, j] = (align + 1.0) ** 2 / 4.0
        scores.append(enhanced.mean())
    return float(np.mean(scores))


def oracle_attention(q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Dense multi-head attention computed with explicit per-head loops."""
    n, c = q_in.shape
    dk = c // heads
    q = q_in @ wq.T + bq
    k = kv_in @ wk.T + bk
    v = kv_in @ wv.T + bv
    out = np.zeros((n, c))
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        scores = qh @ kh.T / math.sqrt(dk)
        scores = scores - scores.max(axis=1, keepdims=True)
        weights = np.exp(scores)
        weights /= weights.sum(axis=1, keepdims=True)
        out[:, sl] = weights @ vh
    return out @ wo.T + bo
