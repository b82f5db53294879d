"""Slow, independent reference implementations used by the tests.

Nothing here imports the code under test except to read weights out of a
model; every computation is redone with explicit loops or plain numpy.
"""
from fractions import Fraction

import numpy as np


def conv2d(x, weight, bias, stride=1, pad=1):
    """Direct convolution (cross-correlation) of an (h, w, cin) array."""
    x = np.asarray(x, dtype=np.float64)
    cout, cin, k, _ = weight.shape
    h, w, _ = x.shape
    xp = np.zeros((h + 2 * pad, w + 2 * pad, cin))
    xp[pad:pad + h, pad:pad + w] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            window = xp[i * stride:i * stride + k, j * stride:j * stride + k, :]  # (k, k, cin)
            for o in range(cout):
                out[i, j, o] = np.sum(window * weight[o].transpose(1, 2, 0)) + bias[o]
    return out


def relu(a):
    return np.maximum(a, 0.0)


def sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def _np(t):
    return t.detach().cpu().double().numpy()


def content_encoder(enc, x):
    convs = [m for m in enc.net if hasattr(m, "weight")]
    h = x
    for i, conv in enumerate(convs):
        h = conv2d(h, _np(conv.weight), _np(conv.bias), 1, conv.padding[0])
        h = np.tanh(h) if i == len(convs) - 1 else relu(h)
    return h


def style_encoder(enc, x):
    h = x
    for conv in [m for m in enc.net if hasattr(m, "weight")]:
        h = relu(conv2d(h, _np(conv.weight), _np(conv.bias), 2, conv.padding[0]))
    return h.reshape(-1, h.shape[-1]).mean(axis=0)


def adain(z, gamma, eta, eps):
    """Per-channel standardisation of an (h, w, c) array then affine modulation."""
    out = np.empty_like(z, dtype=np.float64)
    for ch in range(z.shape[-1]):
        v = z[..., ch]
        n = v.size
        mu = sum(v.ravel()) / n
        sd = np.sqrt(sum((t - mu) ** 2 for t in v.ravel()) / n)
        out[..., ch] = gamma[ch] * (v - mu) / (sd + eps) + eta[ch]
    return out


def mlp(layers, s):
    lin = [m for m in layers if hasattr(m, "weight")]
    h = s
    for i, l in enumerate(lin):
        h = _np(l.weight) @ h + _np(l.bias)
        if i < len(lin) - 1:
            h = relu(h)
    return h


def decoder(dec, content, style):
    width = dec.width
    params = mlp(dec.mlp, style)
    g1, e1, g2, e2 = (params[i * width:(i + 1) * width] for i in range(4))
    h = content
    for block, g, e in ((dec.block1, g1, e1), (dec.block2, g2, e2)):
        a = conv2d(h, _np(block.conv1.weight), _np(block.conv1.bias))
        a = relu(adain(a, g, e, dec.epsilon))
        a = relu(conv2d(a, _np(block.conv2.weight), _np(block.conv2.bias)))
        h = h + a
    return sigmoid(conv2d(h, _np(dec.out.weight), _np(dec.out.bias)))


def loop_mean(a):
    a = np.asarray(a, dtype=np.float64)
    total = 0.0
    for v in a.ravel():
        total += v
    return total / a.size


def loop_mse(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    total = 0.0
    for u, v in zip(a.ravel(), b.ravel()):
        total += (u - v) ** 2
    return total / a.size


def loop_alignment(c_x, c_y_t, c_x_t, c_y, p_c, m=4.0):
    """Alignment loss with explicit loops over (h, w, c) codes and an (h, w) mask."""
    h, w, c = c_x.shape
    n = h * w * c
    t1 = t2 = t3 = t4 = 0.0
    for i in range(h):
        for j in range(w):
            pc = float(p_c[i, j])
            pu = 1.0 - pc
            for k in range(c):
                d1 = (c_x[i, j, k] - c_y_t[i, j, k]) ** 2
                d2 = (c_x_t[i, j, k] - c_y[i, j, k]) ** 2
                t1 += d1 * pu
                t2 += d2 * pu
                t3 += (1 - d1 / m) * pc
                t4 += (1 - d2 / m) * pc
    return (t1 + t2 + t3 + t4) / n


def otsu_exhaustive(di):
    """Try all 255 splits of the 256-bin histogram with exact rational arithmetic.

    Returns the threshold in DI units (upper edge of the last lower-class bin)
    for the first split of maximal between-class variance.
    """
    di = np.asarray(di, dtype=np.float64).ravel()
    lo, hi = di.min(), di.max()
    if hi <= lo:
        return lo
    levels = np.minimum(np.floor((di - lo) / (hi - lo) * 256).astype(np.int64), 255)
    n = levels.size
    best, best_k = Fraction(-1), None
    for k in range(255):
        lower = levels <= k
        n0 = int(lower.sum())
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            var = Fraction(0)
        else:
            mu0 = Fraction(int(levels[lower].sum()), n0)
            mu1 = Fraction(int(levels[~lower].sum()), n1)
            var = Fraction(n0, n) * Fraction(n1, n) * (mu0 - mu1) ** 2
        if var > best:
            best, best_k = var, k
    return lo + (best_k + 1) / 256 * (hi - lo)


def pair_counting_auc(di, gt):
    di, gt = np.asarray(di).ravel(), np.asarray(gt).ravel()
    pos, neg = di[gt == 1], di[gt == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def kid_loops(r, t):
    r, t = np.asarray(r, dtype=np.float64), np.asarray(t, dtype=np.float64)
    d = r.shape[1]

    def k(a, b):
        return (sum(a[i] * b[i] for i in range(d)) / d + 1.0) ** 3

    e_rr = sum(k(a, b) for a in r for b in r) / len(r) ** 2
    e_tt = sum(k(a, b) for a in t for b in t) / len(t) ** 2
    e_rt = sum(k(a, b) for a in r for b in t) / (len(r) * len(t))
    return e_rr + e_tt - 2 * e_rt


def kappa(tp, fp, tn, fn):
    n = tp + fp + tn + fn
    po = (tp + tn) / n
    yes = (tp + fp) / n * (tp + fn) / n
    no = (tn + fn) / n * (tn + fp) / n
    return (po - (yes + no)) / (1 - (yes + no))
