"""Independent reference implementations used as test oracles.

Plain Python loops over numpy scalars; nothing here touches the tape.
"""

import math

import numpy as np


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def matmul_loop(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def conv1d_loop(x, w, b, dilation=1):
    """Direct summation over an explicitly zero-padded input."""
    bsz, cin, t = x.shape
    cout, cin2, k = w.shape
    assert cin == cin2 and k % 2 == 1
    pad = (k - 1) * dilation // 2
    xp = np.zeros((bsz, cin, t + 2 * pad))
    xp[:, :, pad:pad + t] = x
    out = np.zeros((bsz, cout, t))
    for n in range(bsz):
        for o in range(cout):
            for tt in range(t):
                s = b[o]
                for c in range(cin):
                    for j in range(k):
                        s += w[o, c, j] * xp[n, c, tt + j * dilation]
                out[n, o, tt] = s
    return out


def gru_step_loop(x_t, h_prev, w, u, b):
    """One GRU step for a single sample, unit by unit.

    Gate columns are [update | reset | candidate]; the reset gate scales the
    previous state before the candidate's recurrent product.
    """
    d = len(x_t)
    hsz = len(h_prev)
    z = np.zeros(hsz)
    r = np.zeros(hsz)
    for j in range(hsz):
        az = b[j] + sum(x_t[i] * w[i, j] for i in range(d)) + sum(h_prev[i] * u[i, j] for i in range(hsz))
        ar = b[hsz + j] + sum(x_t[i] * w[i, hsz + j] for i in range(d)) + sum(
            h_prev[i] * u[i, hsz + j] for i in range(hsz))
        z[j] = sigmoid(az)
        r[j] = sigmoid(ar)
    h_new = np.zeros(hsz)
    for j in range(hsz):
        an = b[2 * hsz + j] + sum(x_t[i] * w[i, 2 * hsz + j] for i in range(d)) + sum(
            r[i] * h_prev[i] * u[i, 2 * hsz + j] for i in range(hsz))
        n = math.tanh(an)
        h_new[j] = (1.0 - z[j]) * h_prev[j] + z[j] * n
    return h_new


def gru_loop(x, w, u, b, h0=None):
    bsz, t, _ = x.shape
    hsz = u.shape[0]
    out = np.zeros((bsz, t, hsz))
    for n in range(bsz):
        h = np.zeros(hsz) if h0 is None else np.array(h0[n], dtype=float)
        for s in range(t):
            h = gru_step_loop(x[n, s], h, w, u, b)
            out[n, s] = h
    return out


def senet_loop(x, w1, b1, w2, b2):
    """Pool over time, two kernel-3 convs along the channel axis, sigmoid gate."""
    bsz, c, t = x.shape
    out = np.zeros_like(x)
    for n in range(bsz):
        pooled = np.array([sum(x[n, ch, :]) / t for ch in range(c)])
        hid = conv1d_loop(pooled.reshape(1, 1, c), w1, b1)
        hid = np.maximum(hid, 0.0)
        z = conv1d_loop(hid, w2, b2)[0, 0]
        for ch in range(c):
            g = sigmoid(z[ch])
            out[n, ch, :] = g * x[n, ch, :]
    return out


def multiscale_loop(x, params, prefix, groups):
    """Literal cascade: O1 = C1, O2 = a(C2), Oi = a(Ci + O_{i-1})."""
    h = conv1d_loop(x, params[f"{prefix}.in.w"], params[f"{prefix}.in.b"])
    g = h.shape[1] // groups
    chunks = [h[:, i * g:(i + 1) * g] for i in range(groups)]
    outs = [chunks[0]]
    for i in range(2, groups + 1):
        inp = chunks[i - 1] if i == 2 else chunks[i - 1] + outs[-1]
        outs.append(conv1d_loop(inp, params[f"{prefix}.alpha{i}.w"], params[f"{prefix}.alpha{i}.b"], dilation=2))
    merged = np.concatenate(outs, axis=1)
    return conv1d_loop(merged, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])


def split_interact_loop(x, params, groups):
    bsz, c, w = x.shape
    even = np.stack([x[:, :, i] for i in range(0, w, 2)], axis=2)
    odd = np.stack([x[:, :, i] for i in range(1, w, 2)], axis=2)
    even_new = odd + multiscale_loop(even, params, "even", groups)
    odd_new = even + multiscale_loop(odd, params, "odd", groups)
    out = np.zeros_like(x)
    for i in range(w // 2):
        out[:, :, 2 * i] = even_new[:, :, i]
        out[:, :, 2 * i + 1] = odd_new[:, :, i]
    return out


def adam_scalar(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        trace.append(p)
    return trace


def point_adjust_loop(pred, truth):
    pred = list(pred)
    n = len(truth)
    i = 0
    while i < n:
        if truth[i] == 1:
            j = i
            while j < n and truth[j] == 1:
                j += 1
            if any(pred[i:j]):
                for q in range(i, j):
                    pred[q] = 1
            i = j
        else:
            i += 1
    return pred


def f1_counts(pred, truth):
    tp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 1)
    fp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 0)
    fn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 1)
    return tp, fp, fn


def best_f1_enumerate(scores, truth):
    """Best point-adjusted F1 over every distinct prediction ``score > tau``."""
    uniq = sorted(set(float(s) for s in scores))
    taus = [uniq[0] - 1.0] + uniq
    best = (-1.0, -1.0)
    for tau in taus:
        pred = point_adjust_loop([1 if s > tau else 0 for s in scores], truth)
        tp, fp, fn = f1_counts(pred, truth)
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        prec = tp / (tp + fp) if tp + fp else 0.0
        best = max(best, (f1, prec))
    return best


def best_f1_matrix(scores, truth):
    """Exhaustive search evaluating every candidate prediction vector explicitly.

    Candidates are one value below the minimum plus every unique score; each
    row of the prediction matrix is point-adjusted segment by segment.
    Returns ``(f1, precision, tau)`` with ties broken toward precision, then
    the larger threshold.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    uniq = np.unique(scores)
    taus = np.concatenate([[np.nextafter(uniq[0], -np.inf)], uniq])
    pred = scores[None, :] > taus[:, None]
    i = 0
    n = len(truth)
    while i < n:
        if truth[i]:
            j = i
            while j < n and truth[j]:
                j += 1
            hit = pred[:, i:j].any(axis=1)
            pred[hit, i:j] = True
            i = j
        else:
            i += 1
    tp = (pred & truth).sum(axis=1)
    fp = (pred & ~truth).sum(axis=1)
    fn = (~pred & truth).sum(axis=1)
    best = None
    for c in range(len(taus)):
        f1 = 2 * tp[c] / (2 * tp[c] + fp[c] + fn[c]) if tp[c] else 0.0
        prec = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        key = (f1, prec, taus[c])
        if best is None or key > best:
            best = key
    return best
