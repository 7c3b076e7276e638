"""Independent oracles shared by the test modules."""

import numpy as np


def eer_bruteforce(pos, neg):
    """O(n^2) threshold sweep written without any vectorised search.

    Scans every candidate threshold, counts errors with explicit loops and
    interpolates linearly where FAR - FRR changes sign.
    """
    pos, neg = list(map(float, pos)), list(map(float, neg))
    cands = sorted(set(pos) | set(neg))
    thr = [-np.inf] + cands + [np.inf]
    pts = []
    for t in thr:
        frr = sum(1 for p in pos if p < t) / len(pos)
        far = sum(1 for n in neg if n >= t) / len(neg)
        pts.append((t, frr, far))
    for j in range(len(pts)):
        t, frr, far = pts[j]
        if far - frr == 0:
            return frr
        if far - frr < 0:
            _, frr0, far0 = pts[j - 1]
            d0, d1 = far0 - frr0, far - frr
            a = d0 / (d0 - d1)
            return frr0 + a * (frr - frr0)
    raise AssertionError("sweep never crossed")


def numeric_grad(f, x, eps=1e-4):
    """Central finite differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f(x)
        x[i] = old - eps
        lo = f(x)
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b)) / scale)


def lfcc_oracle(x, sr, n_filters=20, n_ceps=20, fft=1024, frame_ms=20, hop_ms=10, f_max_frac=0.25):
    """Straight-line LFCC: explicit loops for framing, DFT power, triangles, DCT-II and deltas."""
    frame = int(round(frame_ms * sr / 1000))
    hop = int(round(hop_ms * sr / 1000))
    n = np.arange(frame)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * n / frame)
    f_max = f_max_frac * sr
    edges = [f_max * i / (n_filters + 1) for i in range(n_filters + 2)]
    freqs = [k * sr / fft for k in range(fft // 2 + 1)]
    fb = np.zeros((n_filters, fft // 2 + 1))
    for m in range(n_filters):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        for k, f in enumerate(freqs):
            if lo < f < hi:
                fb[m, k] = (f - lo) / (c - lo) if f <= c else (hi - f) / (hi - c)
    rows = []
    t = 0
    while t * hop + frame <= len(x):
        seg = np.zeros(fft)
        seg[:frame] = x[t * hop:t * hop + frame] * win
        spec = np.fft.rfft(seg)
        power = spec.real ** 2 + spec.imag ** 2
        e = np.log(np.maximum(fb @ power, 1e-9))
        c = np.zeros(n_ceps)
        for q in range(n_ceps):
            s = sum(e[m] * np.cos(np.pi * q * (2 * m + 1) / (2 * n_filters)) for m in range(n_filters))
            c[q] = s * (np.sqrt(1 / n_filters) if q == 0 else np.sqrt(2 / n_filters))
        rows.append(c)
        t += 1
    static = np.array(rows)

    def delta(f):
        T = f.shape[0]
        out = np.zeros_like(f)
        for i in range(T):
            acc = 0.0
            for k in (1, 2):
                acc = acc + k * (f[min(i + k, T - 1)] - f[max(i - k, 0)])
            out[i] = acc / 10.0
        return out

    d1 = delta(static)
    return np.concatenate([static, d1, delta(d1)], axis=1)


def tone(freq, sr, seconds, amp=0.5, phase=0.0):
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)
