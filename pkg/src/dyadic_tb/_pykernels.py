"""NumPy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used when
the extension is unavailable or ``DYADIC_TB_PURE_PYTHON`` is set.
"""
import math

import numpy as np


def _box_sums(prefix, lo, hi):
    # prefix has a leading zero row/col; lo/hi are clipped per-axis index arrays
    if prefix.ndim == 1:
        return prefix[hi[0]] - prefix[lo[0]]
    a0, b0 = lo[0][:, None], hi[0][:, None]
    a1, b1 = lo[1][None, :], hi[1][None, :]
    return prefix[b0, b1] - prefix[a0, b1] - prefix[b0, a1] + prefix[a0, a1]


def maximal_function(absf, n, L):
    """Max of |f|-averages over dyadic cubes and their concentric doubles.

    ``absf`` is a float array of shape ``(2**L,) * n``. Doubles of generation
    ``k >= 1`` are rasterized to the smallest covering box of finest cells; the
    average divides by the full raster size (cells outside the root count as 0).
    """
    absf = np.ascontiguousarray(absf, dtype=np.float64)
    side = 1 << L
    prefix = np.zeros(tuple(side + 1 for _ in range(n)))
    prefix[(slice(1, None),) * n] = absf.cumsum(axis=0).cumsum(axis=1) if n == 2 else absf.cumsum()
    out = absf.copy()
    cells = np.arange(side)
    for k in range(L + 1):
        g = 1 << k
        s = 1 << (L - k)
        idx = np.arange(g)
        lo = [np.clip(idx * s, 0, side)] * n
        hi = [np.clip((idx + 1) * s, 0, side)] * n
        dy = _box_sums(prefix, lo, hi) / float(s ** n)
        coarse = cells // s
        if n == 1:
            out = np.maximum(out, dy[coarse])
        else:
            out = np.maximum(out, dy[coarse[:, None], coarse[None, :]])
        if k == 0:
            continue
        e = math.ceil(s / 2)
        lo = [np.clip(idx * s - e, 0, side)] * n
        hi = [np.clip((idx + 1) * s + e, 0, side)] * n
        dbl = _box_sums(prefix, lo, hi) / float((s + 2 * e) ** n)
        # per axis: which doubles contain each cell coordinate
        per_axis = []
        for off in (-1, 0, 1):
            cand = coarse + off
            ok = (cand >= 0) & (cand < g) & (cand * s - e <= cells) & (cells < (cand + 1) * s + e)
            per_axis.append((np.clip(cand, 0, g - 1), ok))
        if n == 1:
            for cand, ok in per_axis:
                out = np.maximum(out, np.where(ok, dbl[cand], 0.0))
        else:
            for c0, ok0 in per_axis:
                for c1, ok1 in per_axis:
                    val = dbl[c0[:, None], c1[None, :]]
                    out = np.maximum(out, np.where(ok0[:, None] & ok1[None, :], val, 0.0))
    return out


def _quadrature(n, L, rule):
    h = 1.0 / (1 << L)
    if rule == "midpoint":
        offs1, w1 = np.array([0.5]), np.array([1.0])
    elif rule == "gauss2":
        d = 0.5 / math.sqrt(3.0)
        offs1, w1 = np.array([0.5 - d, 0.5 + d]), np.array([0.5, 0.5])
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    side = 1 << L
    base = np.arange(side) * h
    if n == 1:
        pts = (base[:, None] + offs1[None, :] * h)[:, :, None]
        return pts, w1
    g0, g1 = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    o0, o1 = np.meshgrid(offs1, offs1, indexing="ij")
    p0 = (g0.ravel()[:, None] + o0.ravel()[None, :]) * h
    p1 = (g1.ravel()[:, None] + o1.ravel()[None, :]) * h
    w = (w1[:, None] * w1[None, :]).ravel()
    return np.stack([p0, p1], axis=-1), w


def _named_kernel(name, x, y, tau, component):
    z = x - y
    if name == "truncated_hilbert":
        t = z[..., 0]
        return t / (t * t + tau * tau)
    if name == "truncated_riesz":
        r2 = (z * z).sum(axis=-1)
        return z[..., component] / (r2 + tau * tau) ** 1.5
    raise ValueError(f"no compiled evaluator for {name!r}")


def assemble_named(name, n, L, rule, tau, component):
    """Cell-pair averaged kernel matrix times cell volume, real float64 (N, N)."""
    pts, w = _quadrature(n, L, rule)
    vol = 2.0 ** (-n * L)
    N = pts.shape[0]
    out = np.zeros((N, N))
    for p, wp in enumerate(w):
        x = pts[:, p, :][:, None, :]
        for q, wq in enumerate(w):
            y = pts[:, q, :][None, :, :]
            out += (wp * wq) * _named_kernel(name, x, y, tau, component)
    return out * vol
