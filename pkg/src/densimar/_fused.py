"""Fused numba kernels for the training hot loop.

Same maths as :mod:`densimar.field` (the reference implementation used for
gradient checks), specialised to one pass per sample so that a training
iteration does not materialise ``(n, L, 4, F)`` intermediates. Samples are
processed in order and accumulated into float64 buffers, so results are
deterministic.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .field import HASH_PRIMES, FieldParams

_P1 = HASH_PRIMES[1]


@numba.njit(cache=True, inline="always")
def _cell(x0, x1, n_res, is_dense, off, tmask):
    """Row of the lower-left corner, the row steps to the other corners and the weights' fractions."""
    px = min(max(x0, 0.0), 1.0) * n_res
    py = min(max(x1, 0.0), 1.0) * n_res
    ix = min(int(px), n_res - 1)  # px >= 0, so truncation is floor
    iy = min(int(py), n_res - 1)
    fx = px - ix
    fy = py - iy
    if is_dense:
        r00 = off + ix + iy * (n_res + 1)
        return r00, r00 + 1, r00 + n_res + 1, r00 + n_res + 2, fx, fy
    h0 = iy * _P1
    h1 = h0 + _P1
    return (off + ((ix ^ h0) & tmask), off + (((ix + 1) ^ h0) & tmask),
            off + ((ix ^ h1) & tmask), off + (((ix + 1) ^ h1) & tmask), fx, fy)


@numba.njit(cache=True, fastmath=True)
def _forward(x, res, dense, level_off, tmask, tables, w1, b1, w2, b2, feats, pre, z):
    n = x.shape[0]
    n_levels = res.shape[0]
    n_feat = tables.shape[1]
    d_in, hidden = w1.shape
    feat = np.empty(d_in, np.float32)
    acc = np.empty(hidden, np.float32)
    sigma = np.empty(n, np.float32)
    for k in range(n):
        for level in range(n_levels):
            r0, r1, r2, r3, fx, fy = _cell(x[k, 0], x[k, 1], res[level], dense[level], level_off[level], tmask)
            w0 = (1.0 - fx) * (1.0 - fy)
            w1_ = fx * (1.0 - fy)
            w2_ = (1.0 - fx) * fy
            w3 = fx * fy
            for f in range(n_feat):
                feat[level * n_feat + f] = (w0 * tables[r0, f] + w1_ * tables[r1, f]
                                            + w2_ * tables[r2, f] + w3 * tables[r3, f])
        for h in range(hidden):
            acc[h] = b1[h]
        for i in range(d_in):
            fi = feat[i]
            for h in range(hidden):
                acc[h] += fi * w1[i, h]
        out = np.float32(b2[0])
        for h in range(hidden):
            pre[k, h] = acc[h]
            out += max(acc[h], np.float32(0.0)) * w2[h]
        for i in range(d_in):
            feats[k, i] = feat[i]
        z[k] = out
        sigma[k] = out if out > 0 else math.expm1(out)
    return sigma


@numba.njit(cache=True, fastmath=True)
def _backward(x, res, dense, level_off, tmask, w1, w2, feats, pre, z, upstream,
              g_tables, g_w1, g_b1, g_w2, g_b2):
    n = x.shape[0]
    n_levels = res.shape[0]
    n_feat = g_tables.shape[1]
    d_in, hidden = w1.shape
    d_pre = np.empty(hidden, np.float32)
    d_feat = np.empty(d_in, np.float32)
    # float32 partial sums over the batch, folded into the float64 outputs at the end
    a_w1 = np.zeros((d_in, hidden), np.float32)
    a_w2 = np.zeros(hidden, np.float32)
    a_b1 = np.zeros(hidden, np.float32)
    for k in range(n):
        dz = upstream[k] * (1.0 if z[k] > 0 else math.exp(z[k]))
        if dz == 0.0:
            continue
        g_b2[0] += dz
        dz32 = np.float32(dz)
        for h in range(hidden):
            p = pre[k, h]
            a_w2[h] += max(p, np.float32(0.0)) * dz32
            d_pre[h] = dz32 * w2[h] * np.float32(p > 0)
            a_b1[h] += d_pre[h]
        for i in range(d_in):
            fi = feats[k, i]
            s = np.float32(0.0)
            for h in range(hidden):
                a_w1[i, h] += fi * d_pre[h]
                s += w1[i, h] * d_pre[h]
            d_feat[i] = s
        for level in range(n_levels):
            r0, r1, r2, r3, fx, fy = _cell(x[k, 0], x[k, 1], res[level], dense[level], level_off[level], tmask)
            for f in range(n_feat):
                d = d_feat[level * n_feat + f]
                g_tables[r0, f] += (1.0 - fx) * (1.0 - fy) * d
                g_tables[r1, f] += fx * (1.0 - fy) * d
                g_tables[r2, f] += (1.0 - fx) * fy * d
                g_tables[r3, f] += fx * fy * d
    g_w1 += a_w1
    g_w2 += a_w2
    g_b1 += a_b1


@numba.njit(cache=True, fastmath=True)
def _adam(p, g, m, v, lr_t, beta1, beta2, c2, eps):
    p = p.ravel()
    g = g.ravel()
    m = m.ravel()
    v = v.ravel()
    for i in range(p.size):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        p[i] -= lr_t * m[i] / (math.sqrt(v[i] / c2) + eps)


class FusedField:
    """Training-time evaluator bound to one float32 parameter set."""

    def __init__(self, params: FieldParams, half_width: float):
        if params.w1.dtype != np.float32:
            raise TypeError("fused kernels expect float32 parameters")
        enc = params.encoder
        self.params = params
        self.half_width = half_width
        self.res = enc.resolutions()
        self.dense = enc.dense_levels()
        self.level_off = enc.level_offsets()[:-1].astype(np.int64)
        self.tmask = enc.table_size - 1
        self.grads = [np.zeros(a.shape, np.float64) for a in params.arrays()]

    def forward(self, points):
        x = ((np.asarray(points, dtype=np.float64) + self.half_width) / (2.0 * self.half_width))
        n = len(x)
        p = self.params
        feats = np.empty((n, p.w1.shape[0]), np.float32)
        pre = np.empty((n, p.w1.shape[1]), np.float32)
        z = np.empty(n, np.float32)
        sigma = _forward(x, self.res, self.dense, self.level_off, self.tmask,
                         p.tables, p.w1, p.b1, p.w2, p.b2, feats, pre, z)
        return sigma, (x, feats, pre, z)

    def backward(self, cache, upstream):
        x, feats, pre, z = cache
        for g in self.grads:
            g.fill(0.0)
        g_tables, g_w1, g_b1, g_w2, g_b2 = self.grads
        _backward(x, self.res, self.dense, self.level_off, self.tmask, self.params.w1, self.params.w2,
                  feats, pre, z, np.asarray(upstream, dtype=np.float64),
                  g_tables, g_w1, g_b1, g_w2, g_b2)
        return self.grads


def adam_update(param, grad, m, v, lr, beta1, beta2, step, eps):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    _adam(param, grad, m, v, lr / c1, beta1, beta2, c2, eps)
