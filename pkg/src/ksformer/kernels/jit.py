"""Numba-jitted kernel implementations.

Loops are arranged so the innermost axis is the contiguous channel axis,
which numba vectorizes well. Each output element is produced by exactly one
thread, so prange parallelism cannot change results beyond fastmath
reassociation within a single element's reduction.
"""

import numpy as np
from numba import njit, prange

BACKEND_NAME = "numba"

_JIT = dict(parallel=True, fastmath=True, cache=True)


@njit(**_JIT)
def conv2d_fwd(xpad, w, stride):
    b_n, hp, wp, ci = xpad.shape
    kh, kw, _, co = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.empty((b_n, ho, wo, co), dtype=np.float32)
    for b in prange(b_n):
        acc = np.empty(co, dtype=np.float32)
        for oy in range(ho):
            iy0 = oy * stride
            for ox in range(wo):
                ix0 = ox * stride
                acc[:] = 0.0
                for ky in range(kh):
                    for kx in range(kw):
                        for c_in in range(ci):
                            xv = xpad[b, iy0 + ky, ix0 + kx, c_in]
                            for c_out in range(co):
                                acc[c_out] += xv * w[ky, kx, c_in, c_out]
                out[b, oy, ox, :] = acc
    return out


@njit(**_JIT)
def conv2d_bwd_w(xpad, g, kh, kw, stride):
    b_n, ho, wo, co = g.shape
    ci = xpad.shape[3]
    gw = np.zeros((kh, kw, ci, co), dtype=np.float32)
    for tap in prange(kh * kw):
        ky = tap // kw
        kx = tap % kw
        for b in range(b_n):
            for oy in range(ho):
                iy = oy * stride + ky
                for ox in range(wo):
                    ix = ox * stride + kx
                    for c_in in range(ci):
                        xv = xpad[b, iy, ix, c_in]
                        for c_out in range(co):
                            gw[ky, kx, c_in, c_out] += xv * g[b, oy, ox, c_out]
    return gw


@njit(**_JIT)
def conv2d_bwd_x(g, w, stride, hp, wp):
    b_n, ho, wo, co = g.shape
    kh, kw, ci, _ = w.shape
    gxpad = np.zeros((b_n, hp, wp, ci), dtype=np.float32)
    for b in prange(b_n):
        for iy in range(hp):
            for ky in range(kh):
                oy = iy - ky
                if oy % stride != 0:
                    continue
                oy //= stride
                if oy < 0 or oy >= ho:
                    continue
                for ix in range(wp):
                    for kx in range(kw):
                        ox = ix - kx
                        if ox % stride != 0:
                            continue
                        ox //= stride
                        if ox < 0 or ox >= wo:
                            continue
                        for c_in in range(ci):
                            s = np.float32(0.0)
                            for c_out in range(co):
                                s += g[b, oy, ox, c_out] * w[ky, kx, c_in, c_out]
                            gxpad[b, iy, ix, c_in] += s
    return gxpad


@njit(cache=True)
def scatter_add_rows(dst, idx, src):
    n, f = src.shape
    for i in range(n):
        r = idx[i]
        for j in range(f):
            dst[r, j] += src[i, j]
    return dst
