"""Pure-numpy kernel implementations.

Convolutions are evaluated tap by tap: one BLAS matmul per kernel tap over
the strided input slice. This keeps memory flat (no im2col buffer) while
staying vectorized.

All kernels take pre-padded inputs; padding policy lives in the tensor layer.
"""

import numpy as np

BACKEND_NAME = "numpy"


def conv2d_fwd(xpad, w, stride):
    """Cross-correlate xpad [B,Hp,Wp,Ci] with w [kh,kw,Ci,Co] at the given stride."""
    kh, kw, _, _ = w.shape
    hp, wp = xpad.shape[1], xpad.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = None
    for ky in range(kh):
        for kx in range(kw):
            sl = xpad[:, ky : ky + stride * (ho - 1) + 1 : stride,
                      kx : kx + stride * (wo - 1) + 1 : stride, :]
            term = sl @ w[ky, kx]
            out = term if out is None else out + term
    return np.ascontiguousarray(out)


def conv2d_bwd_w(xpad, g, kh, kw, stride):
    """Weight gradient: correlate input slices with the output gradient."""
    ho, wo = g.shape[1], g.shape[2]
    ci = xpad.shape[3]
    co = g.shape[3]
    gw = np.empty((kh, kw, ci, co), dtype=np.float32)
    for ky in range(kh):
        for kx in range(kw):
            sl = xpad[:, ky : ky + stride * (ho - 1) + 1 : stride,
                      kx : kx + stride * (wo - 1) + 1 : stride, :]
            gw[ky, kx] = np.tensordot(sl, g, axes=([0, 1, 2], [0, 1, 2]))
    return gw


def conv2d_bwd_x(g, w, stride, hp, wp):
    """Input gradient, scattered back onto the padded input layout."""
    kh, kw, ci, _ = w.shape
    ho, wo = g.shape[1], g.shape[2]
    gxpad = np.zeros((g.shape[0], hp, wp, ci), dtype=np.float32)
    for ky in range(kh):
        for kx in range(kw):
            term = g @ w[ky, kx].T
            gxpad[:, ky : ky + stride * (ho - 1) + 1 : stride,
                  kx : kx + stride * (wo - 1) + 1 : stride, :] += term
    return gxpad


def scatter_add_rows(dst, idx, src):
    """dst[idx[i]] += src[i] with duplicate indices accumulating. In place."""
    np.add.at(dst, idx, src)
    return dst
