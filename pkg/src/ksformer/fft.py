"""Iterative radix-2 FFT over the trailing axes of an array stack.

Extents are restricted to powers of two; the butterflies are vectorized
across all leading axes, so transforming a [B,C,H,W] stack costs the same
numpy dispatch overhead as a single plane. Transforms run in complex128 and
the surrounding float32 code casts at the boundary, keeping round-trip error
far below the f32 tolerances used elsewhere.

Forward transforms are unnormalized; the inverse carries the 1/N factor.
"""

import numpy as np

from .errors import ParameterError

_bitrev_cache = {}


def is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def require_pow2(n, what="extent"):
    if not is_pow2(n):
        raise ParameterError(f"{what} must be a power of two, got {n}")


def _bitrev(n):
    perm = _bitrev_cache.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        perm = np.zeros(n, dtype=np.intp)
        for i in range(1, n):
            perm[i] = (perm[i >> 1] >> 1) | ((i & 1) << (bits - 1))
        _bitrev_cache[n] = perm
    return perm


def fft_lastaxis(a, inverse=False):
    """Radix-2 FFT along the last axis of a complex128 array stack."""
    n = a.shape[-1]
    require_pow2(n)
    a = np.asarray(a, dtype=np.complex128)[..., _bitrev(n)]
    sign = 1.0 if inverse else -1.0
    half = 1
    while half < n:
        step = half * 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / step)
        shaped = a.reshape(a.shape[:-1] + (n // step, step))
        even = shaped[..., :half]
        odd = shaped[..., half:] * tw
        a = np.concatenate((even + odd, even - odd), axis=-1).reshape(a.shape)
        half = step
    if inverse:
        a = a / n
    return a


def fft2(a):
    """Unnormalized 2-D DFT over the last two axes."""
    a = fft_lastaxis(a)
    a = fft_lastaxis(a.swapaxes(-1, -2))
    return np.ascontiguousarray(a.swapaxes(-1, -2))


def ifft2(a):
    """Inverse of :func:`fft2`, including the 1/(H*W) normalization."""
    a = fft_lastaxis(a, inverse=True)
    a = fft_lastaxis(a.swapaxes(-1, -2), inverse=True)
    return np.ascontiguousarray(a.swapaxes(-1, -2))


def radial_mask(h, w, cutoff_ratio):
    """Binary low-band mask: normalized frequency radius <= cutoff_ratio.

    Bin (u, v) maps to the signed frequency (u - h*[u > h/2], ...) / extent,
    so the mask is symmetric under conjugate-bin reflection and masked
    spectra of real inputs invert to real planes.
    """
    if not 0.0 < cutoff_ratio < 1.0:
        raise ParameterError(f"cutoff_ratio must lie in (0, 1), got {cutoff_ratio}")
    fy = np.fft.fftfreq(h)
    fx = np.fft.fftfreq(w)
    rr = fy[:, None] ** 2 + fx[None, :] ** 2
    return (rr <= cutoff_ratio * cutoff_ratio).astype(np.float64)
