"""Lightweight frequency processing.

Features are split into a low and a high band with a hard radial mask in
the 2-D spectrum, then each band is re-weighted by one learnable scalar per
channel. Parameter cost is exactly 2C regardless of spatial size.

The band split F^-1(M * F(x)) is a real symmetric linear operator (the mask
is radially symmetric, hence invariant under conjugate-bin reflection), so
its vjp is the split itself applied to the upstream gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from . import fft as _fft
from .errors import ParameterError, ShapeError
from .tensor import Tensor, record_op, scale_channels

DEFAULT_CUTOFF = 0.25


def _split_planes(data, mask):
    """Apply the masked-spectrum split per channel; returns (low, high) f32."""
    planes = np.ascontiguousarray(np.moveaxis(data.astype(np.complex128), -1, -3))
    spec = _fft.fft2(planes)
    low = _fft.ifft2(spec * mask).real
    high = _fft.ifft2(spec * (1.0 - mask)).real
    low = np.moveaxis(low, -3, -1).astype(np.float32)
    high = np.moveaxis(high, -3, -1).astype(np.float32)
    return np.ascontiguousarray(low), np.ascontiguousarray(high)


def spectrum_split(x, cutoff_ratio=DEFAULT_CUTOFF):
    """Split [.., H, W, C] into complementary (low, high) band tensors.

    H and W must be powers of two. The bands sum to x up to FFT round-off.
    """
    if x.ndim < 3:
        raise ShapeError(f"spectrum_split expects [..,H,W,C], got {x.shape}")
    h, w = x.shape[-3], x.shape[-2]
    _fft.require_pow2(h, "height")
    _fft.require_pow2(w, "width")
    mask = _fft.radial_mask(h, w, cutoff_ratio)
    low_data, high_data = _split_planes(x.data, mask)
    low = Tensor(low_data)
    high = Tensor(high_data)

    def backward_low(g, acc):
        gl, _ = _split_planes(g, mask)
        acc(x, gl)

    def backward_high(g, acc):
        _, gh = _split_planes(g, mask)
        acc(x, gh)

    record_op(low, backward_low)
    record_op(high, backward_high)
    return low, high


@dataclass
class LfpmWeights:
    """Per-channel band gains; the cutoff is fixed at construction."""

    low_gain: Tensor
    high_gain: Tensor
    cutoff_ratio: float = DEFAULT_CUTOFF

    def __post_init__(self):
        if not 0.0 < self.cutoff_ratio < 1.0:
            raise ParameterError(
                f"cutoff_ratio must lie in (0, 1), got {self.cutoff_ratio}"
            )

    @staticmethod
    def create(channels, cutoff_ratio=DEFAULT_CUTOFF):
        ones = np.ones(channels, dtype=np.float32)
        return LfpmWeights(Tensor(ones), Tensor(ones.copy()), cutoff_ratio)

    @property
    def channels(self):
        return self.low_gain.shape[0]

    def param_count(self):
        return self.low_gain.size + self.high_gain.size

    def named(self, prefix):
        yield f"{prefix}low_gain", self.low_gain
        yield f"{prefix}high_gain", self.high_gain


def lfpm_forward(x, weights):
    """low_gain * low + high_gain * high, differentiable in x and both gains."""
    if weights.channels != x.shape[-1]:
        raise ShapeError(
            f"gain length {weights.channels} does not match channels {x.shape[-1]}"
        )
    low, high = spectrum_split(x, weights.cutoff_ratio)
    return scale_channels(low, weights.low_gain) + scale_channels(high, weights.high_gain)
