"""Dense float32 tensors with define-by-run reverse-mode differentiation.

A :class:`Tensor` wraps a row-major float32 ndarray. Operations are free
functions; while a :class:`GradTape` is active they append a backward
closure per output, and ``tape.backward(loss)`` replays the closures in
exact reverse order of the forward pass, accumulating gradients keyed by
tensor identity.

Tensors are treated as immutable once handed to an operation. A tape is
single-owner: at most one may be active per process, and one training step
uses exactly one tape.
"""

import numpy as np

from . import fft as _fft
from . import kernels
from .errors import NonFiniteError, ParameterError, ShapeError

__all__ = [
    "Tensor", "GradTape", "tensor", "zeros", "record_op", "is_recording",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose_last2",
    "reshape", "concat", "channel_slice", "mean_axis", "mean_all",
    "abs_val", "silu", "clamp", "softmax_lastdim", "topk_lastdim",
    "gather_rows", "window_partition", "window_reverse", "conv2d",
    "add_channel_bias", "scale_channels", "upsample_nearest2x",
    "rfft2", "irfft2", "grad_check",
]


class Tensor:
    """Dense N-dimensional float32 array, row-major."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.ascontiguousarray(data, dtype=np.float32)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def copy(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data):
    return Tensor(data)


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=np.float32))


_ACTIVE_TAPE = None


class GradTape:
    """Ordered record of applied operations plus accumulated gradients."""

    def __init__(self):
        self._records = []
        self._grads = {}
        self._keep = {}

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a GradTape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, out, backward_fn):
        self._records.append((out, backward_fn))

    def _accumulate(self, t, g):
        key = id(t)
        if key in self._grads:
            self._grads[key] += g
        else:
            self._grads[key] = np.array(g, dtype=np.float32, copy=True)
            self._keep[key] = t

    def backward(self, loss):
        """Replay the tape in reverse from a scalar loss."""
        if _ACTIVE_TAPE is self:
            raise RuntimeError("exit the tape context before calling backward")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._grads.clear()
        self._keep.clear()
        self._grads[id(loss)] = np.ones_like(loss.data)
        self._keep[id(loss)] = loss
        for out, backward_fn in reversed(self._records):
            g = self._grads.get(id(out))
            if g is None:
                continue
            backward_fn(g, self._accumulate)

    def grad(self, t):
        """Accumulated gradient of the last backward() w.r.t. t, or None."""
        return self._grads.get(id(t))


def is_recording():
    return _ACTIVE_TAPE is not None


def record_op(out, backward_fn):
    """Attach a backward closure to the active tape, if any.

    The closure receives (upstream_gradient, accumulate) where accumulate
    is called as accumulate(input_tensor, gradient_array).
    """
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape` after leading-batch broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _coerce_pair(a, b, op):
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
        return b, None
    return None, np.float32(b)


def add(a, b):
    other, scalar = _coerce_pair(a, b, "add")
    if scalar is not None:
        out = Tensor(a.data + scalar)

        def backward(g, acc):
            acc(a, g)

        return record_op(out, backward)
    out = Tensor(a.data + other.data)

    def backward(g, acc):
        acc(a, g)
        acc(other, g)

    return record_op(out, backward)


def sub(a, b):
    other, scalar = _coerce_pair(a, b, "sub")
    if scalar is not None:
        out = Tensor(a.data - scalar)

        def backward(g, acc):
            acc(a, g)

        return record_op(out, backward)
    out = Tensor(a.data - other.data)

    def backward(g, acc):
        acc(a, g)
        acc(other, -g)

    return record_op(out, backward)


def mul(a, b):
    other, scalar = _coerce_pair(a, b, "mul")
    if scalar is not None:
        out = Tensor(a.data * scalar)

        def backward(g, acc):
            acc(a, g * scalar)

        return record_op(out, backward)
    out = Tensor(a.data * other.data)

    def backward(g, acc):
        acc(a, g * other.data)
        acc(other, g * a.data)

    return record_op(out, backward)


def div(a, b):
    other, scalar = _coerce_pair(a, b, "div")
    if scalar is not None:
        return mul(a, 1.0 / float(scalar))
    out = Tensor(a.data / other.data)

    def backward(g, acc):
        acc(a, g / other.data)
        acc(other, -g * a.data / (other.data * other.data))

    return record_op(out, backward)


def neg(a):
    out = Tensor(-a.data)

    def backward(g, acc):
        acc(a, -g)

    return record_op(out, backward)


def abs_val(a):
    out = Tensor(np.abs(a.data))

    def backward(g, acc):
        acc(a, g * np.sign(a.data))

    return record_op(out, backward)


def silu(a):
    """x * sigmoid(x); smooth activation used throughout the network."""
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * sig)

    def backward(g, acc):
        acc(a, g * (sig * (1.0 + a.data * (1.0 - sig))))

    return record_op(out, backward)


def clamp(a, lo, hi):
    out = Tensor(np.clip(a.data, lo, hi))

    def backward(g, acc):
        acc(a, g * ((a.data >= lo) & (a.data <= hi)))

    return record_op(out, backward)


# ---------------------------------------------------------------------------
# reductions and shape moves


def mean_axis(a, axis):
    out = Tensor(a.data.mean(axis=axis))
    n = a.shape[axis]

    def backward(g, acc):
        acc(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return record_op(out, backward)


def mean_all(a):
    out = Tensor(a.data.mean())
    n = a.size

    def backward(g, acc):
        acc(a, np.full(a.shape, g / n, dtype=np.float32))

    return record_op(out, backward)


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))

    def backward(g, acc):
        acc(a, g.reshape(a.shape))

    return record_op(out, backward)


def transpose_last2(a):
    out = Tensor(np.ascontiguousarray(a.data.swapaxes(-1, -2)))

    def backward(g, acc):
        acc(a, g.swapaxes(-1, -2))

    return record_op(out, backward)


def concat(parts, axis=-1):
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]

    def backward(g, acc):
        start = 0
        for p, n in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(start, start + n)
            acc(p, g[tuple(sl)])
            start += n

    return record_op(out, backward)


def channel_slice(a, start, stop):
    """Slice along the last axis."""
    out = Tensor(a.data[..., start:stop])

    def backward(g, acc):
        full = np.zeros(a.shape, dtype=np.float32)
        full[..., start:stop] = g
        acc(a, full)

    return record_op(out, backward)


# ---------------------------------------------------------------------------
# linear algebra and attention primitives


def matmul(a, b):
    """Batched matrix product; leading extents must match or broadcast from 1."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for {a.shape} @ {b.shape}")
    try:
        out_data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul: batch extents differ for {a.shape} @ {b.shape}") from exc
    out = Tensor(out_data)

    def backward(g, acc):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        acc(a, _unbroadcast(ga, a.shape))
        acc(b, _unbroadcast(gb, b.shape))

    return record_op(out, backward)


def softmax_lastdim(x):
    """Numerically stabilized softmax over the last axis."""
    if x.shape[-1] < 1:
        raise ShapeError("softmax_lastdim needs a nonempty last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(out_data)

    def backward(g, acc):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        acc(x, out_data * (g - dot))

    return record_op(out, backward)


def topk_lastdim(x, k):
    """Indices (and values) of the k largest entries per last-axis slice.

    Descending value order, ties resolved to the lower index. Detached from
    the tape: routing indices are constants during backprop.
    """
    n = x.shape[-1]
    if not 1 <= k <= n:
        raise ParameterError(f"topk: k={k} outside [1, {n}]")
    order = np.argsort(-x.data, axis=-1, kind="stable")
    idx = np.ascontiguousarray(order[..., :k])
    values = Tensor(np.take_along_axis(x.data, idx, axis=-1))
    return values, idx.astype(np.int64)


def gather_rows(src, idx):
    """Select rows of src by integer index.

    src has shape [..batch, R, F]. Either idx's leading extents equal src's
    batch extents (per-batch selection, output [..batch, K.., F]) or src is
    unbatched [R, F] and idx may have any shape (output idx.shape + [F]).
    The backward pass scatter-adds, accumulating duplicate indices.
    """
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ParameterError("gather_rows: idx must be an integer array")
    rows = src.shape[-2]
    bad = (idx < 0) | (idx >= rows)
    if bad.any():
        offender = int(idx[bad][0])
        raise IndexError(f"gather_rows: index {offender} outside [0, {rows})")
    batch = src.shape[:-2]
    if batch:
        if idx.shape[: len(batch)] != batch:
            raise ShapeError(
                f"gather_rows: idx leading extents {idx.shape} do not match "
                f"src batch extents {batch}"
            )
        bsz = int(np.prod(batch))
        flat_idx = idx.reshape(bsz, -1) + (np.arange(bsz) * rows)[:, None]
        flat_idx = flat_idx.ravel()
    else:
        flat_idx = idx.ravel()
    feat = src.shape[-1]
    src_flat = src.data.reshape(-1, feat)
    out_data = src_flat[flat_idx].reshape(idx.shape + (feat,))
    out = Tensor(out_data)

    def backward(g, acc):
        gsrc = np.zeros_like(src_flat)
        kernels.scatter_add_rows(gsrc, flat_idx, np.ascontiguousarray(g.reshape(-1, feat)))
        acc(src, gsrc.reshape(src.shape))

    return record_op(out, backward)


# ---------------------------------------------------------------------------
# windowing


def _window_axes(x, n, op):
    h, w = x.shape[-3], x.shape[-2]
    if h != w:
        raise ShapeError(f"{op}: feature map must be square, got {h}x{w}")
    if h % n != 0:
        raise ShapeError(f"{op}: window side {n} does not divide extent {h}")
    return h // n


def window_partition(x, n):
    """Split [.., H, W, C] into [.., S*S, n*n, C] non-overlapping regions.

    Regions are laid out row-major over the region grid, and tokens
    row-major inside each region. Exact inverse: :func:`window_reverse`.
    """
    s = _window_axes(x, n, "window_partition")
    lead = x.shape[:-3]
    c = x.shape[-1]
    d = len(lead)
    xr = x.data.reshape(lead + (s, n, s, n, c))
    xr = xr.transpose(tuple(range(d)) + (d, d + 2, d + 1, d + 3, d + 4))
    out = Tensor(xr.reshape(lead + (s * s, n * n, c)))

    def backward(g, acc):
        acc(x, _reverse_data(g, n, s * n))

    return record_op(out, backward)


def _reverse_data(data, n, side):
    s = side // n
    lead = data.shape[:-3]
    c = data.shape[-1]
    d = len(lead)
    xr = data.reshape(lead + (s, s, n, n, c))
    xr = xr.transpose(tuple(range(d)) + (d, d + 2, d + 1, d + 3, d + 4))
    return np.ascontiguousarray(xr.reshape(lead + (side, side, c)))


def window_reverse(x, n, side):
    """Inverse of :func:`window_partition` back to [.., side, side, C]."""
    regions, tokens = x.shape[-3], x.shape[-2]
    if tokens != n * n or regions * tokens != side * side:
        raise ShapeError(
            f"window_reverse: {regions} regions of {tokens} tokens do not tile "
            f"a {side}x{side} map with window side {n}"
        )
    out = Tensor(_reverse_data(x.data, n, side))
    s = side // n

    def backward(g, acc):
        lead = g.shape[:-3]
        c = g.shape[-1]
        d = len(lead)
        gr = g.reshape(lead + (s, n, s, n, c))
        gr = gr.transpose(tuple(range(d)) + (d, d + 2, d + 1, d + 3, d + 4))
        acc(x, gr.reshape(lead + (s * s, n * n, c)))

    return record_op(out, backward)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, w, stride=1, pad="same"):
    """2-D cross-correlation of [.., H, W, Cin] with [kh, kw, Cin, Cout].

    Accepts a single image or one leading batch axis. Odd kernels only;
    stride 1 or 2; pad "same" (kh//2 zeros) or "valid".
    """
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4, got {w.shape}")
    kh, kw, cin, cout = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ParameterError(f"conv2d: stride must be 1 or 2, got {stride}")
    if pad not in ("same", "valid"):
        raise ParameterError(f"conv2d: pad must be 'same' or 'valid', got {pad!r}")
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be [H,W,C] or [B,H,W,C], got {x.shape}")
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[-1]} != weight Cin {cin}")
    batched = x.ndim == 4
    xb = x.data if batched else x.data[None]
    ph = kh // 2 if pad == "same" else 0
    pw = kw // 2 if pad == "same" else 0
    h, w_in = xb.shape[1], xb.shape[2]
    if h + 2 * ph < kh or w_in + 2 * pw < kw:
        raise ShapeError(f"conv2d: input {h}x{w_in} smaller than kernel {kh}x{kw}")
    xpad = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else xb
    xpad = np.ascontiguousarray(xpad)
    out_data = kernels.conv2d_fwd(xpad, w.data, stride)
    out = Tensor(out_data if batched else out_data[0])

    def backward(g, acc):
        gb = np.ascontiguousarray(g if batched else g[None])
        gw = kernels.conv2d_bwd_w(xpad, gb, kh, kw, stride)
        gxpad = kernels.conv2d_bwd_x(gb, w.data, stride, xpad.shape[1], xpad.shape[2])
        gx = gxpad[:, ph : ph + h, pw : pw + w_in, :]
        acc(w, gw)
        acc(x, gx if batched else gx[0])

    return record_op(out, backward)


def add_channel_bias(x, b):
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"bias of shape {b.shape} does not match channels {x.shape[-1]}")
    out = Tensor(x.data + b.data)

    def backward(g, acc):
        acc(x, g)
        acc(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return record_op(out, backward)


def scale_channels(x, s):
    """Multiply each channel (last axis) by a learnable scalar."""
    if s.ndim != 1 or s.shape[0] != x.shape[-1]:
        raise ShapeError(f"gain of shape {s.shape} does not match channels {x.shape[-1]}")
    out = Tensor(x.data * s.data)

    def backward(g, acc):
        acc(x, g * s.data)
        acc(s, (g * x.data).reshape(-1, s.shape[0]).sum(axis=0))

    return record_op(out, backward)


def upsample_nearest2x(x):
    """Nearest-neighbor 2x upsampling over the two spatial axes."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"upsample expects [H,W,C] or [B,H,W,C], got {x.shape}")
    out = Tensor(x.data.repeat(2, axis=-3).repeat(2, axis=-2))

    def backward(g, acc):
        lead = g.shape[:-3]
        h2, w2, c = g.shape[-3:]
        gr = g.reshape(lead + (h2 // 2, 2, w2 // 2, 2, c))
        acc(x, gr.sum(axis=(-4, -2)))

    return record_op(out, backward)


# ---------------------------------------------------------------------------
# spectra


def rfft2(x):
    """Unnormalized 2-D DFT of a real [H, W] tensor -> complex128 [H, W].

    Power-of-two extents only. The transform is not recorded on the tape;
    differentiable spectrum consumers define their own fused backward.
    """
    if x.ndim != 2:
        raise ShapeError(f"rfft2 expects a 2-D tensor, got {x.shape}")
    _fft.require_pow2(x.shape[0], "height")
    _fft.require_pow2(x.shape[1], "width")
    return _fft.fft2(x.data.astype(np.complex128))


def irfft2(spec):
    """Inverse of :func:`rfft2`; returns the real part as an f32 tensor."""
    spec = np.asarray(spec, dtype=np.complex128)
    if spec.ndim != 2:
        raise ShapeError(f"irfft2 expects a 2-D spectrum, got {spec.shape}")
    _fft.require_pow2(spec.shape[0], "height")
    _fft.require_pow2(spec.shape[1], "width")
    return Tensor(_fft.ifft2(spec).real)


# ---------------------------------------------------------------------------
# differentiation checks


def grad_check(f, params, eps=1e-3, max_checks_per_param=None, seed=0):
    """Max relative error between tape gradients and central differences.

    f maps the given parameter tensors to a scalar Tensor and must be pure.
    When max_checks_per_param is set, that many elements per tensor are
    sampled (deterministically from seed) instead of sweeping every element.
    """
    params = list(params)
    with GradTape() as tape:
        out = f(params)
    val = float(out.data)
    if not np.isfinite(val):
        raise NonFiniteError(f"grad_check: objective is not finite ({val})")
    tape.backward(out)
    analytic = []
    for p in params:
        g = tape.grad(p)
        analytic.append(np.zeros(p.shape, np.float32) if g is None else g)

    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        n = flat.shape[0]
        if max_checks_per_param is not None and n > max_checks_per_param:
            picks = rng.choice(n, size=max_checks_per_param, replace=False)
        else:
            picks = range(n)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(params).data)
            flat[i] = orig - eps
            lo = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError("grad_check: objective is not finite at a perturbation")
            numeric = (hi - lo) / (2.0 * eps)
            a = float(gflat[i])
            rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-8)
            if rel > worst:
                worst = rel
    return worst
