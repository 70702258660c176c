"""Binary checkpoint format.

Layout: magic bytes ``KSF1``, then u32 tensor count, then per tensor a u16
name length, the UTF-8 name, u8 rank, one u32 per extent, and the row-major
float32 little-endian payload. All integers little-endian.
"""

import struct
from collections import OrderedDict

import numpy as np

from .errors import ParameterError
from .tensor import Tensor

MAGIC = b"KSF1"


def save_tensors(path, named):
    """Write an ordered mapping of name -> Tensor."""
    items = list(named.items() if isinstance(named, dict) else named)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(items)))
        for name, t in items:
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ParameterError(f"tensor name too long: {name[:32]}...")
            arr = np.ascontiguousarray(t.data, dtype="<f4")
            if arr.ndim > 0xFF:
                raise ParameterError(f"tensor rank {arr.ndim} exceeds format limit")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path):
    """Read a checkpoint back into an ordered name -> Tensor mapping."""
    out = OrderedDict()
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ParameterError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            payload = fh.read(4 * n)
            if len(payload) != 4 * n:
                raise ParameterError(f"{path}: truncated payload for tensor {name!r}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
            out[name] = Tensor(arr)
    return out
