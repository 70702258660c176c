"""Backend dispatch for the hot numeric kernels.

Two interchangeable implementations exist:

* ``jit``       - numba ``@njit`` loops (default when numba imports cleanly)
* ``reference`` - pure numpy, one BLAS matmul per kernel tap

Selection is controlled by the ``KSFORMER_BACKEND`` environment variable,
read once at import time: ``numba`` requires the jitted path, ``numpy``
forces the fallback, unset prefers numba and silently falls back when it is
unavailable. ``benchmarks/bench_backends.py`` compares the two on realistic
shapes.
"""

import os

from ..errors import ConfigError
from . import reference

_CHOICES = ("numba", "numpy")


def _select():
    requested = os.environ.get("KSFORMER_BACKEND", "").strip().lower()
    if requested and requested not in _CHOICES:
        raise ConfigError(
            f"KSFORMER_BACKEND={requested!r}: expected one of {_CHOICES}"
        )
    if requested == "numpy":
        return reference
    try:
        from . import jit
        return jit
    except ImportError:
        if requested == "numba":
            raise
        return reference


_impl = _select()

conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd_w = _impl.conv2d_bwd_w
conv2d_bwd_x = _impl.conv2d_bwd_x
scatter_add_rows = _impl.scatter_add_rows


def active_backend():
    """Name of the kernel backend selected at import time."""
    return _impl.BACKEND_NAME
