"""Hot-kernel dispatch.

KDKIT_BACKEND picks the implementation at import time:

  auto   (default) numba-jitted kernels when numba imports, else pure numpy
  numba  require the jitted kernels, ImportError if numba is missing
  numpy  force the pure-numpy reference path

`BACKEND` records what was actually selected. benchmarks/backend_bench.py
times the two paths against each other on the same inputs.
"""

from __future__ import annotations

import os

import numpy as np

from . import reference as _reference

_choice = os.environ.get("KDKIT_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"KDKIT_BACKEND must be one of auto|numba|numpy, got {_choice!r}"
    )

if _choice == "numpy":
    _impl = _reference
    BACKEND = "numpy"
else:
    try:
        from . import jitted as _impl

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        _impl = _reference
        BACKEND = "numpy"

if BACKEND == "numba":
    # The jitted kernels allocate float32 scratch, so float64 inputs (only the
    # grad_check numeric probe produces them) take the reference path instead
    # of being silently truncated.
    def lstm_forward(x_pre, wh, h0, c0, mask):
        if x_pre.dtype == np.float32 and wh.dtype == np.float32:
            return _impl.lstm_forward(x_pre, wh, h0, c0, mask)
        return _reference.lstm_forward(x_pre, wh, h0, c0, mask)

    def dwconv_forward(x, w):
        if x.dtype == np.float32 and w.dtype == np.float32:
            return _impl.dwconv_forward(x, w)
        return _reference.dwconv_forward(x, w)

else:
    lstm_forward = _impl.lstm_forward
    dwconv_forward = _impl.dwconv_forward

lstm_backward = _impl.lstm_backward
dwconv_backward = _impl.dwconv_backward
scatter_add_rows = _impl.scatter_add_rows

__all__ = [
    "BACKEND",
    "lstm_forward",
    "lstm_backward",
    "dwconv_forward",
    "dwconv_backward",
    "scatter_add_rows",
]
