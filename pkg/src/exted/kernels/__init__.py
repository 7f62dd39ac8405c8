"""Kernel backend selection.

Two interchangeable implementations of the hot numeric kernels exist:
``_numba`` (jitted, the default when numba imports cleanly) and ``_numpy``
(pure numpy, always available). The env var ``EXTED_BACKEND`` picks one:

    EXTED_BACKEND=auto    numba if available, else numpy (default)
    EXTED_BACKEND=numba   require the jitted kernels, fail if unavailable
    EXTED_BACKEND=numpy   force the pure-numpy fallback

Each backend is bit-deterministic with respect to itself; ``matmul`` /
``matmul_tn`` / ``outer`` / ``adam_update`` are additionally bitwise
identical across the two (only transcendentals differ, in the last ulp).
Run ``python -m exted.benchmark`` to compare them on this machine.
"""

import os

_requested = os.environ.get("EXTED_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ImportError(
        f"EXTED_BACKEND must be one of auto|numba|numpy, got {_requested!r}"
    )

if _requested == "numpy":
    from . import _numpy as _impl
else:
    try:
        from . import _numba as _impl
    except ImportError:
        if _requested == "numba":
            raise
        from . import _numpy as _impl

BACKEND = _impl.BACKEND_NAME

matmul = _impl.matmul
matmul_tn = _impl.matmul_tn
outer = _impl.outer
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
softmax_xent = _impl.softmax_xent
adam_update = _impl.adam_update
