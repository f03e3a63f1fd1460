"""Backend selection for the hot numeric kernels.

Set PERF_FL_BACKEND=numpy to force the pure-numpy path; the default is the
numba-compiled kernel when numba imports cleanly.  `benchmarks/bench_kernels.py`
compares the two.
"""
from __future__ import annotations

import os

from . import np_backend

_requested = os.environ.get("PERF_FL_BACKEND", "numba").strip().lower()

if _requested == "numpy":
    _impl = np_backend
    BACKEND = "numpy"
elif _requested == "numba":
    try:
        from . import nb_backend as _impl  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        _impl = np_backend
        BACKEND = "numpy"
else:
    raise RuntimeError(
        f"PERF_FL_BACKEND={_requested!r} not understood; use 'numba' or 'numpy'"
    )

robust_filter_indices = _impl.robust_filter_indices


def backend_name() -> str:
    return BACKEND
