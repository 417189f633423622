"""Hot path kernels with a compiled and a pure-numpy implementation.

The compiled kernels are used when numba imports cleanly.  Setting the
environment variable ``JUMPLAB_DISABLE_NUMBA=1`` forces the numpy fallback,
which follows the same stepping rule and agrees to rounding error.
"""

import os

from . import _numpy

USING_NUMBA = False
if os.environ.get("JUMPLAB_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from . import _numba as _impl

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _impl = _numpy
else:
    _impl = _numpy

KIND_LINEAR = _impl.KIND_LINEAR
KIND_SINE = _impl.KIND_SINE
advance = _impl.advance
flow_batch = _impl.flow_batch
flow_record = _impl.flow_record
replay_batch = _impl.replay_batch
jacobi_eigvalsh = _impl.jacobi_eigvalsh
min_eig_batch = _impl.min_eig_batch

__all__ = [
    "USING_NUMBA",
    "KIND_LINEAR",
    "KIND_SINE",
    "advance",
    "flow_batch",
    "flow_record",
    "replay_batch",
    "jacobi_eigvalsh",
    "min_eig_batch",
]
