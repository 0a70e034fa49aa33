"""Kernel selection: compiled extension when available, NumPy otherwise.

Set SVNET_PURE=1 to force the NumPy lane (used by tests and benchmarks).
"""

import os

if os.environ.get("SVNET_PURE"):
    from . import pyfallback as _impl
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import pyfallback as _impl

IMPLEMENTATION = _impl.IMPLEMENTATION
closure = _impl.closure
score_assignments = _impl.score_assignments
sample_assignments = _impl.sample_assignments

__all__ = [
    "IMPLEMENTATION",
    "closure",
    "score_assignments",
    "sample_assignments",
]
