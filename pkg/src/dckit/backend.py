"""Selects the compiled kernel core when available, else the numpy fallback.

Set ``DCKIT_BACKEND=python`` to force the fallback. ``BACKEND`` reports the
choice made at import time.
"""

import os

from dckit import _fallback

if os.environ.get("DCKIT_BACKEND", "").lower() == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from dckit import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

greedy_unique = _impl.greedy_unique
knn_sq_radii = _impl.knn_sq_radii
covered_mask = _impl.covered_mask

IMPLEMENTATIONS = {"python": _fallback}
if BACKEND == "cython":
    IMPLEMENTATIONS["cython"] = _impl
else:
    try:
        from dckit import _core

        IMPLEMENTATIONS["cython"] = _core
    except ImportError:
        pass
