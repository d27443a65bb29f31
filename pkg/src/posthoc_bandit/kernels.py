"""Backend selection for the per-step kernels.

The compiled extension is preferred. Set ``POSTHOC_BANDIT_PURE=1`` to force
the NumPy fallback (useful for debugging and for the benchmark).
"""
from __future__ import annotations

import os

if os.environ.get("POSTHOC_BANDIT_PURE", "") not in ("", "0"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

rank1_update = _impl.rank1_update
accumulate = _impl.accumulate
accumulate_context = _impl.accumulate_context
lcb_scan = _impl.lcb_scan

__all__ = ["BACKEND", "rank1_update", "accumulate", "accumulate_context", "lcb_scan"]
