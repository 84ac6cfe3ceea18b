"""Split-scan backend selection.

The exact greedy scan over sorted gradient/hessian prefixes is the hot loop
of tree training. The compiled Cython kernel is used when available; setting
``LATKD_DISABLE_EXT=1`` (or running from an unbuilt source tree) selects the
pure-numpy fallback. Both backends produce bit-identical results —
``benchmarks/split_kernel_bench.py`` compares their speed and verifies
agreement.
"""
import os

from . import _split_np

if os.environ.get("LATKD_DISABLE_EXT", "") not in ("", "0"):
    _impl = _split_np
    BACKEND = "numpy"
else:
    try:
        from . import _split_cy as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _split_np
        BACKEND = "numpy"

scan_sorted_feature = _impl.scan_sorted_feature

__all__ = ["scan_sorted_feature", "BACKEND"]
