"""Distance kernels with a compiled fast path and a NumPy fallback.

The compiled backend is used when the extension built; set
``ECOVECTOR_KERNEL=python`` or ``ECOVECTOR_KERNEL=compiled`` to force one.
All kernels take float32 C-contiguous arrays and accumulate in float64.
"""

from __future__ import annotations

import os

from ecovector.kernels import _pykernels

_FORCED = os.environ.get("ECOVECTOR_KERNEL", "").strip().lower()

_impl = None
if _FORCED in ("", "compiled"):
    try:
        from ecovector.kernels import _ckernels as _impl
    except ImportError:
        if _FORCED == "compiled":
            raise ImportError(
                "ECOVECTOR_KERNEL=compiled but the extension is not built"
            ) from None
if _impl is None:
    _impl = _pykernels

BACKEND: str = _impl.BACKEND

l2_sq = _impl.l2_sq
ip_dist = _impl.ip_dist
cosine_dist = _impl.cosine_dist
l2_sq_batch = _impl.l2_sq_batch
ip_dist_batch = _impl.ip_dist_batch
cosine_dist_batch = _impl.cosine_dist_batch

__all__ = [
    "BACKEND",
    "l2_sq",
    "ip_dist",
    "cosine_dist",
    "l2_sq_batch",
    "ip_dist_batch",
    "cosine_dist_batch",
]
