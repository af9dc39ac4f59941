"""Hot inner loops, compiled when available.

``BACKEND`` is ``"cython"`` when the extension imported and ``"python"``
otherwise. Setting ``SRVNORM_PURE=1`` before import forces the fallback.
Both backends expose the same functions with the same output ordering.
"""
import os

from . import _fallback

if os.environ.get("SRVNORM_PURE"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

UNREACHABLE = _fallback.UNREACHABLE

bfs_distances = _impl.bfs_distances
connected_subsets = _impl.connected_subsets
count_connected_subsets = _impl.count_connected_subsets
sign_moment = _impl.sign_moment
sign_sup_mean = _impl.sign_sup_mean

__all__ = [
    "BACKEND",
    "UNREACHABLE",
    "bfs_distances",
    "connected_subsets",
    "count_connected_subsets",
    "sign_moment",
    "sign_sup_mean",
]
