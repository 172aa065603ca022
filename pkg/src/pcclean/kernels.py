"""Backend selection for the hot kernels.

The compiled module is used when it imports; otherwise the numpy fallback.
Set ``PCCLEAN_KERNELS=python`` to force the fallback.
"""
import logging
import os

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("PCCLEAN_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        log.debug("compiled kernels unavailable; using numpy fallback")

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None else "python"
_impl = BACKENDS[BACKEND]


def use_backend(name):
    """Switch the active backend ("compiled" or "python"); returns the previous one."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available (have {sorted(BACKENDS)})")
    prev = BACKEND
    BACKEND, _impl = name, BACKENDS[name]
    return prev


def _f8(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i8(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def knn_indices(feats, k):
    """(B, n, C) features -> (B, n, k) neighbor indices, self excluded."""
    return _impl.knn_indices(_f8(feats), int(k))


def neighbor_max(v, idx):
    """Max of v over each node's neighbor rows; returns (values, argmax slot)."""
    return _impl.neighbor_max(_f8(v), _i8(idx))


def neighbor_max_backward(grad, idx, slot, n_src):
    return _impl.neighbor_max_backward(_f8(grad), _i8(idx), _i8(slot), int(n_src))
