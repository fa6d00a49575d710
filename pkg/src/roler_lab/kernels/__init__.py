"""Hot kernels: compiled Cython core with a numpy/pure-Python fallback.

The backend is chosen once at import. Set ``ROLER_LAB_PURE=1`` to force the
fallback even when the extension is built.
"""

import importlib
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_core = None

if os.environ.get("ROLER_LAB_PURE") != "1":
    try:
        _core = importlib.import_module(f"{__name__}._core")
        BACKEND = "cython"
    except ImportError:
        _core = None


def _impl(name, backend=None):
    backend = backend or BACKEND
    if backend == "cython":
        if _core is None:
            raise RuntimeError("compiled kernels are not available")
        return getattr(_core, name)
    return getattr(_fallback, name)


def mf_sgd_epoch(users, items, rewards, order, P, Q, bu, bi, gb, lr, l2, backend=None):
    """One SGD pass over ``order``; updates P, Q, bu, bi in place, returns the SSE."""
    return _impl("mf_sgd_epoch", backend)(
        users, items, rewards, order, P, Q, bu, bi, float(gb), float(lr), float(l2)
    )


def knn_topk(X, queries, candidates, k, metric="cosine", include_self=False, backend=None):
    """Return ``(indices, distances)``, each of shape ``(len(queries), k)``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.int64)
    candidates = np.ascontiguousarray(candidates, dtype=np.int64)
    return _impl("knn_topk", backend)(
        X, queries, candidates, int(k), int(metric == "cosine"), int(bool(include_self))
    )


def available_backends():
    return ["python"] + (["cython"] if _core is not None else [])
