"""Kernel dispatch: the compiled extension when built, else pure Python.

Set ``HEATDIFF_KERNELS=python`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("HEATDIFF_KERNELS", "").lower() == "python":
        raise ImportError("fallback forced by HEATDIFF_KERNELS")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def _pick(backend: str | None):
    backend = backend or BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    if backend == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {backend!r}")


def grid_lipschitz(values, offsets, lengths, y_p: float, backend: str | None = None) -> float:
    mod = _pick(backend)
    offs = np.ascontiguousarray(offsets, dtype=np.int64)
    lens = np.ascontiguousarray(lengths, dtype=np.float64)
    return float(mod.grid_lipschitz(np.asarray(values, dtype=np.float64), offs, lens, float(y_p)))


def transport_simplex(a, b, C, max_iter: int = 0, tol: float = 1e-12, backend: str | None = None):
    """``(rows, cols, flows, cost, u, v, iterations)`` of an optimal plan."""
    return _pick(backend).transport_simplex(a, b, C, max_iter, tol)
