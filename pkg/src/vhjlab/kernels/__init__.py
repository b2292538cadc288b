"""Time-stepping backends: compiled Cython kernel with pure-Python fallback.

The backend is picked once at import: the compiled extension if it built,
otherwise the NumPy reference implementation. ``VHJLAB_KERNEL=python`` or
``VHJLAB_KERNEL=compiled`` forces the choice (the latter raises if the
extension is missing). Both expose the same ``advance`` contract and are
exercised against each other in the test suite and the benchmark.
"""

from __future__ import annotations

import os

import numpy as np

from . import reference
from .reference import (
    STATUS_DIVERGED,
    STATUS_DT_UNDERFLOW,
    STATUS_OK,
    StepperWorkspace,
)

try:
    from . import _stepper as _compiled
except ImportError:
    _compiled = None


class PythonBackend:
    name = "python"

    @staticmethod
    def advance(ws, u, t, t_target, dt, dt_max, lte_tol, newton_max_iter=30):
        return reference.advance(ws, u, t, t_target, dt, dt_max, lte_tol, newton_max_iter)


class CompiledBackend:
    name = "compiled"

    @staticmethod
    def advance(ws, u, t, t_target, dt, dt_max, lte_tol, newton_max_iter=30):
        u = np.ascontiguousarray(u, dtype=float).copy()
        t, dt_next, n_acc, status = _compiled.advance(
            u, t, t_target,
            np.ascontiguousarray(ws.hl), np.ascontiguousarray(ws.hr),
            np.ascontiguousarray(ws.aW), np.ascontiguousarray(ws.aC), np.ascontiguousarray(ws.aE),
            np.ascontiguousarray(ws.bW), np.ascontiguousarray(ws.bC), np.ascontiguousarray(ws.bE),
            ws.p, ws.k, ws.k_blend, ws.smooth, dt, dt_max, lte_tol, newton_max_iter,
        )
        return u, t, dt_next, n_acc, status


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name: str | None = None):
    name = name or os.environ.get("VHJLAB_KERNEL", "")
    if name == "python":
        return PythonBackend()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel requested but the extension is not built")
        return CompiledBackend()
    if name:
        raise ValueError(f"unknown kernel backend {name!r}")
    return CompiledBackend() if _compiled is not None else PythonBackend()
