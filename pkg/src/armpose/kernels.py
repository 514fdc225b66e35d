"""Numeric backend selection.

The compiled Cython extension ``armpose._core`` is preferred; the pure-numpy
twin ``armpose._core_py`` is used when the extension is missing or when the
environment variable ``ARMPOSE_BACKEND=python`` is set before first import.
Both expose the same ``KernelModel`` API; results agree to floating-point
round-off (each backend is individually deterministic).
"""

from __future__ import annotations

import os

from . import _core_py

_requested = os.environ.get("ARMPOSE_BACKEND", "").strip().lower()

if _requested == "python":
    _impl = _core_py
    _name = "python"
elif _requested in ("", "compiled", "c"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        _name = "compiled"
    except ImportError:
        if _requested:
            raise
        _impl = _core_py
        _name = "python"
else:
    raise ValueError(f"unknown ARMPOSE_BACKEND {_requested!r}")

MODE_FULL = _core_py.MODE_FULL
MODE_WEAK = _core_py.MODE_WEAK


def backend_name() -> str:
    return _name


def make_kernel_model(model):
    """Packs an ArmModel into the active backend's KernelModel."""
    return _impl.KernelModel(model.rest, model.kp_chain, model.kp_njoints,
                             model.joint_axes, model.joint_pivots,
                             model.joint_parent, model.joint_topo)
