"""Kernel backend selection.

The compiled Cython core is preferred; the numpy fallback keeps the package
fully functional without a compiler. ``PRESEL_KERNELS`` overrides:
``auto`` (default), ``compiled`` (error if missing), ``fallback``.
"""

import os

from . import fallback as _fallback

_choice = os.environ.get("PRESEL_KERNELS", "auto").strip().lower()

if _choice not in ("auto", "compiled", "fallback"):
    raise RuntimeError(f"PRESEL_KERNELS must be auto|compiled|fallback, got {_choice!r}")

if _choice == "fallback":
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _fallback

BACKEND: str = _impl.BACKEND
assign_labels = _impl.assign_labels
sum_by_label = _impl.sum_by_label
nc_topk = _impl.nc_topk


def get_backend(name: str):
    """Return a specific backend module (for benchmarks/tests)."""
    if name == "fallback":
        return _fallback
    if name == "compiled":
        from . import _core  # raises ImportError if not built

        return _core
    raise ValueError(f"unknown backend {name!r}")
