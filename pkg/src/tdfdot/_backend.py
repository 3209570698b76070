"""Kernel backend selection.

``TDFDOT_BACKEND=numpy`` forces the pure-numpy kernels; otherwise numba is
used when importable.  :func:`set_backend` switches at runtime (tests and
the benchmark use it to run both paths in one process).
"""

import logging
import os

from . import _kernels_np

log = logging.getLogger(__name__)

try:
    from . import _kernels_nb
except ImportError:  # pragma: no cover - numba missing
    _kernels_nb = None

_current = None


def available() -> list[str]:
    return ["numba", "numpy"] if _kernels_nb is not None else ["numpy"]


def set_backend(name: str) -> None:
    global _current
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and _kernels_nb is None:
        raise RuntimeError("numba backend requested but numba is not importable")
    _current = name


def name() -> str:
    return _current


def kernels():
    return _kernels_nb if _current == "numba" else _kernels_np


_env = os.environ.get("TDFDOT_BACKEND", "").strip().lower()
if _env == "numpy" or _kernels_nb is None:
    set_backend("numpy")
else:
    if _env not in ("", "numba"):
        log.warning("ignoring unknown TDFDOT_BACKEND=%r", _env)
    set_backend("numba")
