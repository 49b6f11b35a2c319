"""Kernel backend selection.

The compiled extension is used when it imports; set ``HYBRIDWIND_BACKEND=python``
to force the numpy fallback.
"""

import logging
import os

from . import _reference

logger = logging.getLogger(__name__)

_compiled = None
try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python")


def _initial():
    requested = os.environ.get("HYBRIDWIND_BACKEND", "").strip().lower()
    if requested == "python" or _compiled is None:
        if requested == "compiled":
            logger.warning("compiled kernels requested but not built; using python backend")
        return "python"
    return "compiled"


_active = _initial()


def available() -> tuple[str, ...]:
    return BACKENDS if _compiled is not None else ("python",)


def active() -> str:
    return _active


def kernels():
    return _compiled if _active == "compiled" else _reference


def get(name: str):
    if name == "python":
        return _reference
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}; choose from {BACKENDS}")


def use(name: str) -> str:
    """Switch the process-wide backend; returns the previous one."""
    global _active
    get(name)
    previous, _active = _active, name
    return previous
