"""Kernel backend selection.

The hot loops (particle-weight fusion, the SMO solver, tree growth) exist
twice: a compiled Cython extension and a pure-numpy fallback with identical
semantics.  The compiled backend is used when importable; set
RSSIFUSE_BACKEND=python or =compiled to force one, or call use() at runtime.
"""

from __future__ import annotations

import os

from . import pykernels

_IMPLS = {"python": pykernels}
try:
    from . import _speedups
    _IMPLS["compiled"] = _speedups
except ImportError:
    _speedups = None

_env = os.environ.get("RSSIFUSE_BACKEND", "auto")
if _env == "auto":
    _active = "compiled" if "compiled" in _IMPLS else "python"
elif _env in _IMPLS:
    _active = _env
elif _env == "compiled":
    raise ImportError("RSSIFUSE_BACKEND=compiled but the extension is not built")
else:
    raise ImportError(f"unknown RSSIFUSE_BACKEND {_env!r}")


def backend() -> str:
    """Name of the active backend ('compiled' or 'python')."""
    return _active


def available_backends() -> list[str]:
    return sorted(_IMPLS)


def use(name: str):
    """Switch the active backend globally (mainly for tests/benchmarks)."""
    global _active
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    _active = name


def get(name: str | None = None):
    """Return the implementation module for `name` (default: the active one)."""
    return _IMPLS[name or _active]


def fuse_log_weights(*args, **kwargs):
    return _IMPLS[_active].fuse_log_weights(*args, **kwargs)


def smo_solve(*args, **kwargs):
    return _IMPLS[_active].smo_solve(*args, **kwargs)


def grow_tree(*args, **kwargs):
    return _IMPLS[_active].grow_tree(*args, **kwargs)


def tree_predict(*args, **kwargs):
    return _IMPLS[_active].tree_predict(*args, **kwargs)
