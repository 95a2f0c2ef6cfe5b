"""Kernel lane selection.

The compiled Cython core is preferred; the numpy lane is the fallback.  Set
MQPLAB_FORCE_PURE=1 to force the fallback (used by the benchmark and tests).
"""

from __future__ import annotations

import os

from . import pure

_compiled = None
if not os.environ.get("MQPLAB_FORCE_PURE"):
    try:
        from . import _core as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None

active = _compiled if _compiled is not None else pure


def backend_name() -> str:
    return active.BACKEND_NAME


def available_backends():
    out = {"pure": pure}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
