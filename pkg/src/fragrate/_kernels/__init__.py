"""Kernel backend selection.

The compiled extension is used when it imports; ``FRAGRATE_BACKEND=python``
forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _pure

try:
    from . import _ckernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _pure}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def get_backend(name: str | None = None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ImportError(f"kernel backend {name!r} is not available") from None


def available_backends() -> list[str]:
    return list(_BACKENDS)


_want = os.environ.get("FRAGRATE_BACKEND", "").strip().lower()
if _want == "python" or _compiled is None:
    active = _pure
    BACKEND = "python"
else:
    active = _compiled
    BACKEND = "compiled"
