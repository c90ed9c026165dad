"""Kernel backend selection.

The compiled extension is used when importable; ``CONCEPTINC_BACKEND=python``
forces the NumPy fallback. Both produce bitwise-identical products.
"""

import os

from . import _fallback

_forced = os.environ.get("CONCEPTINC_BACKEND", "").lower()

if _forced == "python":
    _impl = _fallback
    NAME = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        NAME = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = _fallback
        NAME = "python"

_active = {"name": NAME, "impl": _impl}


def active() -> str:
    return _active["name"]


def use(name: str) -> None:
    """Switch backend at runtime (``"compiled"`` or ``"python"``)."""
    if name == "python":
        _active.update(name="python", impl=_fallback)
    elif name == "compiled":
        from . import _kernels

        _active.update(name="compiled", impl=_kernels)
    else:
        raise ValueError(f"unknown backend {name!r}")


def matmul_into(a, b, out):
    _active["impl"].matmul_into(a, b, out)


def bmm_into(a, b, out):
    _active["impl"].bmm_into(a, b, out)
