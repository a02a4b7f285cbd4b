"""Backend selection for the hot sweep loop.

The compiled extension is used when it imports; otherwise the pure-Python
implementation is used. Set ``UNBOUNDED_DP_BACKEND=python`` to force the
fallback.
"""

import os

from . import _pykernels

LAPLACE = 0
GAUSSIAN = 1

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module named ``name`` (default: fastest available)."""
    if name is None:
        name = os.environ.get("UNBOUNDED_DP_BACKEND")
    if name is None:
        name = "cython" if "cython" in _BACKENDS else "python"
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"kernel backend {name!r} unavailable; have {available_backends()}"
        ) from None


def backend_name(module=None):
    module = module or get_backend()
    return "cython" if module is _ckernels else "python"
