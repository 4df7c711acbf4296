"""Kernel backend selection.

The compiled extension is used when importable unless ``LESIONBENCH_PURE`` is
set to a non-empty value. ``get_backend`` gives explicit access to either one,
which the tests and the benchmark use to compare them.
"""
import os

from . import _naive

try:
    from . import _ccl
except ImportError:  # extension not built
    _ccl = None

_BACKENDS = {"python": _naive}
if _ccl is not None:
    _BACKENDS["compiled"] = _ccl

if _ccl is not None and not os.environ.get("LESIONBENCH_PURE"):
    BACKEND = "compiled"
else:
    BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    if name is None:
        name = BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None
