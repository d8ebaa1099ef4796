"""Backend selection for the fixed-point kernels.

Two interchangeable backends expose ``sweep``, ``solve`` and
``solve_path`` with identical signatures:

* ``"numba"``: per-node loops compiled with :func:`numba.njit`.
* ``"numpy"``: all nodes updated at once with vectorized numpy.

The default is numba when it imports. Set ``NETMECH_NUMBA=0`` to force
the numpy path.
"""

from __future__ import annotations

import importlib
import logging
import os
from types import ModuleType

log = logging.getLogger(__name__)

_MODULES = {"numba": "._scalar", "numpy": "._vector"}
_loaded: dict[str, ModuleType] = {}


def get_backend(name: str) -> ModuleType:
    if name not in _MODULES:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_MODULES)}")
    if name not in _loaded:
        _loaded[name] = importlib.import_module(_MODULES[name], __name__)
    return _loaded[name]


def _default_name() -> str:
    flag = os.environ.get("NETMECH_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        log.warning("numba unavailable, falling back to numpy kernels")
        return "numpy"
    return "numba"


BACKEND = _default_name()


def active() -> ModuleType:
    return get_backend(BACKEND)
