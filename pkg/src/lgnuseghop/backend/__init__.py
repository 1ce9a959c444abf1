"""Kernel backend selection.

The package ships two interchangeable kernel sets: a compiled Cython
extension (``_kernels``) and a pure-numpy fallback (``py_kernels``). The
compiled one is preferred when importable; set LGNH_BACKEND=python or
LGNH_BACKEND=cython to force a choice.
"""

import os

from . import py_kernels


def _load():
    choice = os.environ.get("LGNH_BACKEND", "auto").lower()
    if choice == "python":
        return py_kernels
    try:
        from . import _kernels
    except ImportError:
        if choice == "cython":
            raise ImportError(
                "LGNH_BACKEND=cython but the compiled extension is not built; "
                "reinstall the package or set LGNH_BACKEND=python")
        return py_kernels
    return _kernels


_impl = _load()

NAME = _impl.NAME
label = _impl.label
fill_holes = _impl.fill_holes
watershed = _impl.watershed
gbt_hist = _impl.gbt_hist
gbt_predict = _impl.gbt_predict


def available_backends():
    """Names of importable backends ('cython' first when built)."""
    names = []
    try:
        from . import _kernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    names.append("python")
    return names


def get_backend(name):
    if name == "python":
        return py_kernels
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
