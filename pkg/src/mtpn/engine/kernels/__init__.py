"""Hot-loop kernels with two interchangeable implementations.

The numba path is used when numba imports cleanly; setting the environment
variable ``MTPN_KERNELS=numpy`` (or calling :func:`set_backend`) selects the
pure-numpy path instead.
"""

import os

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

BACKENDS = ("numba", "numpy")

_NAMES = (
    "im2col",
    "col2im_add",
    "depthwise_forward",
    "depthwise_backward",
    "maxpool_forward",
    "maxpool_backward",
    "resize_forward",
    "resize_backward",
)

_current = None


def set_backend(name: str) -> None:
    global _current
    if name not in BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")
    if name == "numba" and _numba is None:
        raise ImportError("numba backend requested but numba is not importable")
    impl = _numba if name == "numba" else _numpy
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(impl, fn)
    _current = name


def get_backend() -> str:
    return _current


set_backend(os.environ.get("MTPN_KERNELS", "numba" if _numba is not None else "numpy"))
