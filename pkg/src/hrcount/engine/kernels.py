"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
implementation is selected. Set ``HRCOUNT_PURE_PYTHON=1`` to force the
fallback, or call :func:`use_backend` at runtime.
"""
from __future__ import annotations

import contextlib
import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_impl = _pykernels
BACKEND = "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> None:
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _impl = _BACKENDS[name]
    BACKEND = name


@contextlib.contextmanager
def backend(name: str):
    prev = BACKEND
    use_backend(name)
    try:
        yield
    finally:
        use_backend(prev)


if _ckernels is not None and not os.environ.get("HRCOUNT_PURE_PYTHON"):
    use_backend("cython")
else:
    logger.debug("using numpy fallback kernels")


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(x, kh, kw, stride, pad)


def col2im(cols, shape, kh, kw, stride, pad):
    return _impl.col2im(cols, shape, kh, kw, stride, pad)


def maxpool2x2_forward(x):
    return _impl.maxpool2x2_forward(x)


def maxpool2x2_backward(g, idx):
    return _impl.maxpool2x2_backward(g, idx)
