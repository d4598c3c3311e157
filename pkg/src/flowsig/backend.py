"""Kernel backend selection.

The tensor layer routes its hot kernels (conv1d, layer_norm, softmax,
gelu, silu, adam) through the module-level ``impl`` reference so the
compiled and pure-python backends can be swapped at runtime, which the
kernel benchmark relies on. Selection order at import:

  1. FLOWSIG_BACKEND=python|compiled environment variable, if set
  2. the compiled extension, if it built
  3. the numpy fallback

matmul is deliberately not routed here: numpy already dispatches it to
BLAS and a hand-rolled loop would only be slower.
"""

import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"python": _kernels_py}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

impl = _kernels_py


class BackendError(RuntimeError):
    pass


def available():
    return sorted(_BACKENDS)


def use(name):
    """Switch the active kernel backend; returns the previous name."""
    global impl
    if name not in _BACKENDS:
        raise BackendError(
            f"backend {name!r} not available (have {available()}); "
            "the compiled backend requires the _ckernels extension to be built"
        )
    previous = impl.NAME
    impl = _BACKENDS[name]
    return previous


def active():
    return impl.NAME


_requested = os.environ.get("FLOWSIG_BACKEND")
if _requested:
    use(_requested)
elif _ckernels is not None:
    use("compiled")
