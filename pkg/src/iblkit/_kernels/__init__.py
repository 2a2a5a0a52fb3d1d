"""Hot numerical kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports cleanly; setting
``IBLKIT_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("IBLKIT_PURE_PYTHON") == "1":
    _impl = _fallback
    compiled = None
else:
    try:
        from . import _core as compiled
    except ImportError:
        compiled = None
    _impl = compiled if compiled is not None else _fallback

BACKEND = _impl.BACKEND
lut_integrate = _impl.lut_integrate
composite_forward = _impl.composite_forward
composite_backward = _impl.composite_backward
van_der_corput = _impl.van_der_corput

__all__ = [
    "BACKEND",
    "compiled",
    "fallback",
    "lut_integrate",
    "composite_forward",
    "composite_backward",
    "van_der_corput",
]
