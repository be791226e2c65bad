"""Backend selection for the stepping kernels.

The compiled extension is used when it imports; setting RDCONTROL_PURE_PYTHON=1
forces the numpy reference implementation.
"""
import os

from . import _kernels_py

OK, BLOWUP, NONFINITE = _kernels_py.OK, _kernels_py.BLOWUP, _kernels_py.NONFINITE

HAS_COMPILED = False
if os.environ.get("RDCONTROL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
        HAS_COMPILED = True
    except ImportError:
        _compiled = None
else:
    _compiled = None

BACKEND = "cython" if HAS_COMPILED else "numpy"
_impl = _compiled if HAS_COMPILED else _kernels_py

integrate_linear = _impl.integrate_linear
integrate_nonlinear = _impl.integrate_nonlinear
