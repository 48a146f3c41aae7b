"""Pick the compiled kernels when available, otherwise the NumPy fallback."""
import os

from . import _pykernels

python_impl = _pykernels

try:
    if os.environ.get("DYADIC_TB_PURE_PYTHON"):
        raise ImportError("pure-python backend forced by environment")
    from . import _ckernels as compiled_impl
except ImportError:
    compiled_impl = None

impl = compiled_impl if compiled_impl is not None else python_impl
BACKEND = "cython" if compiled_impl is not None else "python"
