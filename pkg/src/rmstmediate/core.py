"""Kernel backend selection.

The compiled Cython kernels are used when importable, falling back to
the pure NumPy implementations. ``RMSTMEDIATE_BACKEND=pure`` or
``RMSTMEDIATE_BACKEND=compiled`` forces a choice; asking for the
compiled backend when the extension is missing is an error.
"""

import os

from . import _core_py
from .errors import InvalidInput

_requested = os.environ.get("RMSTMEDIATE_BACKEND", "").strip().lower()

if _requested == "pure":
    _impl = _core_py
elif _requested == "compiled":
    from . import _core_cy as _impl  # ImportError here is deliberate
elif _requested in ("", "auto"):
    try:
        from . import _core_cy as _impl
    except ImportError:
        _impl = _core_py
else:
    raise InvalidInput(f"unknown RMSTMEDIATE_BACKEND value: {_requested!r}")

BACKEND = _impl.BACKEND_NAME

ppoly_eval = _impl.ppoly_eval
ppoly_eval_multi = _impl.ppoly_eval_multi
pc_level = _impl.pc_level
pc_cumhaz = _impl.pc_cumhaz
pc_rmst = _impl.pc_rmst
pc_invert = _impl.pc_invert
pc_loglik = _impl.pc_loglik
cc_cumhaz = _impl.cc_cumhaz
cc_rmst = _impl.cc_rmst
cc_invert = _impl.cc_invert
cc_rmst_batch = _impl.cc_rmst_batch
cc_invert_batch = _impl.cc_invert_batch
