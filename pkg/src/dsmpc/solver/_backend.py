"""Backend selection: compiled iteration core with pure-NumPy fallback.

The compiled extension is preferred when importable; set the environment
variable ``DSMPC_PURE_PYTHON=1`` to force the NumPy loop (used by the
benchmark and by tests comparing the two).
"""

import os

from . import _reference

BACKEND = "numpy"
run_admm = _reference.run_admm

if not os.environ.get("DSMPC_PURE_PYTHON"):
    try:
        from . import _core

        run_admm = _core.run_admm
        BACKEND = "compiled"
    except ImportError:
        pass


def backend_name():
    return BACKEND
