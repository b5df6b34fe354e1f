"""Kernel backend selection.

The compiled extension is preferred when importable; set
``TRIPEER_FORCE_PYTHON=1`` to force the numpy fallback.  Both backends
expose the same functions (see ``tripeer._kernels_py``).
"""

import os

from tripeer import _kernels_py

try:
    from tripeer import _kernels  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:
    _kernels = None
    HAVE_COMPILED = False

_forced = os.environ.get("TRIPEER_FORCE_PYTHON", "") not in ("", "0")
ACTIVE = "python" if (_forced or not HAVE_COMPILED) else "compiled"
_impl = _kernels_py if ACTIVE == "python" else _kernels

jacobi_orthogonalize = _impl.jacobi_orthogonalize
dbscan_expand = _impl.dbscan_expand


def active_backend() -> str:
    return ACTIVE
