"""Select the CBCGD kernel implementation at import time.

The compiled extension is used when it was built; setting the environment
variable ``GRULSIF_PURE_PYTHON=1`` forces the numpy implementation.
"""

import os

from . import _cbcgd_py

try:
    from . import _cbcgd_ext
except ImportError:  # extension not built
    _cbcgd_ext = None

_BACKENDS = {"python": _cbcgd_py}
if _cbcgd_ext is not None:
    _BACKENDS["cython"] = _cbcgd_ext

if os.environ.get("GRULSIF_PURE_PYTHON", "") not in ("", "0") or _cbcgd_ext is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

kernels = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Kernel module by name (``"cython"`` or ``"python"``); default is the active one."""
    if name is None:
        return kernels
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}") from None
