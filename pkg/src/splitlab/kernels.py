"""Backend selection for the pairwise kernels.

The compiled extension is used when importable; setting the environment
variable ``SPLITLAB_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from splitlab import _pykernels

if os.environ.get("SPLITLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from splitlab import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

pe_angular = _impl.pe_angular
pe_euclidean = _impl.pe_euclidean
riesz_energy_grad = _impl.riesz_energy_grad
assign = _impl.assign
lloyd = _impl.lloyd


def backends():
    """Map backend name to module for every backend available here."""
    found = {"python": _pykernels}
    try:
        from splitlab import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
