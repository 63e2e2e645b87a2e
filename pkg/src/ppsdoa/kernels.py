"""Kernel backend selection.

The compiled extension is used when importable; set ``PPSDOA_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if not os.environ.get("PPSDOA_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def correlate_points(thetas, owner, phis, r, basis_t, delta, d_over_c, omega_c, M, N, backend=None):
    """Dispatch to the selected backend; see ``_kernels_py.correlate_points``."""
    use = backend or BACKEND
    thetas = np.ascontiguousarray(thetas, dtype=np.float64)
    owner = np.ascontiguousarray(owner, dtype=np.intp)
    phis = np.ascontiguousarray(phis, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.complex128)
    basis_t = np.ascontiguousarray(basis_t, dtype=np.complex128)
    if use == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled.correlate_points(
            thetas, owner, phis, r, basis_t, float(delta), float(d_over_c), float(omega_c), int(M), int(N)
        )
    return _kernels_py.correlate_points(thetas, owner, phis, r, basis_t, delta, d_over_c, omega_c, M, N)
