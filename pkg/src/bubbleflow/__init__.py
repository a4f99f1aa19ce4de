"""Numerical laboratory for the coupled map/metric flow of degree-one maps T^2 -> S^2."""

import os as _os

__version__ = "0.1.0"

# BLAS/OpenMP pools read these once at load time, so they must be set before numpy is imported.
_threads = _os.environ.get("BUBBLEFLOW_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
