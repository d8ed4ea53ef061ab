"""Desk-scale lab for studying ground-truth exploitation in segmentation nets.

Importing this package pins the BLAS thread pools before numpy loads so runs
are reproducible on any machine. Override with FEATSIM_THREADS; kernels are
selected via FEATSIM_KERNELS (auto, cython, numpy).
"""

import os as _os

_threads = _os.environ.get("FEATSIM_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

from . import kernels  # noqa: E402
from .autodiff import (  # noqa: E402
    Parameter,
    Tensor,
    backward,
    no_grad,
)
from .errors import FeatsimError  # noqa: E402
from .optim import Adam  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "FeatsimError",
    "Parameter",
    "Tensor",
    "backward",
    "kernels",
    "no_grad",
    "__version__",
]
