"""Hot-kernel backend selection.

Two interchangeable backends implement the conv/pool kernels: a numpy twin
built on im2col + BLAS matmul, and an optional compiled extension with direct
vectorized loops. "auto" (the default) picks the numpy twin: it exists on
every install, so identical seeds give identical results whether or not the
extension compiled. The compiled path wins on wide shallow feature maps
(2-3x on 64x64 planes with few channels) and loses on narrow deep ones where
BLAS GEMM dominates; select it explicitly with FEATSIM_KERNELS=cython when
the workload leans that way (see benchmarks/bench_kernels.py for numbers).
The active backend is exposed as kernels.BACKEND.
"""

import os

from ..errors import ConfigError

_requested = os.environ.get("FEATSIM_KERNELS", "auto").lower()
if _requested not in ("auto", "cython", "numpy"):
    raise ConfigError(
        f"FEATSIM_KERNELS must be one of auto|cython|numpy, got {_requested!r}"
    )

BACKEND = None
if _requested == "cython":
    try:
        from ._conv_cy import (  # noqa: F401
            conv2d_backward,
            conv2d_forward,
            maxpool2_backward,
            maxpool2_forward,
        )
    except ImportError:
        raise ConfigError(
            "FEATSIM_KERNELS=cython but the compiled extension is not built"
        ) from None
    BACKEND = "cython"
else:
    from .numpy_backend import (  # noqa: F401
        conv2d_backward,
        conv2d_forward,
        maxpool2_backward,
        maxpool2_forward,
    )

    BACKEND = "numpy"


def extension_available():
    """True when the compiled backend can be imported on this install."""
    try:
        from . import _conv_cy  # noqa: F401
    except ImportError:
        return False
    return True
