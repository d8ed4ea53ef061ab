"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so the extension is marked optional: a failed compile degrades
the install instead of breaking it.
"""

import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    # -march=native lets the row loops use the widest vectors the build
    # machine has; set FEATSIM_PORTABLE=1 to build a baseline binary instead.
    args = ["-O3"]
    if os.environ.get("FEATSIM_PORTABLE", "0") != "1":
        args.append("-march=native")
    ext = Extension(
        "featsim.kernels._conv_cy",
        sources=["src/featsim/kernels/_conv_cy.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
