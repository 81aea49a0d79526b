"""Build script for the optional compiled event-loop engine.

The package works without the extension (a pure-Python engine is selected at
import time); the extension is only a performance core, so any build failure
degrades to the fallback instead of failing the install.
"""

import os
import sys

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    np = None
    cythonize = None


def extensions():
    if np is None or cythonize is None:
        return []
    if not os.path.exists("src/torusdiff/_engine.pyx"):
        return []
    ext = Extension(
        "torusdiff._engine",
        ["src/torusdiff/_engine.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # -ffp-contract=off: fused multiply-adds would change leaf-rate
        # rounding and break bit-identity with the pure-Python engine.
        extra_compile_args=(["-O3", "-ffp-contract=off"]
                            if not sys.platform.startswith("win") else []),
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
