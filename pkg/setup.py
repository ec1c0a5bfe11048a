"""Build the optional compiled kernels.

The package works without the extension (a numpy fallback is selected at
import time); the extension only accelerates the hot loops.  Build errors
therefore downgrade to a warning instead of failing the install.
"""

import warnings

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    # -ffp-contract=off keeps the C arithmetic bit-compatible with the
    # numpy fallback (no FMA contraction), which the parity tests rely on.
    ext_modules = cythonize(
        [
            Extension(
                "rssifuse._kernels._speedups",
                ["src/rssifuse/_kernels/_speedups.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    warnings.warn(f"building compiled kernels failed ({exc}); using pure-python fallback")
    ext_modules = []

setup(ext_modules=ext_modules)
