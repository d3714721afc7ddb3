"""Build script for the optional compiled kernels.

The package works without the extension (numpy fallbacks are selected at
import time), so a missing compiler or Cython is not fatal.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "warpdiff._kernels",
                sources=["src/warpdiff/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # -ffp-contract=off: no FMA, so results match the numpy
                # fallback bit for bit (the equivalence tests rely on it).
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
